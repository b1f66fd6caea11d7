//! The standard battery: every differentiable tape op, then each composite
//! module, all at 64-bit with seeded random inputs and parameters.
//!
//! Non-scalar outputs are reduced with a fixed random projection
//! `Σ out ⊙ R`; a plain sum would hide errors in ops whose outputs sum to a
//! constant (softmax, layer norm).

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{check, CheckConfig, CheckReport};
use crate::attention::{
    cma_block, dilated_residual_block, gated_parallel_fusion, sa_block, temporal_taps, BlockParams,
    DilatedResidualParams, GateParams, Window,
};
use crate::autodiff::{OpKind, Tape, Var, GATHER_ZERO};
use crate::error::Result;
use crate::features::encoder::{AudioEncoder, VisualEncoder};
use crate::glcf::{fuse_head, global_complementary_fusion, FusionStrategy, GlobalFusionParams, HeadParams};
use crate::lisf::{LisfParams, Modality, ModalityFeatures};
use crate::loss::{multitask_loss, PolarityMap};
use crate::params::ParamStore;
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct SuiteConfig {
    pub seed: u64,
    /// Snippet count.
    pub s: usize,
    /// Feature width.
    pub c1: usize,
    pub n_heads: usize,
    pub layers: usize,
    pub window: usize,
    pub check: CheckConfig,
    /// Corrupt this op's backward rule (self-test of the checker).
    pub fault: Option<OpKind>,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        SuiteConfig {
            seed: 0,
            s: 4,
            c1: 8,
            n_heads: 2,
            layers: 2,
            window: 1,
            check: CheckConfig::default(),
            fault: None,
        }
    }
}

/// Uniform in `±[0.1, 1]`, keeping entries clear of the ReLU kink.
fn rand_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m: f64 = rng.random_range(0.1..1.0);
            if rng.random_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

fn project(tape: &mut Tape<'_, f64>, out: Var, r: &Tensor<f64>) -> Result<Var> {
    let rv = tape.constant(r.clone().reshape(tape.shape(out).to_vec())?);
    let m = tape.mul(out, rv)?;
    tape.sum_all(m)
}

struct Runner {
    cfg: SuiteConfig,
    rng: ChaCha8Rng,
    reports: Vec<CheckReport>,
}

impl Runner {
    /// Check `f`, reducing its output with a fresh random projection of
    /// `out_len` entries.
    fn unit<F>(&mut self, name: &str, inputs: Vec<Tensor<f64>>, params: &ParamStore<f64>, out_len: usize, f: F) -> Result<()>
    where
        F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
    {
        let r = rand_tensor(&[out_len], &mut self.rng);
        let report = check(name, &inputs, params, self.cfg.check, self.cfg.fault, |tape, xs| {
            let out = f(tape, xs)?;
            if tape.shape(out) == [1] && out_len == 1 {
                return Ok(out);
            }
            project(tape, out, &r)
        })?;
        self.reports.push(report);
        Ok(())
    }

    fn rand(&mut self, shape: &[usize]) -> Tensor<f64> {
        rand_tensor(shape, &mut self.rng)
    }
}

/// Run the whole battery and return one report per unit, in a fixed order.
pub fn standard_suite(cfg: &SuiteConfig) -> Result<Vec<CheckReport>> {
    let mut r = Runner {
        cfg: cfg.clone(),
        rng: ChaCha8Rng::seed_from_u64(cfg.seed),
        reports: Vec::new(),
    };
    ops(&mut r)?;
    composites(&mut r)?;
    Ok(r.reports)
}

fn ops(r: &mut Runner) -> Result<()> {
    let none = ParamStore::<f64>::new();
    let (a, b) = (r.rand(&[3, 4]), r.rand(&[4, 2]));
    r.unit("op/matmul", vec![a, b], &none, 6, |t, x| t.matmul(x[0], x[1]))?;
    let (a, b) = (r.rand(&[2, 3, 4]), r.rand(&[2, 4, 2]));
    r.unit("op/bmatmul", vec![a, b], &none, 12, |t, x| t.bmatmul(x[0], x[1]))?;
    let a = r.rand(&[3, 4]);
    r.unit("op/transpose", vec![a], &none, 12, |t, x| t.transpose(x[0]))?;
    let a = r.rand(&[2, 3, 4]);
    r.unit("op/swap_last2", vec![a], &none, 24, |t, x| t.swap_last2(x[0]))?;
    let (a, b) = (r.rand(&[3, 4]), r.rand(&[3, 4]));
    r.unit("op/add", vec![a.clone(), b.clone()], &none, 12, |t, x| t.add(x[0], x[1]))?;
    r.unit("op/sub", vec![a.clone(), b.clone()], &none, 12, |t, x| t.sub(x[0], x[1]))?;
    r.unit("op/mul", vec![a.clone(), b], &none, 12, |t, x| t.mul(x[0], x[1]))?;
    let row = r.rand(&[4]);
    r.unit("op/add_row", vec![a.clone(), row.clone()], &none, 12, |t, x| t.add_row(x[0], x[1]))?;
    r.unit("op/mul_row", vec![a.clone(), row], &none, 12, |t, x| t.mul_row(x[0], x[1]))?;
    r.unit("op/scale", vec![a.clone()], &none, 12, |t, x| t.scale(x[0], -1.7))?;
    r.unit("op/sigmoid", vec![a.clone()], &none, 12, |t, x| t.sigmoid(x[0]))?;
    r.unit("op/relu", vec![a.clone()], &none, 12, |t, x| t.relu(x[0]))?;
    r.unit("op/softmax", vec![a.clone()], &none, 12, |t, x| t.softmax(x[0], 1))?;
    r.unit("op/softmax_axis0", vec![a.clone()], &none, 12, |t, x| t.softmax(x[0], 0))?;
    let mask: Vec<f64> = (0..12)
        .map(|i| if (i / 4 + i % 4) % 3 == 0 { f64::NEG_INFINITY } else { 0.0 })
        .collect();
    let mask = Tensor::new(vec![3, 4], mask)?;
    r.unit("op/softmax_masked", vec![a.clone()], &none, 12, move |t, x| {
        let m = t.constant(mask.clone());
        let y = t.add(x[0], m)?;
        t.softmax(y, 1)
    })?;
    r.unit("op/log_softmax", vec![a.clone()], &none, 12, |t, x| t.log_softmax(x[0], 1))?;
    let b = r.rand(&[3, 2]);
    r.unit("op/concat", vec![a.clone(), b], &none, 18, |t, x| t.concat(&[x[0], x[1]], 1))?;
    let b = r.rand(&[3, 4]);
    r.unit("op/stack", vec![a.clone(), b], &none, 24, |t, x| t.stack(&[x[0], x[1]], 1))?;
    let c = r.rand(&[2, 3, 4]);
    r.unit("op/mean_axis", vec![c.clone()], &none, 8, |t, x| t.mean_axis(x[0], 1))?;
    r.unit("op/sum_all", vec![c.clone()], &none, 1, |t, x| t.sum_all(x[0]))?;
    r.unit("op/layer_norm", vec![a.clone()], &none, 12, |t, x| t.layer_norm(x[0], 1e-5))?;
    r.unit("op/reshape", vec![c.clone()], &none, 24, |t, x| t.reshape(x[0], vec![6, 4]))?;
    r.unit("op/slice", vec![c], &none, 12, |t, x| t.slice(x[0], 2, 1, 2))?;
    let idx: Arc<[u32]> = temporal_taps(3, 4, 1);
    r.unit("op/gather", vec![a.clone()], &none, 36, move |t, x| t.gather(x[0], idx.clone(), vec![3, 12]))?;
    // repeated indices accumulate
    let idx: Arc<[u32]> = vec![0, 0, 5, GATHER_ZERO, 11, 5].into();
    r.unit("op/gather_repeat", vec![a], &none, 6, move |t, x| t.gather(x[0], idx.clone(), vec![6]))?;
    Ok(())
}

fn composites(r: &mut Runner) -> Result<()> {
    let c = r.cfg.clone();
    let (s, dim, heads) = (c.s, c.c1, c.n_heads);
    let window = Window::band(c.window);

    let mut ps = ParamStore::new();
    let block = BlockParams::new(&mut ps, "sa", dim, heads, &mut r.rng)?;
    let x = r.rand(&[s, dim]);
    r.unit("block/sa", vec![x], &ps, s * dim, |t, x| sa_block(t, x[0], window, &block))?;

    let mut ps = ParamStore::new();
    let block = BlockParams::new(&mut ps, "cma", dim, heads, &mut r.rng)?;
    let (x, y) = (r.rand(&[s, dim]), r.rand(&[s, dim]));
    r.unit("block/cma", vec![x, y], &ps, s * dim, |t, x| cma_block(t, x[0], x[1], window, &block))?;

    let mut ps = ParamStore::new();
    let gate = GateParams::new(&mut ps, "gate", dim, &mut r.rng)?;
    let (x, y) = (r.rand(&[s, dim]), r.rand(&[s, dim]));
    r.unit("block/gated_fusion", vec![x, y], &ps, s * dim, |t, x| {
        gated_parallel_fusion(t, x[0], x[1], &gate)
    })?;

    for dilation in [1, 2] {
        let mut ps = ParamStore::new();
        let p = DilatedResidualParams::new(&mut ps, "temporal", dim, &mut r.rng)?;
        let x = r.rand(&[s, dim]);
        r.unit(&format!("block/dilated_residual_d{dilation}"), vec![x], &ps, s * dim, |t, x| {
            dilated_residual_block(t, x[0], dilation, &p)
        })?;
    }

    let mut ps = ParamStore::new();
    let lisf = LisfParams::new(&mut ps, dim, heads, c.layers, window, false, &mut r.rng)?;
    let (a, v) = (r.rand(&[s, dim]), r.rand(&[s, dim]));
    r.unit("module/lisf", vec![a, v], &ps, 2 * s * dim, |t, x| {
        let fa = ModalityFeatures {
            modality: Modality::Audio,
            features: x[0],
        };
        let fv = ModalityFeatures {
            modality: Modality::Visual,
            features: x[1],
        };
        let (ea, ev) = lisf.forward(t, &fa, &fv)?;
        t.concat(&[ea, ev], 1)
    })?;

    for strategy in FusionStrategy::ALL {
        let mut ps = ParamStore::new();
        let glcf = GlobalFusionParams::new(&mut ps, dim, heads, &mut r.rng)?;
        let head = HeadParams::new(&mut ps, strategy, dim, 6, &mut r.rng)?;
        let (a, v) = (r.rand(&[s, dim]), r.rand(&[s, dim]));
        r.unit(&format!("module/glcf+{strategy}"), vec![a, v], &ps, 6, |t, x| {
            let (ea, ev) = global_complementary_fusion(t, x[0], x[1], &glcf)?;
            fuse_head(t, ea, ev, &head)
        })?;
    }

    let mut ps = ParamStore::new();
    let enc = VisualEncoder::new(&mut ps, (2, 3), dim, &mut r.rng)?;
    let x = r.rand(&[2, 1, 5, 4, 3]);
    r.unit("module/visual_encoder", vec![x], &ps, 2 * dim, |t, x| enc.forward(t, x[0]))?;

    let mut ps = ParamStore::new();
    let enc = AudioEncoder::new(&mut ps, 2, dim, &mut r.rng)?;
    let x = r.rand(&[2, 4, 3]);
    r.unit("module/audio_encoder", vec![x], &ps, 2 * dim, |t, x| enc.forward(t, x[0]))?;

    let pm = PolarityMap::default();
    let labels = [0usize, 3, 2, 5];
    let logits: Vec<Tensor<f64>> = (0..3).map(|_| r.rand(&[4, 6])).collect();
    r.unit("loss/ep_ce_multitask", logits, &ParamStore::new(), 1, |t, x| {
        multitask_loss(t, x[0], x[1], x[2], &labels, &pm, [1.0, 0.5, 0.25])
    })?;
    Ok(())
}
