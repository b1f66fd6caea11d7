//! Local-level interactive-selective fusion.
//!
//! A pyramid of `L` layers runs windowed SA and CMA blocks in parallel for
//! both modalities, fuses them through channel gates, and applies a dilated
//! residual block. Every layer's output is retained. Selective integration
//! then scores each (snippet, layer) pair, modulates those scores with a
//! single-head, unit-width cross-modal attention across the layer axis, and
//! sums the layers with the resulting weights.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::attention::{
    cma_block, dilated_residual_block, gated_parallel_fusion, sa_block, BlockParams,
    DilatedResidualParams, GateParams, Window,
};
use crate::autodiff::{Tape, Var};
use crate::error::{dim_err, Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::tensor::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Audio,
    Visual,
}

impl Modality {
    pub fn other(self) -> Modality {
        match self {
            Modality::Audio => Modality::Visual,
            Modality::Visual => Modality::Audio,
        }
    }

    fn idx(self) -> usize {
        match self {
            Modality::Audio => 0,
            Modality::Visual => 1,
        }
    }

    fn tag(self) -> &'static str {
        match self {
            Modality::Audio => "audio",
            Modality::Visual => "visual",
        }
    }
}

/// Per-snippet features of one modality, `s × C1`, living on a tape.
#[derive(Clone, Copy, Debug)]
pub struct ModalityFeatures {
    pub modality: Modality,
    pub features: Var,
}

/// The `L` retained pyramid outputs of one modality, shallow to deep.
#[derive(Clone, Debug)]
pub struct PyramidStack {
    pub modality: Modality,
    pub layers: Vec<Var>,
}

/// Dilation of pyramid layer `i` (0-based): 1, 2, 4, ...
pub fn layer_dilation(i: usize) -> usize {
    1 << i
}

#[derive(Clone, Debug)]
pub struct PyramidLayerParams {
    pub sa: [BlockParams; 2],
    /// One CMA block shared by the audio→visual and visual→audio directions.
    pub cma: BlockParams,
    pub gate: [GateParams; 2],
    pub temporal: [DilatedResidualParams; 2],
    pub dilation: usize,
}

impl PyramidLayerParams {
    pub fn new<T: Scalar, R: Rng>(
        ps: &mut ParamStore<T>,
        prefix: &str,
        dim: usize,
        n_heads: usize,
        dilation: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let per_modality = |what: &str, ps: &mut ParamStore<T>, rng: &mut R| -> Result<[BlockParams; 2]> {
            Ok([
                BlockParams::new(ps, &format!("{prefix}.{what}_audio"), dim, n_heads, rng)?,
                BlockParams::new(ps, &format!("{prefix}.{what}_visual"), dim, n_heads, rng)?,
            ])
        };
        let sa = per_modality("sa", ps, rng)?;
        let cma = BlockParams::new(ps, &format!("{prefix}.cma"), dim, n_heads, rng)?;
        let gate = [
            GateParams::new(ps, &format!("{prefix}.gate_audio"), dim, rng)?,
            GateParams::new(ps, &format!("{prefix}.gate_visual"), dim, rng)?,
        ];
        let temporal = [
            DilatedResidualParams::new(ps, &format!("{prefix}.temporal_audio"), dim, rng)?,
            DilatedResidualParams::new(ps, &format!("{prefix}.temporal_visual"), dim, rng)?,
        ];
        Ok(PyramidLayerParams {
            sa,
            cma,
            gate,
            temporal,
            dilation,
        })
    }

    /// One pyramid layer for modality `m`.
    pub fn forward_modality<T: Scalar>(
        &self,
        tape: &mut Tape<'_, T>,
        m: Modality,
        x_m: Var,
        x_other: Var,
        window: Window,
    ) -> Result<Var> {
        let f_s = sa_block(tape, x_m, window, &self.sa[m.idx()])?;
        let f_c = cma_block(tape, x_m, x_other, window, &self.cma)?;
        let fused = gated_parallel_fusion(tape, f_s, f_c, &self.gate[m.idx()])?;
        dilated_residual_block(tape, fused, self.dilation, &self.temporal[m.idx()])
    }
}

fn check_pair<T: Scalar>(tape: &Tape<'_, T>, a: &ModalityFeatures, v: &ModalityFeatures) -> Result<()> {
    if a.modality != Modality::Audio || v.modality != Modality::Visual {
        return Err(Error::Contract("expected (audio, visual) feature pair".into()));
    }
    let (sa, sv) = (tape.shape(a.features), tape.shape(v.features));
    if sa.len() != 2 || sa != sv || sa[0] == 0 {
        return Err(dim_err!("modalities must share s x C1, got {sa:?} and {sv:?}"));
    }
    Ok(())
}

/// Run `layers.len()` pyramid layers and retain every layer's output.
pub fn pyramid_forward<T: Scalar>(
    tape: &mut Tape<'_, T>,
    f_a: &ModalityFeatures,
    f_v: &ModalityFeatures,
    window: Window,
    layers: &[PyramidLayerParams],
) -> Result<(PyramidStack, PyramidStack)> {
    check_pair(tape, f_a, f_v)?;
    if layers.is_empty() {
        return Err(Error::Config("pyramid needs at least one layer".into()));
    }
    let (mut a, mut v) = (f_a.features, f_v.features);
    let mut stack_a = Vec::with_capacity(layers.len());
    let mut stack_v = Vec::with_capacity(layers.len());
    for layer in layers {
        let next_a = layer.forward_modality(tape, Modality::Audio, a, v, window)?;
        let next_v = layer.forward_modality(tape, Modality::Visual, v, a, window)?;
        a = next_a;
        v = next_v;
        stack_a.push(a);
        stack_v.push(v);
    }
    Ok((
        PyramidStack {
            modality: Modality::Audio,
            layers: stack_a,
        },
        PyramidStack {
            modality: Modality::Visual,
            layers: stack_v,
        },
    ))
}

/// Projection `C1 → 1` (plus bias) producing one score per snippet and
/// pyramid layer. Either one projection per layer or one shared by all.
#[derive(Clone, Debug)]
pub struct LayerScoring {
    pub w: Vec<ParamId>,
    pub b: Vec<ParamId>,
}

impl LayerScoring {
    fn for_layer(&self, l: usize) -> (ParamId, ParamId) {
        if self.w.len() == 1 {
            (self.w[0], self.b[0])
        } else {
            (self.w[l], self.b[l])
        }
    }
}

#[derive(Clone, Debug)]
pub struct SelectiveIntegrationParams {
    pub scoring: [LayerScoring; 2],
    /// Unit-width, single-head attention projections over the layer axis,
    /// shared by both directions.
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
}

impl SelectiveIntegrationParams {
    pub fn new<T: Scalar, R: Rng>(
        ps: &mut ParamStore<T>,
        prefix: &str,
        dim: usize,
        depth: usize,
        shared_scoring: bool,
        rng: &mut R,
    ) -> Result<Self> {
        let n = if shared_scoring { 1 } else { depth };
        let scoring = |m: Modality, ps: &mut ParamStore<T>, rng: &mut R| -> Result<LayerScoring> {
            let mut w = Vec::with_capacity(n);
            let mut b = Vec::with_capacity(n);
            for l in 0..n {
                w.push(ps.add_xavier(format!("{prefix}.score_{}.w{l}", m.tag()), dim, 1, rng)?);
                b.push(ps.add_zeros(format!("{prefix}.score_{}.b{l}", m.tag()), vec![1])?);
            }
            Ok(LayerScoring { w, b })
        };
        let scoring = [
            scoring(Modality::Audio, ps, rng)?,
            scoring(Modality::Visual, ps, rng)?,
        ];
        Ok(SelectiveIntegrationParams {
            scoring,
            wq: ps.add_xavier(format!("{prefix}.wq"), 1, 1, rng)?,
            wk: ps.add_xavier(format!("{prefix}.wk"), 1, 1, rng)?,
            wv: ps.add_xavier(format!("{prefix}.wv"), 1, 1, rng)?,
        })
    }
}

fn stack_shape<T: Scalar>(tape: &Tape<'_, T>, p: &PyramidStack) -> Result<(usize, usize)> {
    let first = *p
        .layers
        .first()
        .ok_or_else(|| Error::Contract("empty pyramid stack".into()))?;
    let shape = tape.shape(first).to_vec();
    if shape.len() != 2 || p.layers.iter().any(|&l| tape.shape(l) != shape.as_slice()) {
        return Err(dim_err!("pyramid layers must all be s x C1"));
    }
    Ok((shape[0], shape[1]))
}

/// Sigmoid layer scores `E¹`, shape `s × L`; every entry lies in `(0, 1)`.
pub fn layer_scores<T: Scalar>(
    tape: &mut Tape<'_, T>,
    stack: &PyramidStack,
    p: &SelectiveIntegrationParams,
) -> Result<Var> {
    stack_shape(tape, stack)?;
    let scoring = &p.scoring[stack.modality.idx()];
    if scoring.w.len() != 1 && scoring.w.len() != stack.layers.len() {
        return Err(Error::Contract(format!(
            "scoring has {} projections for a depth-{} stack",
            scoring.w.len(),
            stack.layers.len()
        )));
    }
    let mut cols = Vec::with_capacity(stack.layers.len());
    for (l, &layer) in stack.layers.iter().enumerate() {
        let (w, b) = scoring.for_layer(l);
        let (w, b) = (tape.param(w)?, tape.param(b)?);
        let z = tape.linear(layer, w, Some(b))?;
        cols.push(tape.sigmoid(z)?);
    }
    if cols.len() == 1 {
        Ok(cols[0])
    } else {
        tape.concat(&cols, 1)
    }
}

/// Cross-modal modulation of layer scores: for each snippet, queries come
/// from `e1_m` and keys/values from `e1_other`, attending across layers.
/// Returns `s × L` weights.
pub fn modulate_scores<T: Scalar>(
    tape: &mut Tape<'_, T>,
    e1_m: Var,
    e1_other: Var,
    p: &SelectiveIntegrationParams,
) -> Result<Var> {
    let shape = tape.shape(e1_m).to_vec();
    if shape.len() != 2 || tape.shape(e1_other) != shape.as_slice() {
        return Err(dim_err!("layer scores must share shape s x L"));
    }
    let (s, depth) = (shape[0], shape[1]);
    let project = |tape: &mut Tape<'_, T>, x: Var, w: ParamId| -> Result<Var> {
        let w = tape.param(w)?;
        let col = tape.reshape(x, vec![s * depth, 1])?;
        let y = tape.matmul(col, w)?;
        tape.reshape(y, vec![s, depth, 1])
    };
    let q = project(tape, e1_m, p.wq)?;
    let k = project(tape, e1_other, p.wk)?;
    let v = project(tape, e1_other, p.wv)?;
    let kt = tape.swap_last2(k)?;
    // d_k = 1, so the 1/sqrt(d_k) scale is the identity.
    let scores = tape.bmatmul(q, kt)?;
    let attn = tape.softmax(scores, 2)?;
    let out = tape.bmatmul(attn, v)?;
    tape.reshape(out, vec![s, depth])
}

/// `Σ_l weights[:, l] ⊙ layers[l]` per snippet; `weights` is `s × L`.
pub fn weighted_layer_sum<T: Scalar>(
    tape: &mut Tape<'_, T>,
    stack: &PyramidStack,
    weights: Var,
) -> Result<Var> {
    let (s, c) = stack_shape(tape, stack)?;
    let depth = stack.layers.len();
    if tape.shape(weights) != [s, depth] {
        return Err(dim_err!(
            "layer weights {:?} do not match s={s}, L={depth}",
            tape.shape(weights)
        ));
    }
    let stacked = tape.stack(&stack.layers, 1)?;
    let w = tape.reshape(weights, vec![s, 1, depth])?;
    let summed = tape.bmatmul(w, stacked)?;
    tape.reshape(summed, vec![s, c])
}

/// `E²_m`: selectively integrated features of modality `p_m.modality`.
pub fn selective_integration<T: Scalar>(
    tape: &mut Tape<'_, T>,
    p_m: &PyramidStack,
    p_other: &PyramidStack,
    params: &SelectiveIntegrationParams,
) -> Result<Var> {
    if p_m.layers.len() != p_other.layers.len() {
        return Err(Error::Contract(format!(
            "pyramid depths differ: {} vs {}",
            p_m.layers.len(),
            p_other.layers.len()
        )));
    }
    if stack_shape(tape, p_m)? != stack_shape(tape, p_other)? {
        return Err(dim_err!("pyramid stacks have different layer shapes"));
    }
    let e1_m = layer_scores(tape, p_m, params)?;
    let e1_other = layer_scores(tape, p_other, params)?;
    let w = modulate_scores(tape, e1_m, e1_other, params)?;
    weighted_layer_sum(tape, p_m, w)
}

/// All LISF parameters for one model.
#[derive(Clone, Debug)]
pub struct LisfParams {
    pub layers: Vec<PyramidLayerParams>,
    pub selective: SelectiveIntegrationParams,
    pub window: Window,
}

impl LisfParams {
    pub fn new<T: Scalar, R: Rng>(
        ps: &mut ParamStore<T>,
        dim: usize,
        n_heads: usize,
        depth: usize,
        window: Window,
        shared_scoring: bool,
        rng: &mut R,
    ) -> Result<Self> {
        if depth == 0 {
            return Err(Error::Config("pyramid depth must be at least 1".into()));
        }
        let layers = (0..depth)
            .map(|i| {
                PyramidLayerParams::new(ps, &format!("lisf.layer{i}"), dim, n_heads, layer_dilation(i), rng)
            })
            .collect::<Result<_>>()?;
        let selective =
            SelectiveIntegrationParams::new(ps, "lisf.select", dim, depth, shared_scoring, rng)?;
        Ok(LisfParams {
            layers,
            selective,
            window,
        })
    }

    /// `(E²_a, E²_v)`.
    pub fn forward<T: Scalar>(
        &self,
        tape: &mut Tape<'_, T>,
        f_a: &ModalityFeatures,
        f_v: &ModalityFeatures,
    ) -> Result<(Var, Var)> {
        let (pa, pv) = pyramid_forward(tape, f_a, f_v, self.window, &self.layers)?;
        let e2_a = selective_integration(tape, &pa, &pv, &self.selective)?;
        let e2_v = selective_integration(tape, &pv, &pa, &self.selective)?;
        Ok((e2_a, e2_v))
    }
}
