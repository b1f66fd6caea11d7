//! Global-level complementary fusion and the classification head.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::attention::{AttentionParams, Window};
use crate::autodiff::{Tape, Var};
use crate::error::{dim_err, Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::tensor::Scalar;

/// How the two pooled modality vectors are combined before classification.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FusionStrategy {
    MidConcat,
    Gated,
    EWMultiply,
    Neural,
    Sum,
}

impl FusionStrategy {
    pub const ALL: [FusionStrategy; 5] = [
        FusionStrategy::MidConcat,
        FusionStrategy::Gated,
        FusionStrategy::EWMultiply,
        FusionStrategy::Neural,
        FusionStrategy::Sum,
    ];

    /// Number of scalar parameters in the head for pooled width `c2`.
    pub fn head_param_count(self, c2: usize, num_classes: usize) -> usize {
        let linear = |i: usize, o: usize| i * o + o;
        match self {
            FusionStrategy::MidConcat => linear(2 * c2, num_classes),
            FusionStrategy::Sum | FusionStrategy::EWMultiply => linear(c2, num_classes),
            FusionStrategy::Gated => linear(2 * c2, 1) + linear(c2, num_classes),
            FusionStrategy::Neural => linear(2 * c2, c2) + linear(c2, num_classes),
        }
    }
}

impl fmt::Display for FusionStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            FusionStrategy::MidConcat => "MidConcat",
            FusionStrategy::Gated => "Gated",
            FusionStrategy::EWMultiply => "EWMultiply",
            FusionStrategy::Neural => "Neural",
            FusionStrategy::Sum => "Sum",
        };
        f.write_str(s)
    }
}

impl FromStr for FusionStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key: String = s
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .collect::<String>()
            .to_ascii_lowercase();
        match key.as_str() {
            "midconcat" | "concat" => Ok(FusionStrategy::MidConcat),
            "gated" => Ok(FusionStrategy::Gated),
            "ewmultiply" | "multiply" => Ok(FusionStrategy::EWMultiply),
            "neural" => Ok(FusionStrategy::Neural),
            "sum" => Ok(FusionStrategy::Sum),
            _ => Err(Error::Config(format!("unknown fusion strategy `{s}`"))),
        }
    }
}

/// Classification head parameters; the variant fixes the strategy.
#[derive(Clone, Debug)]
pub enum HeadParams {
    MidConcat { w: ParamId, b: ParamId },
    Sum { w: ParamId, b: ParamId },
    EWMultiply { w: ParamId, b: ParamId },
    /// Scalar gate from the concatenation, convex mix, then a linear layer.
    Gated { wg: ParamId, bg: ParamId, w: ParamId, b: ParamId },
    /// One hidden ReLU layer over the concatenation.
    Neural { w1: ParamId, b1: ParamId, w2: ParamId, b2: ParamId },
}

impl HeadParams {
    pub fn new<T: Scalar, R: Rng>(
        ps: &mut ParamStore<T>,
        strategy: FusionStrategy,
        c2: usize,
        num_classes: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if num_classes == 0 {
            return Err(Error::Config("num_classes must be positive".into()));
        }
        let p = "head";
        Ok(match strategy {
            FusionStrategy::MidConcat => HeadParams::MidConcat {
                w: ps.add_xavier(format!("{p}.w"), 2 * c2, num_classes, rng)?,
                b: ps.add_zeros(format!("{p}.b"), vec![num_classes])?,
            },
            FusionStrategy::Sum => HeadParams::Sum {
                w: ps.add_xavier(format!("{p}.w"), c2, num_classes, rng)?,
                b: ps.add_zeros(format!("{p}.b"), vec![num_classes])?,
            },
            FusionStrategy::EWMultiply => HeadParams::EWMultiply {
                w: ps.add_xavier(format!("{p}.w"), c2, num_classes, rng)?,
                b: ps.add_zeros(format!("{p}.b"), vec![num_classes])?,
            },
            FusionStrategy::Gated => HeadParams::Gated {
                wg: ps.add_xavier(format!("{p}.gate_w"), 2 * c2, 1, rng)?,
                bg: ps.add_zeros(format!("{p}.gate_b"), vec![1])?,
                w: ps.add_xavier(format!("{p}.w"), c2, num_classes, rng)?,
                b: ps.add_zeros(format!("{p}.b"), vec![num_classes])?,
            },
            FusionStrategy::Neural => HeadParams::Neural {
                w1: ps.add_xavier(format!("{p}.w1"), 2 * c2, c2, rng)?,
                b1: ps.add_zeros(format!("{p}.b1"), vec![c2])?,
                w2: ps.add_xavier(format!("{p}.w2"), c2, num_classes, rng)?,
                b2: ps.add_zeros(format!("{p}.b2"), vec![num_classes])?,
            },
        })
    }

    pub fn strategy(&self) -> FusionStrategy {
        match self {
            HeadParams::MidConcat { .. } => FusionStrategy::MidConcat,
            HeadParams::Sum { .. } => FusionStrategy::Sum,
            HeadParams::EWMultiply { .. } => FusionStrategy::EWMultiply,
            HeadParams::Gated { .. } => FusionStrategy::Gated,
            HeadParams::Neural { .. } => FusionStrategy::Neural,
        }
    }

    pub fn ids(&self) -> Vec<ParamId> {
        match *self {
            HeadParams::MidConcat { w, b }
            | HeadParams::Sum { w, b }
            | HeadParams::EWMultiply { w, b } => vec![w, b],
            HeadParams::Gated { wg, bg, w, b } => vec![wg, bg, w, b],
            HeadParams::Neural { w1, b1, w2, b2 } => vec![w1, b1, w2, b2],
        }
    }
}

/// Unrestricted multi-head CMA (its output projection plays the role of
/// `W_2`) and the `C1 → C1` projection `W_g, b_g`. Shared by both modalities.
#[derive(Clone, Debug)]
pub struct GlobalFusionParams {
    pub cma: AttentionParams,
    pub wg: ParamId,
    pub bg: ParamId,
}

impl GlobalFusionParams {
    pub fn new<T: Scalar, R: Rng>(
        ps: &mut ParamStore<T>,
        dim: usize,
        n_heads: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(GlobalFusionParams {
            cma: AttentionParams::new(ps, "glcf.cma", dim, n_heads, rng)?,
            wg: ps.add_xavier("glcf.wg", dim, dim, rng)?,
            bg: ps.add_zeros("glcf.bg", vec![dim])?,
        })
    }
}

/// `E³_m = MHA(E²_m, E²_m̄)` with no window, then
/// `E⁴_m = mean_snippets(ReLU(E³_m·W_g + b_g + E²_m))`.
fn pooled_modality<T: Scalar>(
    tape: &mut Tape<'_, T>,
    e2_m: Var,
    e2_other: Var,
    p: &GlobalFusionParams,
) -> Result<Var> {
    let (e3, _) = p.cma.forward(tape, e2_m, e2_other, Window::Full)?;
    let (wg, bg) = (tape.param(p.wg)?, tape.param(p.bg)?);
    let proj = tape.linear(e3, wg, Some(bg))?;
    let res = tape.add(proj, e2_m)?;
    let act = tape.relu(res)?;
    tape.mean_axis(act, 0)
}

/// `(E⁴_a, E⁴_v)`, each a length-`C2` vector.
pub fn global_complementary_fusion<T: Scalar>(
    tape: &mut Tape<'_, T>,
    e2_a: Var,
    e2_v: Var,
    p: &GlobalFusionParams,
) -> Result<(Var, Var)> {
    let shape = tape.shape(e2_a).to_vec();
    if shape.len() != 2 || tape.shape(e2_v) != shape.as_slice() || shape[1] != p.cma.dim {
        return Err(dim_err!(
            "global fusion needs two s x {} inputs, got {:?} and {:?}",
            p.cma.dim,
            shape,
            tape.shape(e2_v)
        ));
    }
    let e4_a = pooled_modality(tape, e2_a, e2_v, p)?;
    let e4_v = pooled_modality(tape, e2_v, e2_a, p)?;
    Ok((e4_a, e4_v))
}

fn as_row<T: Scalar>(tape: &mut Tape<'_, T>, v: Var) -> Result<Var> {
    let n: usize = tape.shape(v).iter().product();
    tape.reshape(v, vec![1, n])
}

fn dense<T: Scalar>(tape: &mut Tape<'_, T>, x: Var, w: ParamId, b: ParamId) -> Result<Var> {
    let (w, b) = (tape.param(w)?, tape.param(b)?);
    tape.linear(x, w, Some(b))
}

/// Logits of length `num_classes` from the two pooled vectors.
pub fn fuse_head<T: Scalar>(
    tape: &mut Tape<'_, T>,
    e4_a: Var,
    e4_v: Var,
    head: &HeadParams,
) -> Result<Var> {
    if tape.shape(e4_a) != tape.shape(e4_v) {
        return Err(dim_err!(
            "pooled vectors differ: {:?} vs {:?}",
            tape.shape(e4_a),
            tape.shape(e4_v)
        ));
    }
    let a = as_row(tape, e4_a)?;
    let v = as_row(tape, e4_v)?;
    let logits = match *head {
        HeadParams::MidConcat { w, b } => {
            let cat = tape.concat(&[a, v], 1)?;
            dense(tape, cat, w, b)?
        }
        HeadParams::Sum { w, b } => {
            let s = tape.add(a, v)?;
            dense(tape, s, w, b)?
        }
        HeadParams::EWMultiply { w, b } => {
            let m = tape.mul(a, v)?;
            dense(tape, m, w, b)?
        }
        HeadParams::Gated { wg, bg, w, b } => {
            let cat = tape.concat(&[a, v], 1)?;
            let z = dense(tape, cat, wg, bg)?;
            let g = tape.sigmoid(z)?;
            // v + g·(a − v), with the 1×1 gate broadcast through a matmul
            let diff = tape.sub(a, v)?;
            let scaled = tape.matmul(g, diff)?;
            let mix = tape.add(v, scaled)?;
            dense(tape, mix, w, b)?
        }
        HeadParams::Neural { w1, b1, w2, b2 } => {
            let cat = tape.concat(&[a, v], 1)?;
            let h = dense(tape, cat, w1, b1)?;
            let h = tape.relu(h)?;
            dense(tape, h, w2, b2)?
        }
    };
    let n = tape.shape(logits)[1];
    tape.reshape(logits, vec![n])
}
