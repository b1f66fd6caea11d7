//! Windowed self-attention (SA) and cross-modal attention (CMA) blocks,
//! channel-gated parallel fusion, and the dilated residual temporal block.
//!
//! All sequence tensors are `s × C1`: one row per snippet.

use std::sync::Arc;

use rand::Rng;

use crate::autodiff::{Tape, Var, GATHER_ZERO};
use crate::error::{dim_err, Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::tensor::{Scalar, Tensor};

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Half-width `d` of a snippet interaction window: position `t` may attend
/// to `max(0, t-d) ..= min(s-1, t+d)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct WindowSpec {
    pub half_width: usize,
}

impl WindowSpec {
    pub fn new(half_width: usize) -> Self {
        WindowSpec { half_width }
    }

    pub fn allows(&self, t: usize, j: usize) -> bool {
        t.abs_diff(j) <= self.half_width
    }

    /// Row-major `s × s` permission matrix.
    pub fn mask(&self, s: usize) -> Vec<bool> {
        (0..s * s).map(|i| self.allows(i / s, i % s)).collect()
    }
}

/// Attention scope: a fixed band, or unrestricted.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Window {
    Band(WindowSpec),
    Full,
}

impl Window {
    pub fn band(d: usize) -> Self {
        Window::Band(WindowSpec::new(d))
    }

    fn mask(&self, s: usize) -> Option<Vec<bool>> {
        match self {
            Window::Band(w) => Some(w.mask(s)),
            Window::Full => None,
        }
    }
}

/// Output of one attention head.
#[derive(Clone, Copy, Debug)]
pub struct AttOutput {
    pub out: Var,
    /// Row-stochastic `s_q × s_k` weight matrix.
    pub weights: Var,
}

/// `softmax(q kᵀ / √d_k + bias) v`, where `bias` is `-inf` on positions the
/// mask forbids and 0 elsewhere.
pub fn att<T: Scalar>(
    tape: &mut Tape<'_, T>,
    q: Var,
    k: Var,
    v: Var,
    mask: Option<&[bool]>,
) -> Result<AttOutput> {
    let (sq, dk) = match tape.shape(q) {
        [a, b] => (*a, *b),
        s => return Err(dim_err!("att: queries must be rank 2, got {s:?}")),
    };
    let sk = tape.shape(k)[0];
    if tape.shape(k) != [sk, dk] || tape.shape(v)[0] != sk {
        return Err(dim_err!(
            "att: q {:?}, k {:?}, v {:?}",
            tape.shape(q),
            tape.shape(k),
            tape.shape(v)
        ));
    }
    let kt = tape.transpose(k)?;
    let raw = tape.matmul(q, kt)?;
    let mut scores = tape.scale(raw, T::of(1.0 / (dk as f64).sqrt()))?;
    if let Some(mask) = mask {
        if mask.len() != sq * sk {
            return Err(dim_err!("att: mask has {} entries, need {sq}x{sk}", mask.len()));
        }
        if let Some(row) = (0..sq).find(|&t| !mask[t * sk..(t + 1) * sk].iter().any(|&m| m)) {
            return Err(Error::Masking(format!("query row {row} has no permitted key")));
        }
        let bias = mask
            .iter()
            .map(|&ok| if ok { T::zero() } else { T::neg_infinity() })
            .collect();
        let bias = tape.constant(Tensor::new(vec![sq, sk], bias)?);
        scores = tape.add(scores, bias)?;
    }
    let weights = tape.softmax(scores, 1)?;
    let out = tape.matmul(weights, v)?;
    Ok(AttOutput { out, weights })
}

/// Multi-head projections: `W_q`, `W_k`, `W_v` (`C1 × C1`) and the
/// head-concatenation output projection (`C1 × C1`).
#[derive(Clone, Debug)]
pub struct AttentionParams {
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
    pub wo: ParamId,
    pub n_heads: usize,
    pub dim: usize,
}

impl AttentionParams {
    pub fn new<T: Scalar, R: Rng>(
        ps: &mut ParamStore<T>,
        prefix: &str,
        dim: usize,
        n_heads: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if n_heads == 0 || !dim.is_multiple_of(n_heads) {
            return Err(Error::Config(format!(
                "channel width {dim} is not divisible by {n_heads} heads"
            )));
        }
        Ok(AttentionParams {
            wq: ps.add_xavier(format!("{prefix}.wq"), dim, dim, rng)?,
            wk: ps.add_xavier(format!("{prefix}.wk"), dim, dim, rng)?,
            wv: ps.add_xavier(format!("{prefix}.wv"), dim, dim, rng)?,
            wo: ps.add_xavier(format!("{prefix}.wo"), dim, dim, rng)?,
            n_heads,
            dim,
        })
    }

    pub fn d_k(&self) -> usize {
        self.dim / self.n_heads
    }

    /// Multi-head attention with queries from `x_q` and keys/values from
    /// `x_kv`. Returns the projected output and each head's weight matrix.
    pub fn forward<T: Scalar>(
        &self,
        tape: &mut Tape<'_, T>,
        x_q: Var,
        x_kv: Var,
        window: Window,
    ) -> Result<(Var, Vec<Var>)> {
        let s_q = tape.shape(x_q)[0];
        let s_k = tape.shape(x_kv)[0];
        if let Window::Band(_) = window {
            if s_q != s_k {
                return Err(dim_err!("windowed attention needs equal lengths, got {s_q} and {s_k}"));
            }
        }
        let mask = window.mask(s_q);
        let (wq, wk, wv, wo) = (
            tape.param(self.wq)?,
            tape.param(self.wk)?,
            tape.param(self.wv)?,
            tape.param(self.wo)?,
        );
        let q = tape.matmul(x_q, wq)?;
        let k = tape.matmul(x_kv, wk)?;
        let v = tape.matmul(x_kv, wv)?;
        let dk = self.d_k();
        let mut heads = Vec::with_capacity(self.n_heads);
        let mut weights = Vec::with_capacity(self.n_heads);
        for h in 0..self.n_heads {
            let qh = tape.slice(q, 1, h * dk, dk)?;
            let kh = tape.slice(k, 1, h * dk, dk)?;
            let vh = tape.slice(v, 1, h * dk, dk)?;
            let o = att(tape, qh, kh, vh, mask.as_deref())?;
            heads.push(o.out);
            weights.push(o.weights);
        }
        let cat = if heads.len() == 1 {
            heads[0]
        } else {
            tape.concat(&heads, 1)?
        };
        Ok((tape.matmul(cat, wo)?, weights))
    }
}

/// Two-layer position-wise feed-forward `C1 → 2·C1 → C1` with ReLU.
#[derive(Clone, Debug)]
pub struct FeedForward {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
}

impl FeedForward {
    pub fn new<T: Scalar, R: Rng>(
        ps: &mut ParamStore<T>,
        prefix: &str,
        dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(FeedForward {
            w1: ps.add_xavier(format!("{prefix}.w1"), dim, 2 * dim, rng)?,
            b1: ps.add_zeros(format!("{prefix}.b1"), vec![2 * dim])?,
            w2: ps.add_xavier(format!("{prefix}.w2"), 2 * dim, dim, rng)?,
            b2: ps.add_zeros(format!("{prefix}.b2"), vec![dim])?,
        })
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<'_, T>, x: Var) -> Result<Var> {
        let (w1, b1) = (tape.param(self.w1)?, tape.param(self.b1)?);
        let (w2, b2) = (tape.param(self.w2)?, tape.param(self.b2)?);
        let h = tape.linear(x, w1, Some(b1))?;
        let h = tape.relu(h)?;
        tape.linear(h, w2, Some(b2))
    }
}

/// Affine layer normalization over channels.
#[derive(Clone, Debug)]
pub struct LayerNormParams {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNormParams {
    pub fn new<T: Scalar>(ps: &mut ParamStore<T>, prefix: &str, dim: usize) -> Result<Self> {
        Ok(LayerNormParams {
            gamma: ps.add_ones(format!("{prefix}.gamma"), vec![dim])?,
            beta: ps.add_zeros(format!("{prefix}.beta"), vec![dim])?,
        })
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<'_, T>, x: Var) -> Result<Var> {
        let n = tape.layer_norm(x, LAYER_NORM_EPS)?;
        let g = tape.param(self.gamma)?;
        let b = tape.param(self.beta)?;
        let n = tape.mul_row(n, g)?;
        tape.add_row(n, b)
    }
}

/// A complete SA or CMA block: attention, feed-forward, layer norm, and
/// residual connections.
///
/// `h = x_q + MHA(x_q, x_kv)`, `out = LayerNorm(h + FFN(h))`.
#[derive(Clone, Debug)]
pub struct BlockParams {
    pub attn: AttentionParams,
    pub ffn: FeedForward,
    pub norm: LayerNormParams,
}

impl BlockParams {
    pub fn new<T: Scalar, R: Rng>(
        ps: &mut ParamStore<T>,
        prefix: &str,
        dim: usize,
        n_heads: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(BlockParams {
            attn: AttentionParams::new(ps, &format!("{prefix}.attn"), dim, n_heads, rng)?,
            ffn: FeedForward::new(ps, &format!("{prefix}.ffn"), dim, rng)?,
            norm: LayerNormParams::new(ps, &format!("{prefix}.norm"), dim)?,
        })
    }

    /// Block output plus the per-head attention weights.
    pub fn forward_traced<T: Scalar>(
        &self,
        tape: &mut Tape<'_, T>,
        x_q: Var,
        x_kv: Var,
        window: Window,
    ) -> Result<(Var, Vec<Var>)> {
        let (a, weights) = self.attn.forward(tape, x_q, x_kv, window)?;
        let h = tape.add(x_q, a)?;
        let f = self.ffn.forward(tape, h)?;
        let h = tape.add(h, f)?;
        Ok((self.norm.forward(tape, h)?, weights))
    }
}

fn check_seq<T: Scalar>(tape: &Tape<'_, T>, x: Var, dim: usize, what: &str) -> Result<usize> {
    match tape.shape(x) {
        [s, c] if *c == dim => Ok(*s),
        shape => Err(dim_err!("{what}: expected s x {dim}, got {shape:?}")),
    }
}

/// Windowed self-attention block over one modality.
pub fn sa_block<T: Scalar>(
    tape: &mut Tape<'_, T>,
    f_m: Var,
    window: Window,
    p: &BlockParams,
) -> Result<Var> {
    check_seq(tape, f_m, p.attn.dim, "sa_block")?;
    Ok(p.forward_traced(tape, f_m, f_m, window)?.0)
}

/// Windowed cross-modal attention block: queries from `f_m`, keys and values
/// from `f_other`. The same `p` serves both directions.
pub fn cma_block<T: Scalar>(
    tape: &mut Tape<'_, T>,
    f_m: Var,
    f_other: Var,
    window: Window,
    p: &BlockParams,
) -> Result<Var> {
    let s = check_seq(tape, f_m, p.attn.dim, "cma_block")?;
    if check_seq(tape, f_other, p.attn.dim, "cma_block")? != s {
        return Err(dim_err!("cma_block: modalities have different snippet counts"));
    }
    Ok(p.forward_traced(tape, f_m, f_other, window)?.0)
}

/// Linear maps from the concatenated `2·C1` features to two `C1` gates.
#[derive(Clone, Debug)]
pub struct GateParams {
    pub ws: ParamId,
    pub bs: ParamId,
    pub wc: ParamId,
    pub bc: ParamId,
}

impl GateParams {
    pub fn new<T: Scalar, R: Rng>(
        ps: &mut ParamStore<T>,
        prefix: &str,
        dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(GateParams {
            ws: ps.add_xavier(format!("{prefix}.ws"), 2 * dim, dim, rng)?,
            bs: ps.add_zeros(format!("{prefix}.bs"), vec![dim])?,
            wc: ps.add_xavier(format!("{prefix}.wc"), 2 * dim, dim, rng)?,
            bc: ps.add_zeros(format!("{prefix}.bc"), vec![dim])?,
        })
    }

    /// The two sigmoid gates `(g_s, g_c)` for the given block outputs.
    pub fn gates<T: Scalar>(&self, tape: &mut Tape<'_, T>, f_s: Var, f_c: Var) -> Result<(Var, Var)> {
        let cat = tape.concat(&[f_s, f_c], 1)?;
        let (ws, bs) = (tape.param(self.ws)?, tape.param(self.bs)?);
        let (wc, bc) = (tape.param(self.wc)?, tape.param(self.bc)?);
        let gs = tape.linear(cat, ws, Some(bs))?;
        let gs = tape.sigmoid(gs)?;
        let gc = tape.linear(cat, wc, Some(bc))?;
        let gc = tape.sigmoid(gc)?;
        Ok((gs, gc))
    }
}

/// `σ(W_s·[F_s,F_c] + b_s) ⊙ F_s + σ(W_c·[F_s,F_c] + b_c) ⊙ F_c`
pub fn gated_parallel_fusion<T: Scalar>(
    tape: &mut Tape<'_, T>,
    f_s: Var,
    f_c: Var,
    g: &GateParams,
) -> Result<Var> {
    if tape.shape(f_s) != tape.shape(f_c) {
        return Err(dim_err!(
            "gated fusion: {:?} vs {:?}",
            tape.shape(f_s),
            tape.shape(f_c)
        ));
    }
    let (gs, gc) = g.gates(tape, f_s, f_c)?;
    let a = tape.mul(gs, f_s)?;
    let b = tape.mul(gc, f_c)?;
    tape.add(a, b)
}

/// Kernel-3 dilated temporal convolution weights, stored im2col-style as a
/// `3·C1 × C1` matrix (taps ordered `t-dil, t, t+dil`).
#[derive(Clone, Debug)]
pub struct DilatedResidualParams {
    pub w: ParamId,
    pub b: ParamId,
}

impl DilatedResidualParams {
    pub fn new<T: Scalar, R: Rng>(
        ps: &mut ParamStore<T>,
        prefix: &str,
        dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(DilatedResidualParams {
            w: ps.add_xavier(format!("{prefix}.w"), 3 * dim, dim, rng)?,
            b: ps.add_zeros(format!("{prefix}.b"), vec![dim])?,
        })
    }
}

/// Gather index turning `x[s × c]` into the `s × 3c` matrix of
/// zero-padded taps at offsets `-dilation, 0, +dilation`.
pub(crate) fn temporal_taps(s: usize, c: usize, dilation: usize) -> Arc<[u32]> {
    let mut idx = Vec::with_capacity(s * 3 * c);
    for t in 0..s {
        for tap in 0..3 {
            let src = t as isize + (tap as isize - 1) * dilation as isize;
            for ch in 0..c {
                if (0..s as isize).contains(&src) {
                    idx.push((src as usize * c + ch) as u32);
                } else {
                    idx.push(GATHER_ZERO);
                }
            }
        }
    }
    idx.into()
}

/// `F + ReLU(conv1d_dilated(F))`. With `dilation >= s` only the centre tap
/// sees data and the block is a pointwise transform.
pub fn dilated_residual_block<T: Scalar>(
    tape: &mut Tape<'_, T>,
    f: Var,
    dilation: usize,
    p: &DilatedResidualParams,
) -> Result<Var> {
    if dilation == 0 {
        return Err(Error::Config("dilation must be positive".into()));
    }
    let (s, c) = match tape.shape(f) {
        [s, c] => (*s, *c),
        shape => return Err(dim_err!("dilated block expects s x C1, got {shape:?}")),
    };
    let taps = tape.gather(f, temporal_taps(s, c, dilation), vec![s, 3 * c])?;
    let (w, b) = (tape.param(p.w)?, tape.param(p.b)?);
    let y = tape.linear(taps, w, Some(b))?;
    let y = tape.relu(y)?;
    tape.add(f, y)
}
