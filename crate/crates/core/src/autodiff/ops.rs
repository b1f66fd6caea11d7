//! Forward definitions of every differentiable op.

use std::sync::Arc;

use super::kernels::{self, mm, swap_last2};
use super::{Op, Tape, Var, GATHER_ZERO};
use crate::error::{dim_err, Error, Result};
use crate::tensor::{numel, split_axis, Scalar};

impl<'p, T: Scalar> Tape<'p, T> {
    fn data(&self, v: Var) -> &[T] {
        self.nodes[v.0].value.data()
    }

    fn dims(&self, v: Var) -> Vec<usize> {
        self.nodes[v.0].value.shape().to_vec()
    }

    fn same_shape(&self, a: Var, b: Var, op: &str) -> Result<Vec<usize>> {
        let (sa, sb) = (self.dims(a), self.dims(b));
        if sa != sb {
            return Err(dim_err!("{op}: shapes {sa:?} and {sb:?} differ"));
        }
        Ok(sa)
    }

    /// Matrix product of two rank-2 tensors.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.dims(a), self.dims(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(dim_err!("matmul: {sa:?} x {sb:?}"));
        }
        let out = mm(self.data(a), self.data(b), sa[0], sa[1], sb[1]);
        self.push(Op::MatMul(a, b), vec![sa[0], sb[1]], out)
    }

    /// Batched product `[B, m, k] x [B, k, n] -> [B, m, n]`.
    pub fn bmatmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.dims(a), self.dims(b));
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] || sa[2] != sb[1] {
            return Err(dim_err!("bmatmul: {sa:?} x {sb:?}"));
        }
        let (batch, m, k, n) = (sa[0], sa[1], sa[2], sb[2]);
        let (da, db) = (self.data(a), self.data(b));
        let mut out = Vec::with_capacity(batch * m * n);
        for i in 0..batch {
            out.extend(mm(
                &da[i * m * k..(i + 1) * m * k],
                &db[i * k * n..(i + 1) * k * n],
                m,
                k,
                n,
            ));
        }
        self.push(Op::BatchMatMul(a, b), vec![batch, m, n], out)
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let s = self.dims(a);
        if s.len() != 2 {
            return Err(dim_err!("transpose expects rank 2, got {s:?}"));
        }
        let out = swap_last2(self.data(a), 1, s[0], s[1]);
        self.push(Op::Transpose(a), vec![s[1], s[0]], out)
    }

    /// Swap the two trailing axes of a tensor of rank >= 2.
    pub fn swap_last2(&mut self, a: Var) -> Result<Var> {
        let mut s = self.dims(a);
        let r = s.len();
        if r < 2 {
            return Err(dim_err!("swap_last2 expects rank >= 2, got {s:?}"));
        }
        let (m, n) = (s[r - 2], s[r - 1]);
        let out = swap_last2(self.data(a), numel(&s[..r - 2]), m, n);
        s.swap(r - 2, r - 1);
        self.push(Op::SwapLast2(a), s, out)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let s = self.same_shape(a, b, "add")?;
        let out = self.data(a).iter().zip(self.data(b)).map(|(&x, &y)| x + y).collect();
        self.push(Op::Add(a, b), s, out)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let s = self.same_shape(a, b, "sub")?;
        let out = self.data(a).iter().zip(self.data(b)).map(|(&x, &y)| x - y).collect();
        self.push(Op::Sub(a, b), s, out)
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let s = self.same_shape(a, b, "mul")?;
        let out = self.data(a).iter().zip(self.data(b)).map(|(&x, &y)| x * y).collect();
        self.push(Op::Mul(a, b), s, out)
    }

    fn row_check(&self, x: Var, row: Var, op: &str) -> Result<(Vec<usize>, usize)> {
        let (sx, sr) = (self.dims(x), self.dims(row));
        let n = *sx.last().unwrap_or(&0);
        if sr.len() != 1 || sr[0] != n {
            return Err(dim_err!("{op}: row {sr:?} does not match trailing axis of {sx:?}"));
        }
        Ok((sx, n))
    }

    /// Add a vector of length `n` to every trailing-axis row of `x[..., n]`.
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var> {
        let (s, n) = self.row_check(x, row, "add_row")?;
        let r = self.data(row);
        let out = self
            .data(x)
            .iter()
            .enumerate()
            .map(|(i, &v)| v + r[i % n])
            .collect();
        self.push(Op::AddRow(x, row), s, out)
    }

    /// Multiply every trailing-axis row of `x[..., n]` by a vector of length `n`.
    pub fn mul_row(&mut self, x: Var, row: Var) -> Result<Var> {
        let (s, n) = self.row_check(x, row, "mul_row")?;
        let r = self.data(row);
        let out = self
            .data(x)
            .iter()
            .enumerate()
            .map(|(i, &v)| v * r[i % n])
            .collect();
        self.push(Op::MulRow(x, row), s, out)
    }

    /// Multiply by a constant.
    pub fn scale(&mut self, x: Var, factor: T) -> Result<Var> {
        let s = self.dims(x);
        let out = self.data(x).iter().map(|&v| v * factor).collect();
        self.push(Op::Scale(x, factor), s, out)
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        let s = self.dims(x);
        let out = self.data(x).iter().map(|&v| kernels::sigmoid(v)).collect();
        self.push(Op::Sigmoid(x), s, out)
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let s = self.dims(x);
        let out = self.data(x).iter().map(|&v| v.max(T::zero())).collect();
        self.push(Op::Relu(x), s, out)
    }

    /// Softmax along `axis`. Entries equal to `-inf` are masked and map to
    /// exactly zero; a slice with every entry masked is a [`Error::Masking`].
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let s = self.dims(x);
        let (outer, len, inner) = split_axis(&s, axis)?;
        let src = self.data(x);
        let mut out = vec![T::zero(); src.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |a: usize| (o * len + a) * inner + i;
                let max = (0..len).map(|a| src[at(a)]).fold(T::neg_infinity(), T::max);
                if max == T::neg_infinity() {
                    return Err(Error::Masking(format!(
                        "softmax slice ({o}, {i}) along axis {axis} has no unmasked entry"
                    )));
                }
                let mut sum = T::zero();
                for a in 0..len {
                    let e = (src[at(a)] - max).exp();
                    out[at(a)] = e;
                    sum = sum + e;
                }
                for a in 0..len {
                    out[at(a)] = out[at(a)] / sum;
                }
            }
        }
        self.push(Op::Softmax(x, axis), s, out)
    }

    /// Numerically stable `log(softmax(x))` along `axis`.
    pub fn log_softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let s = self.dims(x);
        let (outer, len, inner) = split_axis(&s, axis)?;
        let src = self.data(x);
        let mut out = vec![T::zero(); src.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |a: usize| (o * len + a) * inner + i;
                let max = (0..len).map(|a| src[at(a)]).fold(T::neg_infinity(), T::max);
                if max == T::neg_infinity() {
                    return Err(Error::Masking(format!(
                        "log_softmax slice ({o}, {i}) has no unmasked entry"
                    )));
                }
                let sum = (0..len).fold(T::zero(), |acc, a| acc + (src[at(a)] - max).exp());
                let lse = max + sum.ln();
                for a in 0..len {
                    out[at(a)] = src[at(a)] - lse;
                }
            }
        }
        self.push(Op::LogSoftmax(x, axis), s, out)
    }

    /// Concatenate tensors of equal rank along an existing axis.
    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        let first = xs
            .first()
            .ok_or_else(|| dim_err!("concat of zero tensors"))?;
        let base = self.dims(*first);
        if axis >= base.len() {
            return Err(dim_err!("concat axis {axis} out of range for {base:?}"));
        }
        let mut total = 0;
        for &x in xs {
            let s = self.dims(x);
            let compatible = s.len() == base.len()
                && s.iter().zip(&base).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(dim_err!("concat: {s:?} incompatible with {base:?} on axis {axis}"));
            }
            total += s[axis];
        }
        let outer = numel(&base[..axis]);
        let inner = numel(&base[axis + 1..]);
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &x in xs {
                let len = self.nodes[x.0].value.shape()[axis];
                let chunk = len * inner;
                out.extend_from_slice(&self.data(x)[o * chunk..(o + 1) * chunk]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        self.push(Op::Concat(xs.to_vec(), axis), shape, out)
    }

    /// Stack equally shaped tensors along a new axis inserted at `axis`.
    pub fn stack(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        let first = xs.first().ok_or_else(|| dim_err!("stack of zero tensors"))?;
        let base = self.dims(*first);
        if axis > base.len() {
            return Err(dim_err!("stack axis {axis} out of range for {base:?}"));
        }
        for &x in xs {
            if self.dims(x) != base {
                return Err(dim_err!("stack: {:?} differs from {base:?}", self.dims(x)));
            }
        }
        let outer = numel(&base[..axis]);
        let inner = numel(&base[axis..]);
        let mut out = Vec::with_capacity(outer * xs.len() * inner);
        for o in 0..outer {
            for &x in xs {
                out.extend_from_slice(&self.data(x)[o * inner..(o + 1) * inner]);
            }
        }
        let mut shape = base;
        shape.insert(axis, xs.len());
        self.push(Op::Stack(xs.to_vec(), axis), shape, out)
    }

    /// Average over `axis`, removing it. Reducing the only axis yields shape `[1]`.
    pub fn mean_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let s = self.dims(x);
        let (outer, len, inner) = split_axis(&s, axis)?;
        let src = self.data(x);
        let denom = T::of(len as f64);
        let mut out = vec![T::zero(); outer * inner];
        for o in 0..outer {
            for a in 0..len {
                for i in 0..inner {
                    out[o * inner + i] = out[o * inner + i] + src[(o * len + a) * inner + i];
                }
            }
        }
        for v in &mut out {
            *v = *v / denom;
        }
        let mut shape = s;
        shape.remove(axis);
        if shape.is_empty() {
            shape.push(1);
        }
        self.push(Op::MeanAxis(x, axis), shape, out)
    }

    pub fn sum_all(&mut self, x: Var) -> Result<Var> {
        let total = self.data(x).iter().fold(T::zero(), |acc, &v| acc + v);
        self.push(Op::SumAll(x), vec![1], vec![total])
    }

    /// Normalize each trailing-axis row to zero mean and unit variance
    /// (biased variance, `eps` inside the square root). No affine terms.
    pub fn layer_norm(&mut self, x: Var, eps: f64) -> Result<Var> {
        let s = self.dims(x);
        let n = *s.last().ok_or_else(|| dim_err!("layer_norm on rank-0 tensor"))?;
        let src = self.data(x);
        let rows = src.len() / n;
        let nf = T::of(n as f64);
        let mut out = vec![T::zero(); src.len()];
        let mut rstd = Vec::with_capacity(rows);
        for r in 0..rows {
            let row = &src[r * n..(r + 1) * n];
            let mean = row.iter().fold(T::zero(), |a, &v| a + v) / nf;
            let var = row.iter().fold(T::zero(), |a, &v| a + (v - mean) * (v - mean)) / nf;
            let inv = T::one() / (var + T::of(eps)).sqrt();
            for (o, &v) in out[r * n..(r + 1) * n].iter_mut().zip(row) {
                *o = (v - mean) * inv;
            }
            rstd.push(inv);
        }
        self.push(Op::LayerNorm { x, rstd }, s, out)
    }

    pub fn reshape(&mut self, x: Var, shape: impl Into<Vec<usize>>) -> Result<Var> {
        let shape = shape.into();
        let s = self.dims(x);
        if numel(&shape) != numel(&s) {
            return Err(dim_err!("reshape {s:?} -> {shape:?}"));
        }
        let out = self.data(x).to_vec();
        self.push(Op::Reshape(x), shape, out)
    }

    /// Contiguous sub-range `start..start+len` of `axis`.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let s = self.dims(x);
        let (outer, full, inner) = split_axis(&s, axis)?;
        if len == 0 || start + len > full {
            return Err(dim_err!("slice {start}..{} of axis {axis} in {s:?}", start + len));
        }
        let src = self.data(x);
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let from = (o * full + start) * inner;
            out.extend_from_slice(&src[from..from + len * inner]);
        }
        let mut shape = s;
        shape[axis] = len;
        self.push(Op::Slice { x, axis, start }, shape, out)
    }

    /// `out[j] = x.flat[index[j]]`, or zero where `index[j] == GATHER_ZERO`.
    /// Convolutions and shifts are expressed through this op.
    pub fn gather(&mut self, x: Var, index: Arc<[u32]>, shape: impl Into<Vec<usize>>) -> Result<Var> {
        let shape = shape.into();
        if numel(&shape) != index.len() {
            return Err(dim_err!("gather: index of {} entries for shape {shape:?}", index.len()));
        }
        let src = self.data(x);
        let mut out = Vec::with_capacity(index.len());
        for &i in index.iter() {
            if i == GATHER_ZERO {
                out.push(T::zero());
            } else {
                let v = *src
                    .get(i as usize)
                    .ok_or_else(|| dim_err!("gather index {i} out of range {}", src.len()))?;
                out.push(v);
            }
        }
        self.push(Op::Gather { x, index }, shape, out)
    }

    /// `x · w + b` for `x[m×k]`, `w[k×n]`, `b[n]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let y = self.matmul(x, w)?;
        match b {
            Some(b) => self.add_row(y, b),
            None => Ok(y),
        }
    }
}
