use super::kernels::{mm_nt, mm_tn, swap_last2};
use super::{Op, Tape, Var, GATHER_ZERO};
use crate::error::{Error, Result};
use crate::params::ParamId;
use crate::tensor::{numel, split_axis, Scalar, Tensor};

/// Gradients of a scalar loss with respect to every tape node that requires
/// them.
pub struct Gradients<T: Scalar> {
    grads: Vec<Option<Vec<T>>>,
    shapes: Vec<Vec<usize>>,
    params: Vec<(ParamId, usize)>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<Tensor<T>> {
        let g = self.grads.get(v.0)?.as_ref()?;
        Some(Tensor::new(self.shapes[v.0].clone(), g.clone()).unwrap())
    }

    /// Gradient of `v`, or zeros of the right shape if nothing reached it.
    pub fn get_or_zero(&self, v: Var) -> Tensor<T> {
        self.get(v)
            .unwrap_or_else(|| Tensor::zeros(self.shapes[v.0].clone()))
    }

    /// Gradients of the parameters bound on the tape, in binding order.
    pub fn params(&self) -> impl Iterator<Item = (ParamId, &[T])> + '_ {
        self.params
            .iter()
            .filter_map(|&(id, node)| self.grads[node].as_deref().map(|g| (id, g)))
    }
}

fn accumulate<T: Scalar>(slot: &mut Option<Vec<T>>, g: Vec<T>) {
    match slot {
        Some(existing) => {
            for (e, v) in existing.iter_mut().zip(g) {
                *e = *e + v;
            }
        }
        None => *slot = Some(g),
    }
}

impl<'p, T: Scalar> Tape<'p, T> {
    /// Reverse sweep from a scalar `loss`. Nodes are visited in exact reverse
    /// append order; gradients from multiple uses of a node add up.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let value = &self.nodes[loss.0].value;
        if value.numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                value.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![T::one()]);

        for id in (0..=loss.0).rev() {
            let node = &self.nodes[id];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            let mut contributions = self.vjp(id, &g);
            if self.fault == Some(node.op.kind()) {
                for (_, gi) in &mut contributions {
                    for v in gi.iter_mut() {
                        *v = *v * T::of(1.5);
                    }
                }
            }
            for (input, gi) in contributions {
                if self.nodes[input.0].requires_grad {
                    accumulate(&mut grads[input.0], gi);
                }
            }
            grads[id] = Some(g);
        }

        let shapes = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        let params = self
            .nodes
            .iter()
            .enumerate()
            .filter_map(|(i, n)| n.param.map(|p| (p, i)))
            .collect();
        Ok(Gradients {
            grads,
            shapes,
            params,
        })
    }

    /// Vector-Jacobian products of node `id` for upstream gradient `g`.
    fn vjp(&self, id: usize, g: &[T]) -> Vec<(Var, Vec<T>)> {
        let node = &self.nodes[id];
        let val = |v: Var| self.nodes[v.0].value.data();
        let shp = |v: Var| self.nodes[v.0].value.shape();
        let y = node.value.data();

        match &node.op {
            Op::Leaf => vec![],
            Op::MatMul(a, b) => {
                let (m, k, n) = (shp(*a)[0], shp(*a)[1], shp(*b)[1]);
                vec![
                    (*a, mm_nt(g, val(*b), m, n, k)),
                    (*b, mm_tn(val(*a), g, k, m, n)),
                ]
            }
            Op::BatchMatMul(a, b) => {
                let (batch, m, k, n) = (shp(*a)[0], shp(*a)[1], shp(*a)[2], shp(*b)[2]);
                let (da, db) = (val(*a), val(*b));
                let mut ga = Vec::with_capacity(batch * m * k);
                let mut gb = Vec::with_capacity(batch * k * n);
                for i in 0..batch {
                    let gi = &g[i * m * n..(i + 1) * m * n];
                    ga.extend(mm_nt(gi, &db[i * k * n..(i + 1) * k * n], m, n, k));
                    gb.extend(mm_tn(&da[i * m * k..(i + 1) * m * k], gi, k, m, n));
                }
                vec![(*a, ga), (*b, gb)]
            }
            Op::Transpose(a) => {
                let s = shp(*a);
                vec![(*a, swap_last2(g, 1, s[1], s[0]))]
            }
            Op::SwapLast2(a) => {
                let s = shp(*a);
                let r = s.len();
                vec![(*a, swap_last2(g, numel(&s[..r - 2]), s[r - 1], s[r - 2]))]
            }
            Op::Add(a, b) => vec![(*a, g.to_vec()), (*b, g.to_vec())],
            Op::Sub(a, b) => vec![(*a, g.to_vec()), (*b, g.iter().map(|&v| -v).collect())],
            Op::Mul(a, b) => {
                let (da, db) = (val(*a), val(*b));
                vec![
                    (*a, g.iter().zip(db).map(|(&gv, &bv)| gv * bv).collect()),
                    (*b, g.iter().zip(da).map(|(&gv, &av)| gv * av).collect()),
                ]
            }
            Op::AddRow(x, r) => {
                let n = shp(*r)[0];
                let mut gr = vec![T::zero(); n];
                for (i, &gv) in g.iter().enumerate() {
                    gr[i % n] = gr[i % n] + gv;
                }
                vec![(*x, g.to_vec()), (*r, gr)]
            }
            Op::MulRow(x, r) => {
                let n = shp(*r)[0];
                let (dx, dr) = (val(*x), val(*r));
                let mut gr = vec![T::zero(); n];
                let mut gx = Vec::with_capacity(g.len());
                for (i, &gv) in g.iter().enumerate() {
                    gr[i % n] = gr[i % n] + gv * dx[i];
                    gx.push(gv * dr[i % n]);
                }
                vec![(*x, gx), (*r, gr)]
            }
            Op::Scale(x, c) => vec![(*x, g.iter().map(|&v| v * *c).collect())],
            Op::Sigmoid(x) => vec![(
                *x,
                g.iter()
                    .zip(y)
                    .map(|(&gv, &yv)| gv * yv * (T::one() - yv))
                    .collect(),
            )],
            Op::Relu(x) => vec![(
                *x,
                g.iter()
                    .zip(val(*x))
                    .map(|(&gv, &xv)| if xv > T::zero() { gv } else { T::zero() })
                    .collect(),
            )],
            Op::Softmax(x, axis) => {
                let (outer, len, inner) = split_axis(shp(*x), *axis).unwrap();
                let mut gx = vec![T::zero(); g.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let at = |a: usize| (o * len + a) * inner + i;
                        let dot = (0..len).fold(T::zero(), |acc, a| acc + g[at(a)] * y[at(a)]);
                        for a in 0..len {
                            gx[at(a)] = y[at(a)] * (g[at(a)] - dot);
                        }
                    }
                }
                vec![(*x, gx)]
            }
            Op::LogSoftmax(x, axis) => {
                let (outer, len, inner) = split_axis(shp(*x), *axis).unwrap();
                let mut gx = vec![T::zero(); g.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let at = |a: usize| (o * len + a) * inner + i;
                        let total = (0..len).fold(T::zero(), |acc, a| acc + g[at(a)]);
                        for a in 0..len {
                            gx[at(a)] = g[at(a)] - y[at(a)].exp() * total;
                        }
                    }
                }
                vec![(*x, gx)]
            }
            Op::Concat(xs, axis) => {
                let out_shape = node.value.shape();
                let outer = numel(&out_shape[..*axis]);
                let inner = numel(&out_shape[*axis + 1..]);
                let total = out_shape[*axis];
                let mut offset = 0;
                let mut res = Vec::with_capacity(xs.len());
                for &x in xs {
                    let len = shp(x)[*axis];
                    let mut gx = Vec::with_capacity(outer * len * inner);
                    for o in 0..outer {
                        let from = (o * total + offset) * inner;
                        gx.extend_from_slice(&g[from..from + len * inner]);
                    }
                    offset += len;
                    res.push((x, gx));
                }
                res
            }
            Op::Stack(xs, axis) => {
                let base = shp(xs[0]);
                let outer = numel(&base[..*axis]);
                let inner = numel(&base[*axis..]);
                let n = xs.len();
                xs.iter()
                    .enumerate()
                    .map(|(k, &x)| {
                        let mut gx = Vec::with_capacity(outer * inner);
                        for o in 0..outer {
                            let from = (o * n + k) * inner;
                            gx.extend_from_slice(&g[from..from + inner]);
                        }
                        (x, gx)
                    })
                    .collect()
            }
            Op::MeanAxis(x, axis) => {
                let (outer, len, inner) = split_axis(shp(*x), *axis).unwrap();
                let denom = T::of(len as f64);
                let mut gx = vec![T::zero(); outer * len * inner];
                for o in 0..outer {
                    for a in 0..len {
                        for i in 0..inner {
                            gx[(o * len + a) * inner + i] = g[o * inner + i] / denom;
                        }
                    }
                }
                vec![(*x, gx)]
            }
            Op::SumAll(x) => vec![(*x, vec![g[0]; numel(shp(*x))])],
            Op::LayerNorm { x, rstd } => {
                let n = *shp(*x).last().unwrap();
                let nf = T::of(n as f64);
                let mut gx = vec![T::zero(); g.len()];
                for (r, &inv) in rstd.iter().enumerate() {
                    let gr = &g[r * n..(r + 1) * n];
                    let yr = &y[r * n..(r + 1) * n];
                    let mean_g = gr.iter().fold(T::zero(), |a, &v| a + v) / nf;
                    let mean_gy = gr
                        .iter()
                        .zip(yr)
                        .fold(T::zero(), |a, (&gv, &yv)| a + gv * yv)
                        / nf;
                    for j in 0..n {
                        gx[r * n + j] = inv * (gr[j] - mean_g - yr[j] * mean_gy);
                    }
                }
                vec![(*x, gx)]
            }
            Op::Reshape(x) => vec![(*x, g.to_vec())],
            Op::Slice { x, axis, start } => {
                let (outer, full, inner) = split_axis(shp(*x), *axis).unwrap();
                let len = node.value.shape()[*axis];
                let mut gx = vec![T::zero(); outer * full * inner];
                for o in 0..outer {
                    let to = (o * full + start) * inner;
                    let from = o * len * inner;
                    gx[to..to + len * inner].copy_from_slice(&g[from..from + len * inner]);
                }
                vec![(*x, gx)]
            }
            Op::Gather { x, index } => {
                let mut gx = vec![T::zero(); numel(shp(*x))];
                for (&i, &gv) in index.iter().zip(g) {
                    if i != GATHER_ZERO {
                        gx[i as usize] = gx[i as usize] + gv;
                    }
                }
                vec![(*x, gx)]
            }
        }
    }
}
