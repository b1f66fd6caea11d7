//! Reverse-mode automatic differentiation over an append-only tape.
//!
//! Every forward op appends one node holding its output value and the ids of
//! its inputs. Inputs are always older than the node that consumes them, so
//! walking the tape backwards from the loss is a valid topological order.

mod backward;
mod kernels;
mod ops;

use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::tensor::{Scalar, Tensor};

pub use backward::Gradients;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Op identity, used for diagnostics and for fault injection in the
/// gradient checker's self-test.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum OpKind {
    Leaf,
    MatMul,
    BatchMatMul,
    Transpose,
    SwapLast2,
    Add,
    Sub,
    Mul,
    AddRow,
    MulRow,
    Scale,
    Sigmoid,
    Relu,
    Softmax,
    LogSoftmax,
    Concat,
    Stack,
    MeanAxis,
    SumAll,
    LayerNorm,
    Reshape,
    Slice,
    Gather,
}

impl OpKind {
    pub const ALL: [OpKind; 23] = [
        OpKind::Leaf,
        OpKind::MatMul,
        OpKind::BatchMatMul,
        OpKind::Transpose,
        OpKind::SwapLast2,
        OpKind::Add,
        OpKind::Sub,
        OpKind::Mul,
        OpKind::AddRow,
        OpKind::MulRow,
        OpKind::Scale,
        OpKind::Sigmoid,
        OpKind::Relu,
        OpKind::Softmax,
        OpKind::LogSoftmax,
        OpKind::Concat,
        OpKind::Stack,
        OpKind::MeanAxis,
        OpKind::SumAll,
        OpKind::LayerNorm,
        OpKind::Reshape,
        OpKind::Slice,
        OpKind::Gather,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OpKind::Leaf => "leaf",
            OpKind::MatMul => "matmul",
            OpKind::BatchMatMul => "bmatmul",
            OpKind::Transpose => "transpose",
            OpKind::SwapLast2 => "swap_last2",
            OpKind::Add => "add",
            OpKind::Sub => "sub",
            OpKind::Mul => "mul",
            OpKind::AddRow => "add_row",
            OpKind::MulRow => "mul_row",
            OpKind::Scale => "scale",
            OpKind::Sigmoid => "sigmoid",
            OpKind::Relu => "relu",
            OpKind::Softmax => "softmax",
            OpKind::LogSoftmax => "log_softmax",
            OpKind::Concat => "concat",
            OpKind::Stack => "stack",
            OpKind::MeanAxis => "mean_axis",
            OpKind::SumAll => "sum_all",
            OpKind::LayerNorm => "layer_norm",
            OpKind::Reshape => "reshape",
            OpKind::Slice => "slice",
            OpKind::Gather => "gather",
        }
    }

    pub fn from_name(name: &str) -> Option<OpKind> {
        OpKind::ALL.iter().copied().find(|k| k.name() == name)
    }
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Sentinel in a gather index meaning "emit zero".
pub const GATHER_ZERO: u32 = u32::MAX;

#[derive(Clone, Debug)]
pub(crate) enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    BatchMatMul(Var, Var),
    Transpose(Var),
    SwapLast2(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    Scale(Var, T),
    Sigmoid(Var),
    Relu(Var),
    Softmax(Var, usize),
    LogSoftmax(Var, usize),
    Concat(Vec<Var>, usize),
    Stack(Vec<Var>, usize),
    MeanAxis(Var, usize),
    SumAll(Var),
    LayerNorm { x: Var, rstd: Vec<T> },
    Reshape(Var),
    Slice { x: Var, axis: usize, start: usize },
    Gather { x: Var, index: Arc<[u32]> },
}

impl<T> Op<T> {
    pub(crate) fn kind(&self) -> OpKind {
        match self {
            Op::Leaf => OpKind::Leaf,
            Op::MatMul(..) => OpKind::MatMul,
            Op::BatchMatMul(..) => OpKind::BatchMatMul,
            Op::Transpose(..) => OpKind::Transpose,
            Op::SwapLast2(..) => OpKind::SwapLast2,
            Op::Add(..) => OpKind::Add,
            Op::Sub(..) => OpKind::Sub,
            Op::Mul(..) => OpKind::Mul,
            Op::AddRow(..) => OpKind::AddRow,
            Op::MulRow(..) => OpKind::MulRow,
            Op::Scale(..) => OpKind::Scale,
            Op::Sigmoid(..) => OpKind::Sigmoid,
            Op::Relu(..) => OpKind::Relu,
            Op::Softmax(..) => OpKind::Softmax,
            Op::LogSoftmax(..) => OpKind::LogSoftmax,
            Op::Concat(..) => OpKind::Concat,
            Op::Stack(..) => OpKind::Stack,
            Op::MeanAxis(..) => OpKind::MeanAxis,
            Op::SumAll(..) => OpKind::SumAll,
            Op::LayerNorm { .. } => OpKind::LayerNorm,
            Op::Reshape(..) => OpKind::Reshape,
            Op::Slice { .. } => OpKind::Slice,
            Op::Gather { .. } => OpKind::Gather,
        }
    }

    pub(crate) fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf => vec![],
            Op::MatMul(a, b)
            | Op::BatchMatMul(a, b)
            | Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::AddRow(a, b)
            | Op::MulRow(a, b) => vec![*a, *b],
            Op::Transpose(a)
            | Op::SwapLast2(a)
            | Op::Scale(a, _)
            | Op::Sigmoid(a)
            | Op::Relu(a)
            | Op::Softmax(a, _)
            | Op::LogSoftmax(a, _)
            | Op::MeanAxis(a, _)
            | Op::SumAll(a)
            | Op::Reshape(a) => vec![*a],
            Op::LayerNorm { x, .. } | Op::Slice { x, .. } | Op::Gather { x, .. } => vec![*x],
            Op::Concat(xs, _) | Op::Stack(xs, _) => xs.clone(),
        }
    }
}

pub(crate) struct Node<T: Scalar> {
    pub(crate) op: Op<T>,
    pub(crate) value: Tensor<T>,
    pub(crate) requires_grad: bool,
    pub(crate) param: Option<ParamId>,
}

/// Append-only record of a forward computation.
///
/// A tape borrows the parameter store it reads from; parameters bound with
/// [`Tape::param`] are deduplicated, so a parameter used in several places is
/// one node whose gradient accumulates every use.
pub struct Tape<'p, T: Scalar> {
    pub(crate) nodes: Vec<Node<T>>,
    params: Option<&'p ParamStore<T>>,
    bound: HashMap<ParamId, Var>,
    pub(crate) fault: Option<OpKind>,
}

impl<'p, T: Scalar> Default for Tape<'p, T> {
    fn default() -> Self {
        Tape::new()
    }
}

impl<'p, T: Scalar> Tape<'p, T> {
    /// A tape with no parameter store attached.
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            params: None,
            bound: HashMap::new(),
            fault: None,
        }
    }

    pub fn with_params(params: &'p ParamStore<T>) -> Self {
        Tape {
            params: Some(params),
            ..Tape::new()
        }
    }

    /// Corrupt the backward rule of `kind` (scales its input gradients by
    /// 1.5). Exists so the gradient checker can prove it catches bad rules.
    pub fn inject_fault(&mut self, kind: OpKind) {
        self.fault = Some(kind);
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn op_kind(&self, v: Var) -> OpKind {
        self.nodes[v.0].op.kind()
    }

    /// Input ids of a node, in argument order.
    pub fn inputs_of(&self, v: Var) -> Vec<Var> {
        self.nodes[v.0].op.inputs()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Record a leaf. Gradients are tracked iff `t.requires_grad`.
    pub fn leaf(&mut self, t: Tensor<T>) -> Var {
        let requires_grad = t.requires_grad;
        self.push_raw(Op::Leaf, t, requires_grad, None)
    }

    /// Record a leaf whose gradient is tracked.
    pub fn input(&mut self, t: Tensor<T>) -> Var {
        self.leaf(t.with_grad())
    }

    /// Record a leaf that never receives a gradient.
    pub fn constant(&mut self, mut t: Tensor<T>) -> Var {
        t.requires_grad = false;
        self.leaf(t)
    }

    /// Bind a parameter from the attached store.
    pub fn param(&mut self, id: ParamId) -> Result<Var> {
        if let Some(&v) = self.bound.get(&id) {
            return Ok(v);
        }
        let store = self
            .params
            .ok_or_else(|| Error::Contract("tape has no parameter store".into()))?;
        let mut value = store.get(id).clone();
        value.grad = None;
        let v = self.push_raw(Op::Leaf, value, true, Some(id));
        self.bound.insert(id, v);
        Ok(v)
    }

    fn push_raw(
        &mut self,
        op: Op<T>,
        mut value: Tensor<T>,
        requires_grad: bool,
        param: Option<ParamId>,
    ) -> Var {
        value.requires_grad = requires_grad;
        value.grad = None;
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
            param,
        });
        Var(self.nodes.len() - 1)
    }

    /// Append an op node after checking that it did not manufacture NaN, or
    /// infinities out of finite inputs.
    pub(crate) fn push(&mut self, op: Op<T>, shape: Vec<usize>, data: Vec<T>) -> Result<Var> {
        let kind = op.kind();
        let inputs = op.inputs();
        if data.iter().any(|v| v.is_nan()) {
            return Err(Error::Numerical {
                op: kind.name(),
                detail: format!("NaN produced at tape position {}", self.nodes.len()),
            });
        }
        if data.iter().any(|v| v.is_infinite())
            && inputs.iter().all(|i| self.nodes[i.0].value.is_finite())
        {
            return Err(Error::Numerical {
                op: kind.name(),
                detail: format!(
                    "non-finite value from finite inputs at tape position {}",
                    self.nodes.len()
                ),
            });
        }
        let requires_grad = inputs.iter().any(|i| self.nodes[i.0].requires_grad);
        let value = Tensor::new(shape, data)?;
        Ok(self.push_raw(op, value, requires_grad, None))
    }
}
