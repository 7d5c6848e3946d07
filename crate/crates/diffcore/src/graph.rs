//! The tape: every op appends a node, `backward` replays them in reverse.

use std::collections::HashMap;

use crate::error::{DiffError, Result};
use crate::ops;
use crate::params::{ParamId, ParamStore};
use crate::tensor::Tensor;

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A differentiable operation defined outside this crate.
///
/// `backward` receives the input values, the output value and the gradient
/// of the loss with respect to the output, and returns one optional gradient
/// per input (same order as the inputs passed to [`Graph::custom`]).
pub trait CustomOp {
    fn name(&self) -> &'static str;

    fn backward(&self, inputs: &[&Tensor], output: &Tensor, grad: &Tensor) -> Vec<Option<Tensor>>;
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) enum Unary {
    Relu,
    LeakyRelu(f64),
    Softplus,
    Sigmoid,
    Exp,
    Ln,
    Square,
    Abs,
    Sqrt,
    Tanh,
    Sin,
    Cos,
}

pub(crate) enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, f64),
    Offset(Var),
    MulConst(Var, Tensor),
    AddRowBias(Var, Var),
    AddChannelBias(Var, Var),
    MatMul(Var, Var),
    Unary(Var, Unary),
    Sum(Var),
    Mean(Var),
    SumLastAxis(Var),
    Reshape(Var),
    Concat {
        parts: Vec<Var>,
        axis: usize,
    },
    Slice {
        x: Var,
        axis: usize,
        start: usize,
    },
    RepeatRows(Var),
    Conv2d {
        input: Var,
        weight: Var,
        stride: usize,
        pad: usize,
    },
    ConvTranspose2d {
        input: Var,
        weight: Var,
        stride: usize,
        pad: usize,
    },
    Conv3d {
        input: Var,
        weight: Var,
        pad: usize,
    },
    Modulate {
        weight: Var,
        style: Var,
        demodulate: bool,
    },
    Upsample {
        x: Var,
        factor: usize,
    },
    Bilinear {
        plane: Var,
        uv: Var,
    },
    Trilinear {
        volume: Var,
        cells: Vec<ops::sample::TrilinearTap>,
    },
    Bce {
        pred: Var,
        target: Tensor,
    },
    Custom {
        inputs: Vec<Var>,
        op: Box<dyn CustomOp>,
    },
}

pub(crate) struct Node {
    pub value: Tensor,
    pub op: Op,
    pub needs_grad: bool,
    pub retain: bool,
}

/// Recorded computation. Build it with the op methods, then call
/// [`Graph::backward`] on a scalar output.
#[derive(Default)]
pub struct Graph {
    pub(crate) nodes: Vec<Node>,
    bound: HashMap<ParamId, Var>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Leaf whose gradient is tracked.
    pub fn input(&mut self, value: Tensor) -> Var {
        self.push_leaf(value, true)
    }

    /// Leaf treated as a constant.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push_leaf(value, false)
    }

    /// Bind a stored parameter. Repeated binds of the same id share one leaf.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.bound.get(&id) {
            return v;
        }
        let v = self.push_leaf(store.get(id).clone(), store.is_trainable(id));
        self.bound.insert(id, v);
        v
    }

    /// Route later [`Graph::param`] calls for `id` to an existing node, e.g.
    /// a gradient-checked input standing in for a stored parameter.
    pub fn bind(&mut self, id: ParamId, v: Var) {
        self.bound.insert(id, v);
    }

    /// Keep the gradient of an intermediate node after `backward`.
    pub fn retain_grad(&mut self, v: Var) {
        self.nodes[v.0].retain = true;
    }

    fn push_leaf(&mut self, value: Tensor, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad,
            retain: true,
        });
        Var(self.nodes.len() - 1)
    }

    pub(crate) fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
            retain: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// Record an externally defined op.
    pub fn custom(&mut self, inputs: &[Var], value: Tensor, op: Box<dyn CustomOp>) -> Var {
        self.push(
            value,
            Op::Custom {
                inputs: inputs.to_vec(),
                op,
            },
            inputs,
        )
    }

    /// Reverse-mode sweep from a scalar `loss`.
    ///
    /// Does not modify the graph; calling it twice yields identical results.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let loss_value = &self.nodes[loss.0].value;
        if loss_value.len() != 1 {
            return Err(DiffError::NotScalar(loss_value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        if self.nodes[loss.0].needs_grad {
            grads[loss.0] = Some(Tensor::ones(loss_value.shape()));
        }
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else {
                continue;
            };
            ops::backward_node(self, node, &g, &mut grads);
            if node.retain {
                grads[i] = Some(g);
            }
        }
        let bound = self.bound.iter().map(|(&id, &v)| (id, v)).collect();
        Ok(Gradients { grads, bound })
    }

    pub(crate) fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
        if !self.nodes[v.0].needs_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => acc.add_assign(&g),
            slot => *slot = Some(g),
        }
    }
}

/// Result of [`Graph::backward`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    bound: Vec<(ParamId, Var)>,
}

impl Gradients {
    /// Gradient for `v`, if it was reached.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient for `v`, zeros of the value's shape when unreachable.
    pub fn wrt(&self, graph: &Graph, v: Var) -> Tensor {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(graph.shape(v)))
    }

    /// Gradients of every bound trainable parameter, ordered by id.
    pub fn params(&self, graph: &Graph) -> Vec<(ParamId, Tensor)> {
        let mut out: Vec<(ParamId, Tensor)> = self
            .bound
            .iter()
            .filter(|(_, v)| graph.requires_grad(*v))
            .map(|&(id, v)| (id, self.wrt(graph, v)))
            .collect();
        out.sort_by_key(|(id, _)| *id);
        out
    }
}
