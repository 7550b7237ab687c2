//! Recording tape for reverse-mode differentiation.
//!
//! Every primitive applied through a [`Graph`] appends one node holding its
//! output value and whatever the backward pass needs. Nodes are only ever
//! appended, so the node order is already topological; [`Graph::backward`]
//! walks it once in reverse.
//!
//! Gradients are accumulated into leaves created with [`Graph::param`].
//! Calling `backward` twice without [`Graph::zero_grad`] adds the second
//! pass on top of the first.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{contract_err, Result};
use crate::ops;
use crate::{Real, Tensor};

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

pub(crate) enum Op<T> {
    Leaf,
    /// Identity forward, no gradient to the input.
    Barrier,
    Reshape(Var),
    Conv2d(ops::conv::Conv2dNode),
    MaxPool(ops::pool::MaxPoolNode),
    BatchNorm(ops::norm::BatchNormNode<T>),
    Linear(ops::linear::LinearNode),
    Unary(Var, ops::elementwise::UnaryKind),
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Sum(Var),
    Mean(Var),
    GlobalAvgPool(Var),
    Softmax(ops::softmax::AxisNode),
    Normalize(ops::softmax::AxisNode),
    WeightedSpatialSum(ops::reduce::WssNode),
    GateCombine(Var, Var),
    Stack(Vec<Var>),
    Narrow(ops::reduce::NarrowNode),
    Concat(ops::reduce::ConcatNode),
    Nll(Var, Vec<usize>),
    HeadReg(Var),
}

pub(crate) struct Node<T> {
    pub(crate) value: Tensor<T>,
    pub(crate) op: Op<T>,
    pub(crate) requires_grad: bool,
}

/// Tape plus storage for every recorded value.
///
/// A graph is single-owner: build it, run `backward`, read gradients, drop it.
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            grads: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Leaf that receives gradients.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.push_raw(value, Op::Leaf, true)
    }

    /// Leaf that never receives gradients.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push_raw(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient of a leaf created with [`Graph::param`], if any
    /// backward pass reached it.
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Gradient as a tensor shaped like the value; zeros when never reached.
    pub fn grad_tensor(&self, v: Var) -> Tensor<T> {
        let shape = self.shape(v).to_vec();
        match self.grad(v) {
            Some(g) => Tensor::from_vec(&shape, g.to_vec()).expect("grad shape"),
            None => Tensor::zeros(&shape),
        }
    }

    pub fn zero_grad(&mut self) {
        for g in self.grads.iter_mut() {
            *g = None;
        }
    }

    pub(crate) fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.push_raw(value, op, requires_grad)
    }

    fn push_raw(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    /// Identity whose backward pass stops at this point.
    pub fn stop_gradient(&mut self, x: Var) -> Var {
        let value = self.value(x).clone();
        self.push_raw(value, Op::Barrier, false)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).clone().reshape(shape)?;
        Ok(self.push(value, Op::Reshape(x), &[x]))
    }

    /// Reverse sweep from a scalar `loss`, accumulating into leaf gradients.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).numel() != 1 {
            return Err(contract_err(
                "backward",
                format!("loss must be scalar, got shape {:?}", self.shape(loss)),
            ));
        }
        if !self.nodes[loss.0].requires_grad {
            return Ok(());
        }
        let mut pass: Vec<Option<Vec<T>>> = (0..=loss.0).map(|_| None).collect();
        pass[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            let Some(grad_out) = pass[i].take() else {
                continue;
            };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            if let Op::Leaf = node.op {
                match &mut self.grads[i] {
                    Some(acc) => acc.iter_mut().zip(&grad_out).for_each(|(a, &g)| *a += g),
                    slot @ None => *slot = Some(grad_out),
                }
                continue;
            }
            let mut sink = GradSink {
                nodes: &self.nodes,
                pass: &mut pass,
            };
            ops::backward(&self.nodes[i], &grad_out, &mut sink);
        }
        Ok(())
    }
}

/// Write access to the per-pass gradient buffers during the reverse sweep.
pub(crate) struct GradSink<'a, T> {
    nodes: &'a [Node<T>],
    pass: &'a mut [Option<Vec<T>>],
}

impl<'a, T: Real> GradSink<'a, T> {
    pub(crate) fn value(&self, v: Var) -> &'a Tensor<T> {
        &self.nodes[v.0].value
    }

    pub(crate) fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient buffer of `v`, zero-initialized on first access. `None` when
    /// `v` does not require a gradient.
    pub(crate) fn buf(&mut self, v: Var) -> Option<&mut [T]> {
        if !self.nodes[v.0].requires_grad {
            return None;
        }
        let len = self.nodes[v.0].value.numel();
        Some(self.pass[v.0].get_or_insert_with(|| vec![T::zero(); len]))
    }

    /// Like [`GradSink::add`] for an owned buffer, which is moved in when
    /// `v` has no gradient yet.
    pub(crate) fn add_vec(&mut self, v: Var, g: Vec<T>) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut self.pass[v.0] {
            Some(buf) => buf.iter_mut().zip(&g).for_each(|(a, &b)| *a += b),
            slot @ None => *slot = Some(g),
        }
    }

    /// Adds `g` elementwise into the gradient of `v`.
    pub(crate) fn add(&mut self, v: Var, g: &[T]) {
        if let Some(buf) = self.buf(v) {
            buf.iter_mut().zip(g).for_each(|(a, &b)| *a += b);
        }
    }
}
