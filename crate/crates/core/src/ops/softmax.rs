//! Softmax along an axis, spatial softmax, and sum-normalization.

use alloc::format;
use alloc::vec;

use crate::error::{dim_err, Error, Result};
use crate::graph::{GradSink, Op, Var};
use crate::tensor::split_axis;
use crate::{Graph, Real, Tensor};

/// Layout of a reduction over one (possibly merged) axis: the tensor is
/// viewed as `[outer, len, inner]`.
pub(crate) struct AxisNode {
    x: Var,
    outer: usize,
    len: usize,
    inner: usize,
}

fn softmax_kernel<T: Real>(xs: &[T], outer: usize, len: usize, inner: usize) -> alloc::vec::Vec<T> {
    let mut out = vec![T::zero(); xs.len()];
    for o in 0..outer {
        for i in 0..inner {
            let at = |k: usize| (o * len + k) * inner + i;
            let mut max = T::neg_infinity();
            for k in 0..len {
                max = max.max(xs[at(k)]);
            }
            let mut total = T::zero();
            for k in 0..len {
                let e = (xs[at(k)] - max).exp();
                out[at(k)] = e;
                total += e;
            }
            let inv = T::one() / total;
            for k in 0..len {
                out[at(k)] *= inv;
            }
        }
    }
    out
}

impl<T: Real> Graph<T> {
    fn check_finite(&self, op: &'static str, x: Var) -> Result<()> {
        if self.value(x).all_finite() {
            Ok(())
        } else {
            Err(Error::NonFinite { op })
        }
    }

    fn softmax_view(&mut self, op: &'static str, x: Var, outer: usize, len: usize, inner: usize) -> Result<Var> {
        self.check_finite(op, x)?;
        let out = softmax_kernel(self.value(x).data(), outer, len, inner);
        let value = Tensor::from_vec(self.shape(x), out)?;
        Ok(self.push(value, Op::Softmax(AxisNode { x, outer, len, inner }), &[x]))
    }

    /// Max-subtracted softmax along `axis`.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x);
        if axis >= shape.len() {
            return Err(dim_err("softmax", format!("axis {} out of range for {:?}", axis, shape)));
        }
        let (outer, len, inner) = split_axis(shape, axis);
        self.softmax_view("softmax", x, outer, len, inner)
    }

    /// Softmax over the `H x W` grid of every `(n, c)` plane of `[N,C,H,W]`.
    pub fn spatial_softmax(&mut self, x: Var) -> Result<Var> {
        let shape = self.shape(x);
        let [n, c, h, w] = shape[..] else {
            return Err(dim_err("spatial_softmax", format!("expected [N,C,H,W], got {:?}", shape)));
        };
        if h * w == 0 {
            return Err(dim_err("spatial_softmax", "empty spatial grid"));
        }
        self.softmax_view("spatial_softmax", x, n * c, h * w, 1)
    }

    /// Divides by the sum along `axis`, so nonnegative inputs become
    /// distributions.
    pub fn normalize(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x);
        if axis >= shape.len() {
            return Err(dim_err("normalize", format!("axis {} out of range for {:?}", axis, shape)));
        }
        let (outer, len, inner) = split_axis(shape, axis);
        let xs = self.value(x).data();
        let mut out = vec![T::zero(); xs.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |k: usize| (o * len + k) * inner + i;
                let total = (0..len).map(|k| xs[at(k)]).sum::<T>();
                for k in 0..len {
                    out[at(k)] = xs[at(k)] / total;
                }
            }
        }
        let value = Tensor::from_vec(self.shape(x), out)?;
        Ok(self.push(value, Op::Normalize(AxisNode { x, outer, len, inner }), &[x]))
    }
}

pub(crate) fn softmax_backward<T: Real>(node: &AxisNode, y: &[T], dy: &[T], sink: &mut GradSink<'_, T>) {
    let Some(dx) = sink.buf(node.x) else { return };
    let (len, inner) = (node.len, node.inner);
    for o in 0..node.outer {
        for i in 0..inner {
            let at = |k: usize| (o * len + k) * inner + i;
            let dot = (0..len).map(|k| dy[at(k)] * y[at(k)]).sum::<T>();
            for k in 0..len {
                dx[at(k)] += y[at(k)] * (dy[at(k)] - dot);
            }
        }
    }
}

pub(crate) fn normalize_backward<T: Real>(node: &AxisNode, y: &[T], dy: &[T], sink: &mut GradSink<'_, T>) {
    let xs = sink.value(node.x).data();
    let (len, inner) = (node.len, node.inner);
    let Some(dx) = sink.buf(node.x) else { return };
    for o in 0..node.outer {
        for i in 0..inner {
            let at = |k: usize| (o * len + k) * inner + i;
            let total = (0..len).map(|k| xs[at(k)]).sum::<T>();
            let dot = (0..len).map(|k| dy[at(k)] * y[at(k)]).sum::<T>();
            for k in 0..len {
                dx[at(k)] += (dy[at(k)] - dot) / total;
            }
        }
    }
}
