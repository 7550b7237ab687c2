use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{dim_err, Result};
use crate::graph::{GradSink, Op, Var};
use crate::{Graph, Real, Tensor};

#[derive(Clone, Copy, Debug)]
pub(crate) enum UnaryKind {
    Relu,
    Tanh,
    Sigmoid,
}

fn sigmoid<T: Real>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

impl<T: Real> Graph<T> {
    fn unary(&mut self, x: Var, kind: UnaryKind) -> Var {
        let value = match kind {
            UnaryKind::Relu => self.value(x).map(|v| if v > T::zero() { v } else { T::zero() }),
            UnaryKind::Tanh => self.value(x).map(|v| v.tanh()),
            UnaryKind::Sigmoid => self.value(x).map(sigmoid),
        };
        self.push(value, Op::Unary(x, kind), &[x])
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, UnaryKind::Relu)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, UnaryKind::Tanh)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, UnaryKind::Sigmoid)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(dim_err(op, format!("{:?} vs {:?}", self.shape(a), self.shape(b))));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let out: Vec<T> = self.value(a).data().iter().zip(self.value(b).data()).map(|(&x, &y)| x + y).collect();
        let value = Tensor::from_vec(self.shape(a), out)?;
        Ok(self.push(value, Op::Add(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let out: Vec<T> = self.value(a).data().iter().zip(self.value(b).data()).map(|(&x, &y)| x * y).collect();
        let value = Tensor::from_vec(self.shape(a), out)?;
        Ok(self.push(value, Op::Mul(a, b), &[a, b]))
    }

    pub fn scale(&mut self, x: Var, c: T) -> Var {
        let value = self.value(x).map(|v| v * c);
        self.push(value, Op::Scale(x, c), &[x])
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().copied().sum::<T>();
        self.push(Tensor::scalar(s), Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let s = t.data().iter().copied().sum::<T>() / T::from_f64(t.numel().max(1) as f64);
        self.push(Tensor::scalar(s), Op::Mean(x), &[x])
    }
}

pub(crate) fn unary_backward<T: Real>(x: Var, kind: UnaryKind, y: &[T], dy: &[T], sink: &mut GradSink<'_, T>) {
    if !sink.wants(x) {
        return;
    }
    let dx: Vec<T> = match kind {
        UnaryKind::Relu => dy
            .iter()
            .zip(sink.value(x).data())
            .map(|(&g, &v)| if v > T::zero() { g } else { T::zero() })
            .collect(),
        UnaryKind::Tanh => dy.iter().zip(y).map(|(&g, &o)| g * (T::one() - o * o)).collect(),
        UnaryKind::Sigmoid => dy.iter().zip(y).map(|(&g, &o)| g * o * (T::one() - o)).collect(),
    };
    sink.add_vec(x, dx);
}

pub(crate) fn mul_backward<T: Real>(a: Var, b: Var, dy: &[T], sink: &mut GradSink<'_, T>) {
    let (av, bv) = (sink.value(a).data(), sink.value(b).data());
    if sink.wants(a) {
        let g: Vec<T> = dy.iter().zip(bv).map(|(&d, &v)| d * v).collect();
        sink.add_vec(a, g);
    }
    if sink.wants(b) {
        let g: Vec<T> = dy.iter().zip(av).map(|(&d, &v)| d * v).collect();
        sink.add_vec(b, g);
    }
}

pub(crate) fn broadcast_backward<T: Real>(x: Var, g: T, sink: &mut GradSink<'_, T>) {
    let n = sink.value(x).numel();
    sink.add_vec(x, vec![g; n]);
}
