use alloc::format;
use alloc::vec;

use crate::error::{dim_err, Result};
use crate::graph::{GradSink, Op, Var};
use crate::{Graph, Real, Tensor};

pub(crate) struct LinearNode {
    x: Var,
    w: Var,
    b: Option<Var>,
}

impl<T: Real> Graph<T> {
    /// `x: [N,in]`, `w: [out,in]`, `bias: [out]` -> `x w^T + bias`.
    pub fn linear(&mut self, x: Var, w: Var, bias: Option<Var>) -> Result<Var> {
        let (xs, ws) = (self.shape(x), self.shape(w));
        let (&[n, fin], &[fout, win]) = (&xs[..], &ws[..]) else {
            return Err(dim_err("linear", format!("input {:?} / weight {:?} must both be rank 2", xs, ws)));
        };
        if fin != win {
            return Err(dim_err(
                "linear",
                format!("input features (axis 1) = {} but weight expects {}", fin, win),
            ));
        }
        if let Some(b) = bias {
            if self.shape(b) != [fout] {
                return Err(dim_err("linear", format!("bias must be [{}], got {:?}", fout, self.shape(b))));
            }
        }
        let mut out = vec![T::zero(); n * fout];
        T::gemm(false, true, n, fout, fin, T::one(), self.value(x).data(), self.value(w).data(), T::zero(), &mut out);
        if let Some(b) = bias {
            let bs = self.value(b).data();
            for row in out.chunks_mut(fout) {
                row.iter_mut().zip(bs).for_each(|(o, &bv)| *o += bv);
            }
        }
        let value = Tensor::from_vec(&[n, fout], out)?;
        let mut inputs = vec![x, w];
        inputs.extend(bias);
        Ok(self.push(value, Op::Linear(LinearNode { x, w, b: bias }), &inputs))
    }
}

pub(crate) fn backward<T: Real>(node: &LinearNode, dy: &[T], sink: &mut GradSink<'_, T>) {
    let xs = sink.value(node.x);
    let (n, fin) = (xs.shape()[0], xs.shape()[1]);
    let fout = sink.value(node.w).shape()[0];
    if let Some(b) = node.b {
        if let Some(db) = sink.buf(b) {
            for row in dy.chunks(fout) {
                db.iter_mut().zip(row).for_each(|(d, &g)| *d += g);
            }
        }
    }
    if let Some(dw) = sink.buf(node.w) {
        T::gemm(true, false, fout, fin, n, T::one(), dy, xs.data(), T::one(), dw);
    }
    let ws = sink.value(node.w).data();
    if let Some(dx) = sink.buf(node.x) {
        T::gemm(false, false, n, fin, fout, T::one(), dy, ws, T::one(), dx);
    }
}
