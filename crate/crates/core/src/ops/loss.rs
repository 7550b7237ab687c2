use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{contract_err, dim_err, Result};
use crate::graph::{GradSink, Op, Var};
use crate::{Graph, Real, Tensor};

/// Allowed deviation of a probability row from unit sum.
pub const ROW_SUM_TOL: f64 = 1e-4;

/// Probabilities below this are clamped before taking the logarithm.
pub const PROB_FLOOR: f64 = 1e-12;

impl<T: Real> Graph<T> {
    /// Mean negative log-likelihood of `targets` under probability rows
    /// `pred: [N,L]`. Every row must sum to one within [`ROW_SUM_TOL`].
    pub fn nll_from_probs(&mut self, pred: Var, targets: &[usize]) -> Result<Var> {
        let shape = self.shape(pred);
        let [n, l] = shape[..] else {
            return Err(dim_err("nll_from_probs", format!("expected [N,L], got {:?}", shape)));
        };
        if targets.len() != n {
            return Err(dim_err(
                "nll_from_probs",
                format!("{} targets for batch axis of length {}", targets.len(), n),
            ));
        }
        let p = self.value(pred).data();
        let floor = T::from_f64(PROB_FLOOR);
        let mut total = T::zero();
        for (b, &t) in targets.iter().enumerate() {
            let row = &p[b * l..(b + 1) * l];
            let s = row.iter().copied().sum::<T>().as_f64();
            if !((s - 1.0).abs() <= ROW_SUM_TOL) || row.iter().any(|&v| v < T::zero()) {
                return Err(contract_err("nll_from_probs", format!("row {} is not a distribution (sum {})", b, s)));
            }
            if t >= l {
                return Err(contract_err("nll_from_probs", format!("target {} outside {} labels", t, l)));
            }
            total -= row[t].max(floor).ln();
        }
        let value = Tensor::scalar(total / T::from_f64(n.max(1) as f64));
        Ok(self.push(value, Op::Nll(pred, targets.to_vec()), &[pred]))
    }

    /// Orthogonality penalty over flattened attention masks
    /// `masks: [N,K,H,W]`: `sum_{i != j} (h_i . h_j)^2`, summed over ordered
    /// head pairs and averaged over the batch. Zero when `K == 1`.
    pub fn head_regularizer(&mut self, masks: Var) -> Result<Var> {
        let shape = self.shape(masks);
        let [n, k, h, w] = shape[..] else {
            return Err(dim_err("head_regularizer", format!("expected [N,K,H,W], got {:?}", shape)));
        };
        let plane = h * w;
        let mv = self.value(masks).data();
        let mut total = T::zero();
        for b in 0..n {
            let dots = pair_dots(&mv[b * k * plane..(b + 1) * k * plane], k, plane);
            for i in 0..k {
                for j in 0..k {
                    if i != j {
                        total += dots[i * k + j] * dots[i * k + j];
                    }
                }
            }
        }
        let value = Tensor::scalar(total / T::from_f64(n.max(1) as f64));
        Ok(self.push(value, Op::HeadReg(masks), &[masks]))
    }
}

fn pair_dots<T: Real>(heads: &[T], k: usize, plane: usize) -> Vec<T> {
    let mut dots = vec![T::zero(); k * k];
    for i in 0..k {
        for j in i..k {
            let d = heads[i * plane..(i + 1) * plane]
                .iter()
                .zip(&heads[j * plane..(j + 1) * plane])
                .map(|(&a, &b)| a * b)
                .sum::<T>();
            dots[i * k + j] = d;
            dots[j * k + i] = d;
        }
    }
    dots
}

pub(crate) fn nll_backward<T: Real>(pred: Var, targets: &[usize], dy: &[T], sink: &mut GradSink<'_, T>) {
    let p = sink.value(pred);
    let l = p.shape()[1];
    let scale = dy[0] / T::from_f64(targets.len().max(1) as f64);
    let floor = T::from_f64(PROB_FLOOR);
    let probs: Vec<T> = targets.iter().enumerate().map(|(b, &t)| p.data()[b * l + t]).collect();
    if let Some(dp) = sink.buf(pred) {
        for (b, (&t, &pv)) in targets.iter().zip(&probs).enumerate() {
            dp[b * l + t] -= scale / pv.max(floor);
        }
    }
}

pub(crate) fn head_reg_backward<T: Real>(masks: Var, dy: &[T], sink: &mut GradSink<'_, T>) {
    let m = sink.value(masks);
    let (n, k, plane) = (m.shape()[0], m.shape()[1], m.shape()[2] * m.shape()[3]);
    let mv = m.data();
    // d/dh_i of sum_{i != j} d_ij^2 with symmetric d_ij is sum_{j != i} 4 d_ij h_j.
    let scale = dy[0] * T::from_f64(4.0 / n.max(1) as f64);
    let Some(dm) = sink.buf(masks) else { return };
    for b in 0..n {
        let heads = &mv[b * k * plane..(b + 1) * k * plane];
        let dots = pair_dots(heads, k, plane);
        for i in 0..k {
            let di = &mut dm[(b * k + i) * plane..(b * k + i + 1) * plane];
            for j in 0..k {
                if i == j {
                    continue;
                }
                let c = scale * dots[i * k + j];
                di.iter_mut()
                    .zip(&heads[j * plane..(j + 1) * plane])
                    .for_each(|(o, &hj)| *o += c * hj);
            }
        }
    }
}
