//! Per-channel batch normalization for `[N,C,H,W]` maps.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{dim_err, Result};
use crate::graph::{GradSink, Op, Var};
use crate::{Graph, Real, Tensor};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

pub(crate) struct BatchNormNode<T> {
    x: Var,
    gamma: Var,
    beta: Var,
    xhat: Vec<T>,
    inv_std: Vec<T>,
    train: bool,
}

/// Running statistics updated by training-mode batch norm and read in eval mode.
pub struct RunningStats<'a, T> {
    pub mean: &'a mut [T],
    pub var: &'a mut [T],
}

impl<T: Real> Graph<T> {
    /// Batch norm with affine `gamma`, `beta` (both `[C]`).
    ///
    /// In training mode the batch moments normalize the input and the running
    /// statistics move by [`BN_MOMENTUM`] (the variance update uses the
    /// unbiased estimate). In eval mode the running statistics are used as
    /// constants.
    pub fn batch_norm2d(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running: RunningStats<'_, T>,
        train: bool,
    ) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let [n, c, h, w] = shape[..] else {
            return Err(dim_err("batch_norm2d", format!("expected [N,C,H,W], got {:?}", shape)));
        };
        for (name, v) in [("gamma", gamma), ("beta", beta)] {
            if self.shape(v) != [c] {
                return Err(dim_err(
                    "batch_norm2d",
                    format!("{} must be [{}], got {:?}", name, c, self.shape(v)),
                ));
            }
        }
        if running.mean.len() != c || running.var.len() != c {
            return Err(dim_err("batch_norm2d", "running statistics length differs from channel count"));
        }
        let hw = h * w;
        let m = n * hw;
        if train && m < 2 {
            return Err(dim_err("batch_norm2d", "training mode needs more than one value per channel"));
        }
        let xs = self.value(x).data();
        let eps = T::from_f64(BN_EPS);
        let mut inv_std = vec![T::zero(); c];
        let mut mean = vec![T::zero(); c];
        if train {
            let mf = T::from_f64(m as f64);
            let mom = T::from_f64(BN_MOMENTUM);
            for ch in 0..c {
                let mut s = T::zero();
                for b in 0..n {
                    s += xs[(b * c + ch) * hw..(b * c + ch + 1) * hw].iter().copied().sum::<T>();
                }
                let mu = s / mf;
                let mut sq = T::zero();
                for b in 0..n {
                    for &v in &xs[(b * c + ch) * hw..(b * c + ch + 1) * hw] {
                        sq += (v - mu) * (v - mu);
                    }
                }
                let var = sq / mf;
                mean[ch] = mu;
                inv_std[ch] = T::one() / (var + eps).sqrt();
                let unbiased = sq / T::from_f64((m - 1) as f64);
                running.mean[ch] = (T::one() - mom) * running.mean[ch] + mom * mu;
                running.var[ch] = (T::one() - mom) * running.var[ch] + mom * unbiased;
            }
        } else {
            for ch in 0..c {
                mean[ch] = running.mean[ch];
                inv_std[ch] = T::one() / (running.var[ch] + eps).sqrt();
            }
        }
        let gs = self.value(gamma).data();
        let bs = self.value(beta).data();
        let mut xhat = vec![T::zero(); xs.len()];
        let mut out = vec![T::zero(); xs.len()];
        for (i, (plane, oplane)) in xs.chunks(hw).zip(out.chunks_mut(hw)).enumerate() {
            let ch = i % c;
            let xh = &mut xhat[i * hw..(i + 1) * hw];
            for ((o, e), &v) in oplane.iter_mut().zip(xh.iter_mut()).zip(plane) {
                *e = (v - mean[ch]) * inv_std[ch];
                *o = gs[ch] * *e + bs[ch];
            }
        }
        let value = Tensor::from_vec(&shape, out)?;
        let node = BatchNormNode {
            x,
            gamma,
            beta,
            xhat,
            inv_std,
            train,
        };
        Ok(self.push(value, Op::BatchNorm(node), &[x, gamma, beta]))
    }
}

pub(crate) fn backward<T: Real>(node: &BatchNormNode<T>, dy: &[T], sink: &mut GradSink<'_, T>) {
    let shape = sink.value(node.x).shape();
    let (n, c, hw) = (shape[0], shape[1], shape[2] * shape[3]);
    let m = T::from_f64((n * hw) as f64);
    let mut dgamma = vec![T::zero(); c];
    let mut dbeta = vec![T::zero(); c];
    for (i, (g, e)) in dy.chunks(hw).zip(node.xhat.chunks(hw)).enumerate() {
        let ch = i % c;
        for (&gv, &ev) in g.iter().zip(e) {
            dgamma[ch] += gv * ev;
            dbeta[ch] += gv;
        }
    }
    let gs = sink.value(node.gamma).data();
    if sink.wants(node.x) {
        let mut dx = vec![T::zero(); dy.len()];
        for (i, ((g, e), d)) in dy.chunks(hw).zip(node.xhat.chunks(hw)).zip(dx.chunks_mut(hw)).enumerate() {
            let ch = i % c;
            let scale = gs[ch] * node.inv_std[ch];
            if node.train {
                // dxhat = dy * gamma; sums over the channel are dbeta*gamma and dgamma*gamma.
                let sum_d = dbeta[ch];
                let sum_dx = dgamma[ch];
                for ((o, &gv), &ev) in d.iter_mut().zip(g).zip(e) {
                    *o = scale * (gv - sum_d / m - ev * sum_dx / m);
                }
            } else {
                for (o, &gv) in d.iter_mut().zip(g) {
                    *o = scale * gv;
                }
            }
        }
        sink.add_vec(node.x, dx);
    }
    sink.add_vec(node.gamma, dgamma);
    sink.add_vec(node.beta, dbeta);
}
