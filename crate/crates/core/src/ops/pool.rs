use alloc::format;
use alloc::vec::Vec;

use crate::error::{dim_err, Result};
use crate::graph::{GradSink, Op, Var};
use crate::{Graph, Real, Tensor};

pub(crate) struct MaxPoolNode {
    x: Var,
    /// Flat input offset of the winner for each output element.
    argmax: Vec<usize>,
}

fn nchw(op: &'static str, shape: &[usize]) -> Result<(usize, usize, usize, usize)> {
    match *shape {
        [n, c, h, w] => Ok((n, c, h, w)),
        _ => Err(dim_err(op, format!("expected [N,C,H,W], got {:?}", shape))),
    }
}

impl<T: Real> Graph<T> {
    /// Non-overlapping `k x k` max pooling with stride `k`; trailing rows and
    /// columns that do not fill a window are dropped.
    pub fn max_pool2d(&mut self, x: Var, k: usize) -> Result<Var> {
        let (n, c, h, w) = nchw("max_pool2d", self.shape(x))?;
        if k == 0 || h < k || w < k {
            return Err(dim_err(
                "max_pool2d",
                format!("window {} does not fit spatial extent {}x{} (axes 2,3)", k, h, w),
            ));
        }
        let (ho, wo) = (h / k, w / k);
        let xs = self.value(x).data();
        let mut out = Vec::with_capacity(n * c * ho * wo);
        let mut argmax = Vec::with_capacity(n * c * ho * wo);
        for plane in 0..n * c {
            let base = plane * h * w;
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut best = base + oy * k * w + ox * k;
                    for dy in 0..k {
                        for dx in 0..k {
                            let off = base + (oy * k + dy) * w + ox * k + dx;
                            if xs[off] > xs[best] {
                                best = off;
                            }
                        }
                    }
                    out.push(xs[best]);
                    argmax.push(best);
                }
            }
        }
        let value = Tensor::from_vec(&[n, c, ho, wo], out)?;
        Ok(self.push(value, Op::MaxPool(MaxPoolNode { x, argmax }), &[x]))
    }

    /// Spatial mean: `[N,C,H,W] -> [N,C]`.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let (n, c, h, w) = nchw("global_avg_pool", self.shape(x))?;
        let hw = h * w;
        let inv = T::one() / T::from_f64(hw as f64);
        let out: Vec<T> = self
            .value(x)
            .data()
            .chunks(hw)
            .map(|p| p.iter().copied().sum::<T>() * inv)
            .collect();
        let value = Tensor::from_vec(&[n, c], out)?;
        Ok(self.push(value, Op::GlobalAvgPool(x), &[x]))
    }
}

pub(crate) fn max_pool_backward<T: Real>(node: &MaxPoolNode, dy: &[T], sink: &mut GradSink<'_, T>) {
    if let Some(dx) = sink.buf(node.x) {
        for (&src, &g) in node.argmax.iter().zip(dy) {
            dx[src] += g;
        }
    }
}

pub(crate) fn gap_backward<T: Real>(x: Var, dy: &[T], sink: &mut GradSink<'_, T>) {
    let shape = sink.value(x).shape();
    let hw = shape[2] * shape[3];
    let inv = T::one() / T::from_f64(hw as f64);
    if let Some(dx) = sink.buf(x) {
        for (plane, &g) in dx.chunks_mut(hw).zip(dy) {
            plane.iter_mut().for_each(|v| *v += g * inv);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::init::Rng64;

    #[test]
    fn two_by_two_picks_max() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::from_f64(&[1, 1, 2, 2], &[1., 2., 3., 4.]).unwrap());
        let y = g.max_pool2d(x, 2).unwrap();
        assert_eq!(g.value(y).data(), &[4.0]);
    }

    #[test]
    fn matches_loop_oracle() {
        let mut rng = Rng64::new(5);
        let data: Vec<f64> = (0..2 * 3 * 7 * 6).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let xt = Tensor::from_vec(&[2, 3, 7, 6], data).unwrap();
        let mut g = Graph::<f64>::new();
        let x = g.constant(xt.clone());
        let y = g.max_pool2d(x, 2).unwrap();
        assert_eq!(g.shape(y), &[2, 3, 3, 3]);
        for n in 0..2 {
            for c in 0..3 {
                for oy in 0..3 {
                    for ox in 0..3 {
                        let mut m = f64::NEG_INFINITY;
                        for dy in 0..2 {
                            for dx in 0..2 {
                                m = m.max(xt.at(&[n, c, 2 * oy + dy, 2 * ox + dx]));
                            }
                        }
                        assert_eq!(g.value(y).at(&[n, c, oy, ox]), m);
                    }
                }
            }
        }
    }

    #[test]
    fn gradient_routes_to_winner() {
        let mut g = Graph::<f64>::new();
        let x = g.param(Tensor::from_f64(&[1, 1, 2, 2], &[1., 5., 3., 4.]).unwrap());
        let y = g.max_pool2d(x, 2).unwrap();
        let l = g.sum(y);
        g.backward(l).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[0., 1., 0., 0.]);
    }
}
