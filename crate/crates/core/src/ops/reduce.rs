//! Mask-weighted spatial sums, gated combinations, and axis plumbing
//! (stack, narrow, concat).

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{dim_err, Result};
use crate::graph::{GradSink, Op, Var};
use crate::tensor::split_axis;
use crate::{Graph, Real, Tensor};

pub(crate) struct WssNode {
    mask: Var,
    maps: Var,
    nk: usize,
    labels: usize,
    plane: usize,
}

pub(crate) struct NarrowNode {
    x: Var,
    outer: usize,
    len: usize,
    inner: usize,
    start: usize,
    count: usize,
}

pub(crate) struct ConcatNode {
    a: Var,
    b: Var,
    outer: usize,
    la: usize,
    lb: usize,
    inner: usize,
}

impl<T: Real> Graph<T> {
    /// `out[n,k,l] = sum_{x,y} mask[n,k,x,y] * maps[n,k,l,x,y]`.
    ///
    /// The mask of head `k` is shared by every label channel of that head.
    pub fn weighted_spatial_sum(&mut self, mask: Var, maps: Var) -> Result<Var> {
        let (ms, ps) = (self.shape(mask), self.shape(maps));
        let (&[n, k, h, w], &[pn, pk, l, ph, pw]) = (&ms[..], &ps[..]) else {
            return Err(dim_err(
                "weighted_spatial_sum",
                format!("mask must be [N,K,H,W] and maps [N,K,L,H,W], got {:?} and {:?}", ms, ps),
            ));
        };
        if (n, k, h, w) != (pn, pk, ph, pw) {
            return Err(dim_err(
                "weighted_spatial_sum",
                format!("mask {:?} disagrees with maps {:?} on axes N,K,H,W", ms, ps),
            ));
        }
        let plane = h * w;
        let (mv, pv) = (self.value(mask).data(), self.value(maps).data());
        let mut out = Vec::with_capacity(n * k * l);
        for nk in 0..n * k {
            let m = &mv[nk * plane..(nk + 1) * plane];
            for li in 0..l {
                let p = &pv[(nk * l + li) * plane..(nk * l + li + 1) * plane];
                out.push(m.iter().zip(p).map(|(&a, &b)| a * b).sum::<T>());
            }
        }
        let value = Tensor::from_vec(&[n, k, l], out)?;
        let node = WssNode {
            mask,
            maps,
            nk: n * k,
            labels: l,
            plane,
        };
        Ok(self.push(value, Op::WeightedSpatialSum(node), &[mask, maps]))
    }

    /// `out[n,:] = sum_k gates[n,k] * values[n,k,:]` for `gates: [N,K]`,
    /// `values: [N,K,L]`. Terms are accumulated in increasing `k`.
    pub fn gate_combine(&mut self, gates: Var, values: Var) -> Result<Var> {
        let (gs, vs) = (self.shape(gates), self.shape(values));
        let (&[n, k], &[vn, vk, l]) = (&gs[..], &vs[..]) else {
            return Err(dim_err(
                "gate_combine",
                format!("gates must be [N,K] and values [N,K,L], got {:?} and {:?}", gs, vs),
            ));
        };
        if (n, k) != (vn, vk) {
            return Err(dim_err("gate_combine", format!("gates {:?} vs values {:?} on axes N,K", gs, vs)));
        }
        let (gv, vv) = (self.value(gates).data(), self.value(values).data());
        let mut out = vec![T::zero(); n * l];
        for b in 0..n {
            let row = &mut out[b * l..(b + 1) * l];
            for j in 0..k {
                let g = gv[b * k + j];
                let src = &vv[(b * k + j) * l..(b * k + j + 1) * l];
                row.iter_mut().zip(src).for_each(|(o, &v)| *o += g * v);
            }
        }
        let value = Tensor::from_vec(&[n, l], out)?;
        Ok(self.push(value, Op::GateCombine(gates, values), &[gates, values]))
    }

    /// Stacks equally shaped `[N, ...]` tensors into `[N, M, ...]`.
    pub fn stack(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(dim_err("stack", "nothing to stack"));
        };
        let shape = self.shape(first).to_vec();
        if shape.is_empty() {
            return Err(dim_err("stack", "operands need a batch axis"));
        }
        for &p in parts {
            if self.shape(p) != shape.as_slice() {
                return Err(dim_err("stack", format!("{:?} vs {:?}", self.shape(p), shape)));
            }
        }
        let n = shape[0];
        let per: usize = shape[1..].iter().product();
        let mut out = Vec::with_capacity(n * parts.len() * per);
        for b in 0..n {
            for &p in parts {
                out.extend_from_slice(&self.value(p).data()[b * per..(b + 1) * per]);
            }
        }
        let mut oshape = vec![n, parts.len()];
        oshape.extend_from_slice(&shape[1..]);
        let value = Tensor::from_vec(&oshape, out)?;
        Ok(self.push(value, Op::Stack(parts.to_vec()), parts))
    }

    /// Slice `start..start+count` along `axis`.
    pub fn narrow(&mut self, x: Var, axis: usize, start: usize, count: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() || start + count > shape[axis] {
            return Err(dim_err(
                "narrow",
                format!("range {}..{} on axis {} of {:?}", start, start + count, axis, shape),
            ));
        }
        let (outer, len, inner) = split_axis(&shape, axis);
        let xs = self.value(x).data();
        let mut out = Vec::with_capacity(outer * count * inner);
        for o in 0..outer {
            let base = (o * len + start) * inner;
            out.extend_from_slice(&xs[base..base + count * inner]);
        }
        let mut oshape = shape.clone();
        oshape[axis] = count;
        let value = Tensor::from_vec(&oshape, out)?;
        let node = NarrowNode {
            x,
            outer,
            len,
            inner,
            start,
            count,
        };
        Ok(self.push(value, Op::Narrow(node), &[x]))
    }

    /// Concatenation along `axis`; all other extents must agree.
    pub fn concat(&mut self, a: Var, b: Var, axis: usize) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let compatible = sa.len() == sb.len()
            && axis < sa.len()
            && sa.iter().zip(&sb).enumerate().all(|(i, (x, y))| i == axis || x == y);
        if !compatible {
            return Err(dim_err("concat", format!("{:?} and {:?} along axis {}", sa, sb, axis)));
        }
        let (outer, la, inner) = split_axis(&sa, axis);
        let lb = sb[axis];
        let (av, bv) = (self.value(a).data(), self.value(b).data());
        let mut out = Vec::with_capacity(av.len() + bv.len());
        for o in 0..outer {
            out.extend_from_slice(&av[o * la * inner..(o + 1) * la * inner]);
            out.extend_from_slice(&bv[o * lb * inner..(o + 1) * lb * inner]);
        }
        let mut oshape = sa.clone();
        oshape[axis] = la + lb;
        let value = Tensor::from_vec(&oshape, out)?;
        let node = ConcatNode {
            a,
            b,
            outer,
            la,
            lb,
            inner,
        };
        Ok(self.push(value, Op::Concat(node), &[a, b]))
    }
}

pub(crate) fn wss_backward<T: Real>(node: &WssNode, dy: &[T], sink: &mut GradSink<'_, T>) {
    let (plane, l) = (node.plane, node.labels);
    let mv = sink.value(node.mask).data();
    let pv = sink.value(node.maps).data();
    if let Some(dm) = sink.buf(node.mask) {
        for nk in 0..node.nk {
            let d = &mut dm[nk * plane..(nk + 1) * plane];
            for li in 0..l {
                let g = dy[nk * l + li];
                let p = &pv[(nk * l + li) * plane..(nk * l + li + 1) * plane];
                d.iter_mut().zip(p).for_each(|(o, &v)| *o += g * v);
            }
        }
    }
    if let Some(dp) = sink.buf(node.maps) {
        for nk in 0..node.nk {
            let m = &mv[nk * plane..(nk + 1) * plane];
            for li in 0..l {
                let g = dy[nk * l + li];
                let d = &mut dp[(nk * l + li) * plane..(nk * l + li + 1) * plane];
                d.iter_mut().zip(m).for_each(|(o, &v)| *o += g * v);
            }
        }
    }
}

pub(crate) fn gate_combine_backward<T: Real>(gates: Var, values: Var, dy: &[T], sink: &mut GradSink<'_, T>) {
    let shape = sink.value(values).shape();
    let (n, k, l) = (shape[0], shape[1], shape[2]);
    let gv = sink.value(gates).data();
    let vv = sink.value(values).data();
    if let Some(dg) = sink.buf(gates) {
        for b in 0..n {
            let d = &dy[b * l..(b + 1) * l];
            for j in 0..k {
                let v = &vv[(b * k + j) * l..(b * k + j + 1) * l];
                dg[b * k + j] += d.iter().zip(v).map(|(&x, &y)| x * y).sum::<T>();
            }
        }
    }
    if let Some(dv) = sink.buf(values) {
        for b in 0..n {
            let d = &dy[b * l..(b + 1) * l];
            for j in 0..k {
                let g = gv[b * k + j];
                dv[(b * k + j) * l..(b * k + j + 1) * l]
                    .iter_mut()
                    .zip(d)
                    .for_each(|(o, &x)| *o += g * x);
            }
        }
    }
}

pub(crate) fn stack_backward<T: Real>(parts: &[Var], dy: &[T], sink: &mut GradSink<'_, T>) {
    let shape = sink.value(parts[0]).shape();
    let n = shape[0];
    let per: usize = shape[1..].iter().product();
    let m = parts.len();
    for (j, &p) in parts.iter().enumerate() {
        if let Some(dp) = sink.buf(p) {
            for b in 0..n {
                let src = &dy[(b * m + j) * per..(b * m + j + 1) * per];
                dp[b * per..(b + 1) * per].iter_mut().zip(src).for_each(|(o, &v)| *o += v);
            }
        }
    }
}

pub(crate) fn narrow_backward<T: Real>(node: &NarrowNode, dy: &[T], sink: &mut GradSink<'_, T>) {
    let Some(dx) = sink.buf(node.x) else { return };
    let chunk = node.count * node.inner;
    for o in 0..node.outer {
        let base = (o * node.len + node.start) * node.inner;
        dx[base..base + chunk]
            .iter_mut()
            .zip(&dy[o * chunk..(o + 1) * chunk])
            .for_each(|(d, &g)| *d += g);
    }
}

pub(crate) fn concat_backward<T: Real>(node: &ConcatNode, dy: &[T], sink: &mut GradSink<'_, T>) {
    let (ca, cb) = (node.la * node.inner, node.lb * node.inner);
    if let Some(da) = sink.buf(node.a) {
        for o in 0..node.outer {
            let src = &dy[o * (ca + cb)..o * (ca + cb) + ca];
            da[o * ca..(o + 1) * ca].iter_mut().zip(src).for_each(|(d, &g)| *d += g);
        }
    }
    if let Some(db) = sink.buf(node.b) {
        for o in 0..node.outer {
            let src = &dy[o * (ca + cb) + ca..(o + 1) * (ca + cb)];
            db[o * cb..(o + 1) * cb].iter_mut().zip(src).for_each(|(d, &g)| *d += g);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::init::Rng64;

    fn rand(rng: &mut Rng64, shape: &[usize]) -> Tensor<f64> {
        let n = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.uniform(-1.0, 1.0)).collect()).unwrap()
    }

    #[test]
    fn uniform_mask_gives_spatial_mean() {
        let mut rng = Rng64::new(1);
        let maps = rand(&mut rng, &[2, 3, 4, 3, 5]);
        let mut g = Graph::<f64>::new();
        let m = g.constant(Tensor::full(&[2, 3, 3, 5], 1.0 / 15.0));
        let p = g.constant(maps.clone());
        let y = g.weighted_spatial_sum(m, p).unwrap();
        for n in 0..2 {
            for k in 0..3 {
                for l in 0..4 {
                    let mean: f64 = maps.data()[((n * 3 + k) * 4 + l) * 15..][..15].iter().sum::<f64>() / 15.0;
                    assert!((g.value(y).at(&[n, k, l]) - mean).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn one_hot_mask_selects_location() {
        let mut rng = Rng64::new(2);
        let maps = rand(&mut rng, &[1, 2, 3, 4, 4]);
        let mut mask = Tensor::<f64>::zeros(&[1, 2, 4, 4]);
        mask.set(&[0, 0, 1, 2], 1.0);
        mask.set(&[0, 1, 3, 0], 1.0);
        let mut g = Graph::<f64>::new();
        let m = g.constant(mask);
        let p = g.constant(maps.clone());
        let y = g.weighted_spatial_sum(m, p).unwrap();
        for l in 0..3 {
            assert_eq!(g.value(y).at(&[0, 0, l]), maps.at(&[0, 0, l, 1, 2]));
            assert_eq!(g.value(y).at(&[0, 1, l]), maps.at(&[0, 1, l, 3, 0]));
        }
    }

    #[test]
    fn random_matches_double_loop() {
        let mut rng = Rng64::new(3);
        let mask = rand(&mut rng, &[2, 3, 5, 4]);
        let maps = rand(&mut rng, &[2, 3, 6, 5, 4]);
        let mut g = Graph::<f64>::new();
        let m = g.constant(mask.clone());
        let p = g.constant(maps.clone());
        let y = g.weighted_spatial_sum(m, p).unwrap();
        for n in 0..2 {
            for k in 0..3 {
                for l in 0..6 {
                    let mut s = 0.0;
                    for x in 0..5 {
                        for yy in 0..4 {
                            s += mask.at(&[n, k, x, yy]) * maps.at(&[n, k, l, x, yy]);
                        }
                    }
                    assert!((g.value(y).at(&[n, k, l]) - s).abs() <= 1e-6 * s.abs().max(1.0));
                }
            }
        }
    }

    #[test]
    fn spatial_mismatch_is_rejected() {
        let mut g = Graph::<f32>::new();
        let m = g.constant(Tensor::zeros(&[1, 2, 3, 3]));
        let p = g.constant(Tensor::zeros(&[1, 2, 4, 3, 4]));
        assert!(matches!(g.weighted_spatial_sum(m, p), Err(crate::Error::Dimension { .. })));
    }

    #[test]
    fn narrow_and_concat_roundtrip() {
        let mut rng = Rng64::new(4);
        let t = rand(&mut rng, &[3, 5, 2]);
        let mut g = Graph::<f64>::new();
        let x = g.constant(t.clone());
        let a = g.narrow(x, 1, 0, 2).unwrap();
        let b = g.narrow(x, 1, 2, 3).unwrap();
        let c = g.concat(a, b, 1).unwrap();
        assert_eq!(g.value(c), &t);
    }

    #[test]
    fn stack_interleaves_by_batch() {
        let mut g = Graph::<f64>::new();
        let a = g.constant(Tensor::from_f64(&[2, 2], &[1., 2., 3., 4.]).unwrap());
        let b = g.constant(Tensor::from_f64(&[2, 2], &[5., 6., 7., 8.]).unwrap());
        let s = g.stack(&[a, b]).unwrap();
        assert_eq!(g.shape(s), &[2, 2, 2]);
        assert_eq!(g.value(s).data(), &[1., 2., 5., 6., 3., 4., 7., 8.]);
    }
}
