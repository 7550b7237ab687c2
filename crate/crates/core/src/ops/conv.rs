//! 2-d convolution (cross-correlation) through im2col and GEMM.

use alloc::format;
use alloc::vec;

use crate::error::{dim_err, Result};
use crate::graph::{GradSink, Op, Var};
use crate::{Graph, Real, Tensor};

pub(crate) struct Conv2dNode {
    x: Var,
    w: Var,
    b: Option<Var>,
    geom: Geom,
}

#[derive(Clone, Copy)]
struct Geom {
    n: usize,
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

impl Geom {
    fn ck(&self) -> usize {
        self.cin * self.kh * self.kw
    }
    fn out_plane(&self) -> usize {
        self.ho * self.wo
    }
}

fn geometry(x: &[usize], w: &[usize], stride: usize, pad: usize) -> Result<Geom> {
    if x.len() != 4 {
        return Err(dim_err("conv2d", format!("input must be [N,C,H,W], got {:?}", x)));
    }
    if w.len() != 4 {
        return Err(dim_err("conv2d", format!("kernel must be [Cout,Cin,kh,kw], got {:?}", w)));
    }
    if x[1] != w[1] {
        return Err(dim_err(
            "conv2d",
            format!("input channels (axis 1 of input) = {} but kernel Cin (axis 1 of kernel) = {}", x[1], w[1]),
        ));
    }
    if w[2] == 0 || w[3] == 0 || stride == 0 {
        return Err(dim_err("conv2d", "kernel extents and stride must be >= 1"));
    }
    let (hp, wp) = (x[2] + 2 * pad, x[3] + 2 * pad);
    if hp < w[2] || wp < w[3] {
        return Err(dim_err(
            "conv2d",
            format!("kernel {}x{} (axes 2,3) exceeds padded input {}x{}", w[2], w[3], hp, wp),
        ));
    }
    Ok(Geom {
        n: x[0],
        cin: x[1],
        h: x[2],
        w: x[3],
        cout: w[0],
        kh: w[2],
        kw: w[3],
        stride,
        pad,
        ho: (hp - w[2]) / stride + 1,
        wo: (wp - w[3]) / stride + 1,
    })
}

/// Output columns `ox` whose input column `ox * stride + kj - pad` lies
/// inside `0..w`.
fn valid_cols(g: &Geom, kj: usize) -> (usize, usize) {
    let lo = (g.pad.saturating_sub(kj)).div_ceil(g.stride).min(g.wo);
    // largest ox with ox * stride + kj < w + pad
    let limit = g.w + g.pad;
    let hi = if limit <= kj { 0 } else { ((limit - kj - 1) / g.stride + 1).min(g.wo) };
    (lo, hi.max(lo))
}

/// Unfolded columns per chunk are kept near this many elements so the
/// GEMM operands stay cache resident.
const CHUNK_ELEMS: usize = 1 << 18;

/// Splits the batch into runs of samples; yields the first sample index and
/// the geometry of the run.
fn chunks(g: &Geom) -> impl Iterator<Item = (usize, Geom)> {
    let per = (CHUNK_ELEMS / (g.ck() * g.out_plane()).max(1)).clamp(1, g.n.max(1));
    let g = *g;
    (0..g.n).step_by(per).map(move |n0| (n0, Geom { n: per.min(g.n - n0), ..g }))
}

/// Unfolds a run of samples into `col: [Cin*kh*kw, N*Ho*Wo]`.
fn im2col<T: Real>(g: &Geom, x: &[T], col: &mut [T]) {
    let p = g.out_plane();
    let np = g.n * p;
    for c in 0..g.cin {
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let (lo, hi) = valid_cols(g, kj);
                for n in 0..g.n {
                    let plane = &x[(n * g.cin + c) * g.h * g.w..][..g.h * g.w];
                    let dst = &mut col[row * np + n * p..][..p];
                    for oy in 0..g.ho {
                        let out = &mut dst[oy * g.wo..(oy + 1) * g.wo];
                        let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                        if iy < 0 || iy >= g.h as isize {
                            out.fill(T::zero());
                            continue;
                        }
                        let src = &plane[iy as usize * g.w..][..g.w];
                        out[..lo].fill(T::zero());
                        out[hi..].fill(T::zero());
                        let x0 = lo * g.stride + kj - g.pad;
                        if g.stride == 1 {
                            out[lo..hi].copy_from_slice(&src[x0..x0 + hi - lo]);
                        } else {
                            for (i, o) in out[lo..hi].iter_mut().enumerate() {
                                *o = src[x0 + i * g.stride];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: accumulates `col` back into `dx`.
fn col2im<T: Real>(g: &Geom, col: &[T], dx: &mut [T]) {
    let p = g.out_plane();
    let np = g.n * p;
    for c in 0..g.cin {
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let (lo, hi) = valid_cols(g, kj);
                if lo >= hi {
                    continue;
                }
                for n in 0..g.n {
                    let plane = &mut dx[(n * g.cin + c) * g.h * g.w..][..g.h * g.w];
                    let src = &col[row * np + n * p..][..p];
                    for oy in 0..g.ho {
                        let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                        if iy < 0 || iy >= g.h as isize {
                            continue;
                        }
                        let dst = &mut plane[iy as usize * g.w..][..g.w];
                        let x0 = lo * g.stride + kj - g.pad;
                        for (i, &v) in src[oy * g.wo + lo..oy * g.wo + hi].iter().enumerate() {
                            dst[x0 + i * g.stride] += v;
                        }
                    }
                }
            }
        }
    }
}

/// `[Cout, N*P]` to `[N, Cout, P]`.
fn unbatch<T: Real>(g: &Geom, src: &[T], dst: &mut [T]) {
    let p = g.out_plane();
    for co in 0..g.cout {
        for n in 0..g.n {
            dst[(n * g.cout + co) * p..][..p].copy_from_slice(&src[(co * g.n + n) * p..][..p]);
        }
    }
}

/// `[N, Cout, P]` to `[Cout, N*P]`.
fn batch_major<T: Real>(g: &Geom, src: &[T], dst: &mut [T]) {
    let p = g.out_plane();
    for co in 0..g.cout {
        for n in 0..g.n {
            dst[(co * g.n + n) * p..][..p].copy_from_slice(&src[(n * g.cout + co) * p..][..p]);
        }
    }
}

impl<T: Real> Graph<T> {
    /// Cross-correlation of `x: [N,Cin,H,W]` with `w: [Cout,Cin,kh,kw]`,
    /// optional per-output-channel `bias: [Cout]`, symmetric zero padding.
    pub fn conv2d(&mut self, x: Var, w: Var, bias: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        let g = geometry(self.shape(x), self.shape(w), stride, pad)?;
        if let Some(b) = bias {
            if self.shape(b) != [g.cout] {
                return Err(dim_err(
                    "conv2d",
                    format!("bias must be [{}], got {:?}", g.cout, self.shape(b)),
                ));
            }
        }
        let xs = self.value(x).data();
        let ws = self.value(w).data();
        let (ck, p) = (g.ck(), g.out_plane());
        let mut out = vec![T::zero(); g.n * g.cout * p];
        for (n0, c) in chunks(&g) {
            let np = c.n * p;
            let mut col = vec![T::zero(); ck * np];
            im2col(&c, &xs[n0 * g.cin * g.h * g.w..], &mut col);
            let mut y = vec![T::zero(); g.cout * np];
            T::gemm(false, false, g.cout, np, ck, T::one(), ws, &col, T::zero(), &mut y);
            unbatch(&c, &y, &mut out[n0 * g.cout * p..]);
        }
        if let Some(b) = bias {
            let bs = self.value(b).data();
            for (i, plane) in out.chunks_mut(p).enumerate() {
                let bv = bs[i % g.cout];
                plane.iter_mut().for_each(|v| *v += bv);
            }
        }
        let value = Tensor::from_vec(&[g.n, g.cout, g.ho, g.wo], out)?;
        let mut inputs = vec![x, w];
        inputs.extend(bias);
        Ok(self.push(value, Op::Conv2d(Conv2dNode { x, w, b: bias, geom: g }), &inputs))
    }
}

pub(crate) fn backward<T: Real>(node: &Conv2dNode, dy: &[T], sink: &mut GradSink<'_, T>) {
    let g = node.geom;
    let (ck, p) = (g.ck(), g.out_plane());

    if let Some(b) = node.b {
        if let Some(db) = sink.buf(b) {
            for (i, plane) in dy.chunks(p).enumerate() {
                db[i % g.cout] += plane.iter().copied().sum::<T>();
            }
        }
    }

    let want_w = sink.wants(node.w);
    let want_x = sink.wants(node.x);
    if !want_w && !want_x {
        return;
    }
    let mut dw = vec![T::zero(); if want_w { g.cout * ck } else { 0 }];
    let mut dx = vec![T::zero(); if want_x { g.n * g.cin * g.h * g.w } else { 0 }];
    let xs = sink.value(node.x).data();
    let ws = sink.value(node.w).data();
    for (n0, c) in chunks(&g) {
        let np = c.n * p;
        let mut dyt = vec![T::zero(); g.cout * np];
        batch_major(&c, &dy[n0 * g.cout * p..], &mut dyt);
        let mut col = vec![T::zero(); ck * np];
        if want_w {
            im2col(&c, &xs[n0 * g.cin * g.h * g.w..], &mut col);
            T::gemm(false, true, g.cout, ck, np, T::one(), &dyt, &col, T::one(), &mut dw);
        }
        if want_x {
            T::gemm(true, false, ck, np, g.cout, T::one(), ws, &dyt, T::zero(), &mut col);
            col2im(&c, &col, &mut dx[n0 * g.cin * g.h * g.w..]);
        }
    }
    if want_w {
        sink.add_vec(node.w, dw);
    }
    if want_x {
        sink.add_vec(node.x, dx);
    }
}
