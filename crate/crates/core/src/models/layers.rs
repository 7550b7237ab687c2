//! Parameterized building blocks and the forward-pass context.

use alloc::format;

use crate::error::Result;
use crate::init::{he_normal, Rng64};
use crate::ops::RunningStats;
use crate::params::{Bound, Named};
use crate::{BufferId, Graph, ParamId, ParamStore, Real, Tensor, Var};

/// Everything a forward pass needs: the tape, the bound parameters, the
/// mutable buffers (batch-norm statistics) and the mode.
pub struct Ctx<'a, T> {
    pub graph: &'a mut Graph<T>,
    pub bound: &'a Bound,
    pub buffers: &'a mut [Named<T>],
    pub train: bool,
}

impl<'a, T: Real> Ctx<'a, T> {
    pub fn var(&self, id: ParamId) -> Var {
        self.bound.var(id)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Conv {
    pub w: ParamId,
    pub b: Option<ParamId>,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl Conv {
    /// He-initialized `kernel x kernel` convolution; bias starts at zero.
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        bias: bool,
        rng: &mut Rng64,
    ) -> Self {
        let shape = [out_channels, in_channels, kernel, kernel];
        let w = store.add_param(format!("{}.weight", name), he_normal(rng, &shape, in_channels * kernel * kernel));
        let b = bias.then(|| store.add_param(format!("{}.bias", name), Tensor::zeros(&[out_channels])));
        Self {
            w,
            b,
            in_channels,
            out_channels,
            kernel,
            stride,
            pad,
        }
    }

    pub fn forward<T: Real>(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let (w, b) = (ctx.var(self.w), self.b.map(|b| ctx.var(b)));
        ctx.graph.conv2d(x, w, b, self.stride, self.pad)
    }

    pub fn num_params(&self) -> usize {
        self.out_channels * self.in_channels * self.kernel * self.kernel + if self.b.is_some() { self.out_channels } else { 0 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BatchNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: BufferId,
    pub running_var: BufferId,
}

impl BatchNorm {
    pub fn new<T: Real>(store: &mut ParamStore<T>, name: &str, channels: usize) -> Self {
        Self {
            gamma: store.add_param(format!("{}.gamma", name), Tensor::ones(&[channels])),
            beta: store.add_param(format!("{}.beta", name), Tensor::zeros(&[channels])),
            running_mean: store.add_buffer(format!("{}.running_mean", name), Tensor::zeros(&[channels])),
            running_var: store.add_buffer(format!("{}.running_var", name), Tensor::ones(&[channels])),
        }
    }

    pub fn forward<T: Real>(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let (gamma, beta) = (ctx.var(self.gamma), ctx.var(self.beta));
        let (i, j) = (self.running_mean.0, self.running_var.0);
        assert!(i < j, "running mean is registered before running variance");
        let (lo, hi) = ctx.buffers.split_at_mut(j);
        let running = RunningStats {
            mean: lo[i].tensor.data_mut(),
            var: hi[0].tensor.data_mut(),
        };
        ctx.graph.batch_norm2d(x, gamma, beta, running, ctx.train)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub w: ParamId,
    pub b: ParamId,
    pub in_features: usize,
    pub out_features: usize,
}

impl Dense {
    pub fn new<T: Real>(store: &mut ParamStore<T>, name: &str, fin: usize, fout: usize, rng: &mut Rng64) -> Self {
        Self {
            w: store.add_param(format!("{}.weight", name), he_normal(rng, &[fout, fin], fin)),
            b: store.add_param(format!("{}.bias", name), Tensor::zeros(&[fout])),
            in_features: fin,
            out_features: fout,
        }
    }

    pub fn forward<T: Real>(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let (w, b) = (ctx.var(self.w), ctx.var(self.b));
        ctx.graph.linear(x, w, Some(b))
    }
}
