//! Five-convolution baseline: `3x3` convs with batch norm, ReLU and `2x2`
//! max pooling after the first three, ReLU after the last two, then two
//! fully-connected layers.

use alloc::format;
use alloc::vec::Vec;

use super::layers::{BatchNorm, Conv, Ctx, Dense};
use super::BackboneOutput;
use crate::error::{Error, Result};
use crate::init::Rng64;
use crate::{ParamStore, Real, Var};

pub const DEFAULT_CHANNELS: [usize; 5] = [32, 64, 128, 128, 128];
pub const DEFAULT_FC_HIDDEN: usize = 256;

/// Where the first three stages expose their feature map.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum TapPoint {
    /// After the pooling layer.
    #[default]
    PostPool,
    /// After the activation, before pooling.
    PrePool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BaseCnnConfig {
    pub labels: usize,
    pub channels: [usize; 5],
    pub fc_hidden: usize,
    pub in_channels: usize,
    /// Input height and width.
    pub input: (usize, usize),
    pub tap: TapPoint,
}

impl BaseCnnConfig {
    pub fn new(labels: usize, channels: [usize; 5]) -> Self {
        Self {
            labels,
            channels,
            fc_hidden: DEFAULT_FC_HIDDEN,
            in_channels: 1,
            input: (40, 40),
            tap: TapPoint::PostPool,
        }
    }

    fn pooled(&self) -> (usize, usize) {
        (self.input.0 / 8, self.input.1 / 8)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BaseCnn {
    pub config: BaseCnnConfig,
    pub convs: Vec<Conv>,
    pub norms: Vec<BatchNorm>,
    pub fc1: Dense,
    pub fc2: Dense,
}

impl BaseCnn {
    pub fn build<T: Real>(config: BaseCnnConfig, store: &mut ParamStore<T>, rng: &mut Rng64) -> Result<Self> {
        if config.labels < 2 {
            return Err(Error::Config("need at least 2 labels".into()));
        }
        if config.channels.iter().any(|&c| c == 0) || config.fc_hidden == 0 {
            return Err(Error::Config("channel widths must be positive".into()));
        }
        let (ph, pw) = config.pooled();
        if ph == 0 || pw == 0 {
            return Err(Error::Config(format!(
                "input {}x{} is too small for three 2x2 poolings",
                config.input.0, config.input.1
            )));
        }
        let mut convs = Vec::with_capacity(5);
        let mut norms = Vec::with_capacity(3);
        let mut cin = config.in_channels;
        for (i, &cout) in config.channels.iter().enumerate() {
            let name = format!("base.conv{}", i + 1);
            let bias = i >= 3;
            convs.push(Conv::new(store, &name, cin, cout, 3, 1, 1, bias, rng));
            if i < 3 {
                norms.push(BatchNorm::new(store, &format!("base.bn{}", i + 1), cout));
            }
            cin = cout;
        }
        let flat = config.channels[4] * ph * pw;
        let fc1 = Dense::new(store, "base.fc1", flat, config.fc_hidden, rng);
        let fc2 = Dense::new(store, "base.fc2", config.fc_hidden, config.labels, rng);
        Ok(Self {
            config,
            convs,
            norms,
            fc1,
            fc2,
        })
    }

    /// Channels of the five tap points, shallowest first.
    pub fn tap_channels(&self) -> Vec<usize> {
        self.config.channels.to_vec()
    }

    /// `(channels, height, width)` of every tap point for the configured input.
    pub fn tap_shapes(&self) -> Vec<(usize, usize, usize)> {
        let (mut h, mut w) = self.config.input;
        let mut shapes = Vec::with_capacity(5);
        for (i, &c) in self.config.channels.iter().enumerate() {
            if i < 3 {
                match self.config.tap {
                    TapPoint::PrePool => shapes.push((c, h, w)),
                    TapPoint::PostPool => shapes.push((c, h / 2, w / 2)),
                }
                h /= 2;
                w /= 2;
            } else {
                shapes.push((c, h, w));
            }
        }
        shapes
    }

    pub fn num_params(&self) -> usize {
        let convs: usize = self.convs.iter().map(Conv::num_params).sum();
        let norms: usize = self.config.channels[..3].iter().map(|c| 2 * c).sum();
        let dense = |d: &Dense| d.in_features * d.out_features + d.out_features;
        convs + norms + dense(&self.fc1) + dense(&self.fc2)
    }

    pub fn forward<T: Real>(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Result<BackboneOutput> {
        let shape = ctx.graph.shape(x).to_vec();
        let expect = [self.config.in_channels, self.config.input.0, self.config.input.1];
        if shape.len() != 4 || shape[1..] != expect {
            return Err(crate::error::dim_err(
                "base_cnn",
                format!("input {:?} must be [N,{},{},{}]", shape, expect[0], expect[1], expect[2]),
            ));
        }
        let mut taps = Vec::with_capacity(5);
        let mut h = x;
        for (i, conv) in self.convs.iter().enumerate() {
            h = conv.forward(ctx, h)?;
            if i < 3 {
                h = self.norms[i].forward(ctx, h)?;
                h = ctx.graph.relu(h);
                let pooled = ctx.graph.max_pool2d(h, 2)?;
                taps.push(match self.config.tap {
                    TapPoint::PrePool => h,
                    TapPoint::PostPool => pooled,
                });
                h = pooled;
            } else {
                h = ctx.graph.relu(h);
                taps.push(h);
            }
        }
        let last = h;
        let n = shape[0];
        let flat_len = ctx.graph.value(h).numel() / n.max(1);
        let flat = ctx.graph.reshape(h, &[n, flat_len])?;
        let hidden = self.fc1.forward(ctx, flat)?;
        let hidden = ctx.graph.relu(hidden);
        let logits = self.fc2.forward(ctx, hidden)?;
        Ok(BackboneOutput { logits, taps, last })
    }
}
