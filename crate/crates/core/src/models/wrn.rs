//! Toy-width wide residual network: a stem convolution, three groups of
//! pre-activation residual blocks (widths `16k`, `32k`, `64k`), final batch
//! norm + ReLU, global average pooling and a linear classifier.

use alloc::format;
use alloc::vec::Vec;

use super::layers::{BatchNorm, Conv, Ctx, Dense};
use super::BackboneOutput;
use crate::error::{Error, Result};
use crate::init::Rng64;
use crate::{ParamStore, Real, Var};

#[derive(Clone, Debug, PartialEq)]
pub struct ToyWrnConfig {
    /// Total depth; must be `6n + 4`.
    pub depth: usize,
    pub widen: usize,
    pub labels: usize,
    pub in_channels: usize,
}

impl ToyWrnConfig {
    pub fn blocks_per_group(&self) -> Result<usize> {
        if self.depth < 10 || (self.depth - 4) % 6 != 0 {
            return Err(Error::Config(format!("wide resnet depth must be 6n+4 with n >= 1, got {}", self.depth)));
        }
        Ok((self.depth - 4) / 6)
    }

    pub fn widths(&self) -> [usize; 3] {
        [16 * self.widen, 32 * self.widen, 64 * self.widen]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct WrnBlock {
    pub bn1: BatchNorm,
    pub conv1: Conv,
    pub bn2: BatchNorm,
    pub conv2: Conv,
    /// 1x1 projection when the width or resolution changes.
    pub shortcut: Option<Conv>,
}

impl WrnBlock {
    fn new<T: Real>(store: &mut ParamStore<T>, name: &str, cin: usize, cout: usize, stride: usize, rng: &mut Rng64) -> Self {
        let shortcut =
            (cin != cout || stride != 1).then(|| Conv::new(store, &format!("{}.shortcut", name), cin, cout, 1, stride, 0, false, rng));
        Self {
            bn1: BatchNorm::new(store, &format!("{}.bn1", name), cin),
            conv1: Conv::new(store, &format!("{}.conv1", name), cin, cout, 3, stride, 1, false, rng),
            bn2: BatchNorm::new(store, &format!("{}.bn2", name), cout),
            conv2: Conv::new(store, &format!("{}.conv2", name), cout, cout, 3, 1, 1, false, rng),
            shortcut,
        }
    }

    pub fn forward<T: Real>(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let o = self.bn1.forward(ctx, x)?;
        let o = ctx.graph.relu(o);
        let y = self.conv1.forward(ctx, o)?;
        let y = self.bn2.forward(ctx, y)?;
        let y = ctx.graph.relu(y);
        let y = self.conv2.forward(ctx, y)?;
        let skip = match &self.shortcut {
            Some(proj) => proj.forward(ctx, o)?,
            None => x,
        };
        ctx.graph.add(y, skip)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ToyWrn {
    pub config: ToyWrnConfig,
    pub stem: Conv,
    pub groups: Vec<Vec<WrnBlock>>,
    pub final_bn: BatchNorm,
    pub fc: Dense,
}

impl ToyWrn {
    pub fn build<T: Real>(config: ToyWrnConfig, store: &mut ParamStore<T>, rng: &mut Rng64) -> Result<Self> {
        let n = config.blocks_per_group()?;
        if config.widen == 0 || config.labels < 2 {
            return Err(Error::Config("widen must be >= 1 and labels >= 2".into()));
        }
        let widths = config.widths();
        let stem = Conv::new(store, "base.stem", config.in_channels, 16, 3, 1, 1, false, rng);
        let mut cin = 16;
        let mut groups = Vec::with_capacity(3);
        for (gi, &w) in widths.iter().enumerate() {
            let mut blocks = Vec::with_capacity(n);
            for bi in 0..n {
                let stride = if gi > 0 && bi == 0 { 2 } else { 1 };
                blocks.push(WrnBlock::new(store, &format!("base.group{}.block{}", gi + 1, bi + 1), cin, w, stride, rng));
                cin = w;
            }
            groups.push(blocks);
        }
        let final_bn = BatchNorm::new(store, "base.bn_final", cin);
        let fc = Dense::new(store, "base.fc", cin, config.labels, rng);
        Ok(Self {
            config,
            stem,
            groups,
            final_bn,
            fc,
        })
    }

    pub fn tap_channels(&self) -> Vec<usize> {
        self.config.widths().to_vec()
    }

    /// Taps are the outputs of the three groups; the last one is taken after
    /// the final batch norm and ReLU, and doubles as the last feature map.
    pub fn forward<T: Real>(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Result<BackboneOutput> {
        let mut h = self.stem.forward(ctx, x)?;
        let mut taps = Vec::with_capacity(3);
        for (gi, group) in self.groups.iter().enumerate() {
            for block in group {
                h = block.forward(ctx, h)?;
            }
            if gi < 2 {
                taps.push(h);
            }
        }
        let h = self.final_bn.forward(ctx, h)?;
        let last = ctx.graph.relu(h);
        taps.push(last);
        let pooled = ctx.graph.global_avg_pool(last)?;
        let logits = self.fc.forward(ctx, pooled)?;
        Ok(BackboneOutput { logits, taps, last })
    }
}
