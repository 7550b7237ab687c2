//! Base networks and the attention-augmented model.
//!
//! Parameters of the base network are named `base.*` and those of the
//! attention modules and global gate `att.*`, so either group can be frozen
//! by name when binding a [`ParamStore`].

pub mod base_cnn;
pub mod layers;
pub mod wrn;

use alloc::format;
use alloc::vec::Vec;

pub use base_cnn::{BaseCnn, BaseCnnConfig, TapPoint};
pub use layers::Ctx;
pub use wrn::{ToyWrn, ToyWrnConfig};

use crate::attention::{
    head_regularizer, rectify, AttentionModule, AttentionModuleConfig, GateMode, GlobalGate, MaskFn, ModuleForward,
};
use crate::error::{Error, Result};
use crate::init::Rng64;
use crate::{Graph, ParamStore, Real, Var};

/// Values a base network exposes to the attention machinery.
#[derive(Clone, Debug)]
pub struct BackboneOutput {
    pub logits: Var,
    /// Tap-point feature maps, shallowest first.
    pub taps: Vec<Var>,
    /// Last feature map, input of the global gate.
    pub last: Var,
}

#[derive(Clone, Debug, PartialEq)]
pub enum BackboneConfig {
    Cnn(BaseCnnConfig),
    Wrn(ToyWrnConfig),
}

#[derive(Clone, Debug, PartialEq)]
pub enum Backbone {
    Cnn(BaseCnn),
    Wrn(ToyWrn),
}

impl Backbone {
    pub fn build<T: Real>(config: &BackboneConfig, store: &mut ParamStore<T>, rng: &mut Rng64) -> Result<Self> {
        Ok(match config {
            BackboneConfig::Cnn(c) => Backbone::Cnn(BaseCnn::build(c.clone(), store, rng)?),
            BackboneConfig::Wrn(c) => Backbone::Wrn(ToyWrn::build(c.clone(), store, rng)?),
        })
    }

    pub fn forward<T: Real>(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Result<BackboneOutput> {
        match self {
            Backbone::Cnn(m) => m.forward(ctx, x),
            Backbone::Wrn(m) => m.forward(ctx, x),
        }
    }

    pub fn tap_channels(&self) -> Vec<usize> {
        match self {
            Backbone::Cnn(m) => m.tap_channels(),
            Backbone::Wrn(m) => m.tap_channels(),
        }
    }

    pub fn labels(&self) -> usize {
        match self {
            Backbone::Cnn(m) => m.config.labels,
            Backbone::Wrn(m) => m.config.labels,
        }
    }
}

/// He-initialized baseline CNN.
pub fn build_baseline<T: Real>(config: BaseCnnConfig, store: &mut ParamStore<T>, rng: &mut Rng64) -> Result<BaseCnn> {
    BaseCnn::build(config, store, rng)
}

pub fn build_toy_wrn<T: Real>(depth: usize, widen: usize, labels: usize, store: &mut ParamStore<T>, rng: &mut Rng64) -> Result<ToyWrn> {
    ToyWrn::build(
        ToyWrnConfig {
            depth,
            widen,
            labels,
            in_channels: 3,
        },
        store,
        rng,
    )
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AttentionSettings {
    /// Attention depth: number of modules.
    pub depth: usize,
    /// Attention width: heads per module.
    pub width: usize,
    pub mask_fn: MaskFn,
    /// When false both gate softmaxes are replaced by uniform weights.
    pub gates: bool,
    /// Weight of the head regularizer in the loss; 0 disables it.
    pub gamma: f64,
    /// Attention modules see the base feature maps through a gradient barrier.
    pub block_base_gradients: bool,
}

impl Default for AttentionSettings {
    fn default() -> Self {
        Self {
            depth: 4,
            width: 4,
            mask_fn: MaskFn::Softmax,
            gates: true,
            gamma: 1e-3,
            block_base_gradients: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Attachment {
    /// Index into the backbone's tap points.
    pub tap: usize,
    pub module: AttentionModule,
}

/// A base network with attention modules attached at its deepest taps and
/// a global gate. Attachment `i` uses global gate column `i + 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct AugmentedModel {
    pub backbone: Backbone,
    pub attachments: Vec<Attachment>,
    pub global_gate: GlobalGate,
    pub settings: AttentionSettings,
}

/// Attaches `settings.depth` modules starting from the deepest tap and
/// moving toward the input. Only new `att.*` parameters are added to
/// `store`; existing base weights are left as they are.
pub fn attach_attention<T: Real>(
    backbone: Backbone,
    store: &mut ParamStore<T>,
    settings: AttentionSettings,
    rng: &mut Rng64,
) -> Result<AugmentedModel> {
    let taps = backbone.tap_channels();
    if settings.depth < 1 || settings.depth > taps.len() {
        return Err(Error::Config(format!(
            "attention depth must be in 1..={}, got {}",
            taps.len(),
            settings.depth
        )));
    }
    if settings.width < 1 {
        return Err(Error::Config("attention width must be at least 1".into()));
    }
    let config = AttentionModuleConfig {
        heads: settings.width,
        labels: backbone.labels(),
        mask_fn: settings.mask_fn,
    };
    let mut attachments = Vec::with_capacity(settings.depth);
    for i in 0..settings.depth {
        let tap = taps.len() - 1 - i;
        let module = AttentionModule::new(store, &format!("att.module{}", i), taps[tap], config, rng)?;
        attachments.push(Attachment { tap, module });
    }
    let last_channels = *taps.last().expect("backbone has taps");
    let global_gate = GlobalGate::new(store, "att.global_gate", last_channels, settings.depth);
    Ok(AugmentedModel {
        backbone,
        attachments,
        global_gate,
        settings,
    })
}

/// Values produced by one forward pass of a [`Model`].
#[derive(Clone, Debug)]
pub struct ForwardOutput {
    /// Final class distribution `[N,labels]`.
    pub output: Var,
    /// Softmax of the base network logits.
    pub output_net: Var,
    pub logits: Var,
    pub modules: Vec<ModuleForward>,
    /// Global gates `[N, modules + 1]`; `None` for a plain base network.
    pub gates: Option<Var>,
    /// Sum of the head regularizer over modules.
    pub reg_loss: Option<Var>,
}

impl AugmentedModel {
    pub fn forward<T: Real>(&self, ctx: &mut Ctx<'_, T>, x: Var, mode: GateMode) -> Result<ForwardOutput> {
        let mode = if mode == GateMode::Learned && !self.settings.gates {
            GateMode::Uniform
        } else {
            mode
        };
        let base = self.backbone.forward(ctx, x)?;
        let output_net = ctx.graph.softmax(base.logits, 1)?;
        let guard = |ctx: &mut Ctx<'_, T>, v: Var| {
            if self.settings.block_base_gradients {
                ctx.graph.stop_gradient(v)
            } else {
                v
            }
        };
        let mut modules = Vec::with_capacity(self.attachments.len());
        let mut reg: Option<Var> = None;
        for att in &self.attachments {
            let z = guard(ctx, base.taps[att.tap]);
            let fwd = att.module.forward(ctx, z, mode)?;
            let r = head_regularizer(ctx.graph, fwd.masks)?;
            reg = Some(match reg {
                Some(acc) => ctx.graph.add(acc, r)?,
                None => r,
            });
            modules.push(fwd);
        }
        let z_last = guard(ctx, base.last);
        let gates = self.global_gate.global_gates(ctx, z_last, mode)?;
        let probs: Vec<Var> = modules.iter().map(|m| m.module_prob).collect();
        let output = rectify(ctx.graph, output_net, &probs, gates)?;
        Ok(ForwardOutput {
            output,
            output_net,
            logits: base.logits,
            modules,
            gates: Some(gates),
            reg_loss: reg,
        })
    }
}

/// Complete architecture description, enough to rebuild a model.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub backbone: BackboneConfig,
    /// `None` builds the plain base network.
    pub attention: Option<AttentionSettings>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Model {
    Base(Backbone),
    Augmented(AugmentedModel),
}

impl Model {
    /// Builds a freshly initialized model. The base network draws from a
    /// stream derived from `(seed, 0)` and the attention parameters from
    /// `(seed, 1)`, so models that differ only in their attention settings
    /// share identical base weights.
    pub fn build<T: Real>(config: &ModelConfig, seed: u64) -> Result<(Self, ParamStore<T>)> {
        let mut store = ParamStore::new();
        let backbone = Backbone::build(&config.backbone, &mut store, &mut Rng64::from_parts(&[seed, 0]))?;
        let model = match config.attention {
            None => Model::Base(backbone),
            Some(settings) => Model::Augmented(attach_attention(
                backbone,
                &mut store,
                settings,
                &mut Rng64::from_parts(&[seed, 1]),
            )?),
        };
        Ok((model, store))
    }

    pub fn backbone(&self) -> &Backbone {
        match self {
            Model::Base(b) => b,
            Model::Augmented(m) => &m.backbone,
        }
    }

    pub fn settings(&self) -> Option<&AttentionSettings> {
        match self {
            Model::Base(_) => None,
            Model::Augmented(m) => Some(&m.settings),
        }
    }

    pub fn forward<T: Real>(&self, ctx: &mut Ctx<'_, T>, x: Var, mode: GateMode) -> Result<ForwardOutput> {
        match self {
            Model::Augmented(m) => m.forward(ctx, x, mode),
            Model::Base(b) => {
                let base = b.forward(ctx, x)?;
                let output_net = ctx.graph.softmax(base.logits, 1)?;
                Ok(ForwardOutput {
                    output: output_net,
                    output_net,
                    logits: base.logits,
                    modules: Vec::new(),
                    gates: None,
                    reg_loss: None,
                })
            }
        }
    }

    /// Training objective: NLL of the final distribution plus the weighted
    /// head regularizer.
    pub fn loss<T: Real>(&self, g: &mut Graph<T>, out: &ForwardOutput, targets: &[usize]) -> Result<Var> {
        let nll = g.nll_from_probs(out.output, targets)?;
        let gamma = self.settings().map_or(0.0, |s| s.gamma);
        match out.reg_loss {
            Some(reg) if gamma > 0.0 => {
                let weighted = g.scale(reg, T::from_f64(gamma));
                g.add(nll, weighted)
            }
            _ => Ok(nll),
        }
    }
}
