//! Attention modules, gates and output rectification.
//!
//! An [`AttentionModule`] reads one intermediate feature map `Z` of a base
//! network and produces a class distribution from local evidence:
//!
//! 1. attention heads: `K` spatial masks, `mask_fn(W_H * Z)`;
//! 2. output heads: a per-location class distribution for every head,
//!    `softmax_labels(W_O * Z)`, computed for all heads in one convolution
//!    with `K * labels` output channels;
//! 3. each head's distribution is the mask-weighted spatial sum of its
//!    output map;
//! 4. layer gates, `softmax(tanh(sum_xy (W_g * Z) . H))`, mix the `K` head
//!    distributions into the module distribution.
//!
//! A [`GlobalGate`] scores every module plus the network's own prediction
//! from the last feature map, `softmax(tanh(W_G gap(Z_L) + b))`, and
//! [`rectify`] forms the final output as the gated convex combination.
//! Gate 0 always belongs to the network output.
//!
//! All three attention convolutions are `1 x 1` with bias.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{contract_err, dim_err, Error, Result};
use crate::init::Rng64;
use crate::models::layers::{Conv, Ctx, Dense};
use crate::ops::ROW_SUM_TOL;
use crate::{Graph, ParamStore, Real, Tensor, Var};

/// Nonlinearity that turns head logits into masks.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum MaskFn {
    /// Spatial softmax per head: masks are distributions over the grid.
    Softmax,
    /// Elementwise sigmoid: masks lie in `(0, 1)` without normalization.
    Sigmoid,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AttentionModuleConfig {
    /// Attention width: number of heads.
    pub heads: usize,
    pub labels: usize,
    pub mask_fn: MaskFn,
}

impl AttentionModuleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.heads < 1 {
            return Err(Error::Config("attention width must be at least 1".into()));
        }
        if self.labels < 2 {
            return Err(Error::Config("need at least 2 labels".into()));
        }
        Ok(())
    }
}

/// How gate weights are produced. `Learned` is the normal mode; the others
/// replace gate outputs for ablations and diagnostics.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum GateMode {
    #[default]
    Learned,
    /// Uniform weights in place of both the layer and the global gate softmax.
    Uniform,
    /// Global gates fixed to one-hot on the network output.
    NetOnly,
    /// Network-output gate fixed to zero; module gates are a softmax over
    /// the module scores alone.
    ModulesOnly,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttentionModule {
    pub config: AttentionModuleConfig,
    pub in_channels: usize,
    pub heads: Conv,
    pub outputs: Conv,
    pub gates: Conv,
}

/// Per-module intermediate values of one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct ModuleForward {
    /// `[N,K,H,W]`
    pub masks: Var,
    /// `[N,K,labels]`
    pub head_probs: Var,
    /// `[N,K]`
    pub head_gates: Var,
    /// `[N,labels]`
    pub module_prob: Var,
}

impl AttentionModule {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        in_channels: usize,
        config: AttentionModuleConfig,
        rng: &mut Rng64,
    ) -> Result<Self> {
        config.validate()?;
        let k = config.heads;
        Ok(Self {
            config,
            in_channels,
            heads: Conv::new(store, &format!("{}.heads", name), in_channels, k, 1, 1, 0, true, rng),
            outputs: Conv::new(store, &format!("{}.outputs", name), in_channels, k * config.labels, 1, 1, 0, true, rng),
            gates: Conv::new(store, &format!("{}.gates", name), in_channels, k, 1, 1, 0, true, rng),
        })
    }

    fn check_input<T: Real>(&self, g: &Graph<T>, z: Var) -> Result<()> {
        let shape = g.shape(z);
        if shape.len() != 4 || shape[1] != self.in_channels {
            return Err(dim_err(
                "attention",
                format!("feature map {:?} must be [N,{},H,W] (axis 1 = channels)", shape, self.in_channels),
            ));
        }
        Ok(())
    }

    /// Attention masks `H: [N,K,H,W]`.
    pub fn attention_masks<T: Real>(&self, ctx: &mut Ctx<'_, T>, z: Var) -> Result<Var> {
        self.check_input(ctx.graph, z)?;
        let logits = self.heads.forward(ctx, z)?;
        match self.config.mask_fn {
            MaskFn::Softmax => ctx.graph.spatial_softmax(logits),
            MaskFn::Sigmoid => Ok(ctx.graph.sigmoid(logits)),
        }
    }

    /// Per-location class distributions `O: [N,K,labels,H,W]`.
    pub fn local_class_maps<T: Real>(&self, ctx: &mut Ctx<'_, T>, z: Var) -> Result<Var> {
        self.check_input(ctx.graph, z)?;
        let raw = self.outputs.forward(ctx, z)?;
        let s = ctx.graph.shape(raw).to_vec();
        let maps = ctx
            .graph
            .reshape(raw, &[s[0], self.config.heads, self.config.labels, s[2], s[3]])?;
        ctx.graph.softmax(maps, 2)
    }

    /// Layer gates `g_H: [N,K]`, one distribution over heads per sample.
    pub fn layer_gate_scores<T: Real>(&self, ctx: &mut Ctx<'_, T>, z: Var, masks: Var) -> Result<Var> {
        self.check_input(ctx.graph, z)?;
        let raw = self.gates.forward(ctx, z)?;
        let s = ctx.graph.shape(raw).to_vec();
        if ctx.graph.shape(masks) != s.as_slice() {
            return Err(dim_err(
                "layer_gate_scores",
                format!("masks {:?} do not match gate map {:?}", ctx.graph.shape(masks), s),
            ));
        }
        let maps = ctx.graph.reshape(raw, &[s[0], s[1], 1, s[2], s[3]])?;
        let pooled = ctx.graph.weighted_spatial_sum(masks, maps)?;
        let scores = ctx.graph.reshape(pooled, &[s[0], s[1]])?;
        let bounded = ctx.graph.tanh(scores);
        ctx.graph.softmax(bounded, 1)
    }

    pub fn forward<T: Real>(&self, ctx: &mut Ctx<'_, T>, z: Var, mode: GateMode) -> Result<ModuleForward> {
        let masks = self.attention_masks(ctx, z)?;
        let maps = self.local_class_maps(ctx, z)?;
        let head_probs = head_outputs(ctx.graph, masks, maps, self.config.mask_fn)?;
        let head_gates = if mode == GateMode::Uniform {
            let n = ctx.graph.shape(z)[0];
            let k = self.config.heads;
            ctx.graph.constant(Tensor::full(&[n, k], T::one() / T::from_f64(k as f64)))
        } else {
            self.layer_gate_scores(ctx, z, masks)?
        };
        let module_prob = module_output(ctx.graph, head_probs, head_gates)?;
        Ok(ModuleForward {
            masks,
            head_probs,
            head_gates,
            module_prob,
        })
    }
}

/// Head distributions `o_k = sum_xy H_k . O_k`, `[N,K,labels]`.
///
/// With softmax masks each row is already a convex combination of
/// distributions. Sigmoid masks carry no normalization, so the rows are
/// divided by their sum.
pub fn head_outputs<T: Real>(g: &mut Graph<T>, masks: Var, class_maps: Var, mask_fn: MaskFn) -> Result<Var> {
    let pooled = g.weighted_spatial_sum(masks, class_maps)?;
    match mask_fn {
        MaskFn::Softmax => Ok(pooled),
        MaskFn::Sigmoid => g.normalize(pooled, 2),
    }
}

/// Module distribution `o = sum_k g_k o_k`, `[N,labels]`.
pub fn module_output<T: Real>(g: &mut Graph<T>, head_probs: Var, head_gates: Var) -> Result<Var> {
    g.gate_combine(head_gates, head_probs)
}

fn check_rows<T: Real>(g: &Graph<T>, v: Var, what: &str) -> Result<()> {
    let t = g.value(v);
    let l = *t.shape().last().unwrap_or(&1);
    for (r, row) in t.data().chunks(l.max(1)).enumerate() {
        let s: f64 = row.iter().map(|v| v.as_f64()).sum();
        if !((s - 1.0).abs() <= ROW_SUM_TOL) {
            return Err(contract_err("rectify", format!("{} row {} sums to {}", what, r, s)));
        }
    }
    Ok(())
}

/// Final output `g_net * output_net + sum_l g_l * o_l`.
///
/// `gates: [N, 1 + modules]` with column 0 weighting `output_net`.
pub fn rectify<T: Real>(g: &mut Graph<T>, output_net: Var, module_probs: &[Var], gates: Var) -> Result<Var> {
    let gs = g.shape(gates);
    if gs.len() != 2 || gs[1] != module_probs.len() + 1 {
        return Err(dim_err(
            "rectify",
            format!("gates {:?} must have {} columns (axis 1)", gs, module_probs.len() + 1),
        ));
    }
    check_rows(g, output_net, "output_net")?;
    for &p in module_probs {
        check_rows(g, p, "module output")?;
    }
    let mut parts = Vec::with_capacity(module_probs.len() + 1);
    parts.push(output_net);
    parts.extend_from_slice(module_probs);
    let stacked = g.stack(&parts)?;
    g.gate_combine(gates, stacked)
}

/// Orthogonality penalty of one module's masks; see
/// [`Graph::head_regularizer`].
pub fn head_regularizer<T: Real>(g: &mut Graph<T>, masks: Var) -> Result<Var> {
    g.head_regularizer(masks)
}

/// Relevance scores and gates for `modules` attention modules plus the
/// network output, computed from the globally pooled last feature map.
#[derive(Clone, Debug, PartialEq)]
pub struct GlobalGate {
    pub proj: Dense,
    pub modules: usize,
}

impl GlobalGate {
    /// `W_G` and its bias start at zero so the initial gates are uniform.
    pub fn new<T: Real>(store: &mut ParamStore<T>, name: &str, in_channels: usize, modules: usize) -> Self {
        let rows = modules + 1;
        let w = store.add_param(format!("{}.weight", name), Tensor::zeros(&[rows, in_channels]));
        let b = store.add_param(format!("{}.bias", name), Tensor::zeros(&[rows]));
        Self {
            proj: Dense {
                w,
                b,
                in_features: in_channels,
                out_features: rows,
            },
            modules,
        }
    }

    pub fn width(&self) -> usize {
        self.modules + 1
    }

    /// Bounded scores `c = tanh(W_G gap(Z_L) + b)`, `[N, modules + 1]`.
    pub fn scores<T: Real>(&self, ctx: &mut Ctx<'_, T>, z_last: Var) -> Result<Var> {
        let shape = ctx.graph.shape(z_last);
        if shape.len() != 4 || shape[1] != self.proj.in_features {
            return Err(dim_err(
                "global_gates",
                format!("last feature map {:?} must have {} channels (axis 1)", shape, self.proj.in_features),
            ));
        }
        let pooled = ctx.graph.global_avg_pool(z_last)?;
        let c = self.proj.forward(ctx, pooled)?;
        Ok(ctx.graph.tanh(c))
    }

    /// Gate weights `[N, modules + 1]`, rows summing to one.
    pub fn global_gates<T: Real>(&self, ctx: &mut Ctx<'_, T>, z_last: Var, mode: GateMode) -> Result<Var> {
        let n = ctx.graph.shape(z_last)[0];
        let width = self.width();
        match mode {
            GateMode::Learned => {
                let c = self.scores(ctx, z_last)?;
                ctx.graph.softmax(c, 1)
            }
            GateMode::Uniform => Ok(ctx
                .graph
                .constant(Tensor::full(&[n, width], T::one() / T::from_f64(width as f64)))),
            GateMode::NetOnly => {
                let mut t = Tensor::zeros(&[n, width]);
                for b in 0..n {
                    t.set(&[b, 0], T::one());
                }
                Ok(ctx.graph.constant(t))
            }
            GateMode::ModulesOnly => {
                let c = self.scores(ctx, z_last)?;
                let modules = ctx.graph.narrow(c, 1, 1, self.modules)?;
                let gates = ctx.graph.softmax(modules, 1)?;
                let zero = ctx.graph.constant(Tensor::zeros(&[n, 1]));
                ctx.graph.concat(zero, gates, 1)
            }
        }
    }
}
