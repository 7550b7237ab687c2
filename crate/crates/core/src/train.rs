//! Training step, evaluation and the epoch loop.
//!
//! File output (metrics CSV, checkpoints) is left to the caller through the
//! per-epoch hook of [`fit`].

use alloc::vec::Vec;

use crate::attention::GateMode;
use crate::batch::{Augment, Batch, BatchIter, ImageSet};
use crate::error::{Error, Result};
use crate::models::{Ctx, Model};
use crate::optim::{lr_at, Sgd};
use crate::{Graph, ParamStore, Real, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr0: f64,
    /// Epochs after which the rate is divided by 10.
    pub milestones: Vec<usize>,
    pub epochs: usize,
    pub batch: usize,
    pub momentum: f64,
    pub weight_decay: f64,
    pub seed: u64,
    pub augment: Augment,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr0: 0.1,
            milestones: alloc::vec![60],
            epochs: 200,
            batch: 128,
            momentum: 0.0,
            weight_decay: 0.0,
            seed: 0,
            augment: Augment::None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr0 > 0.0) {
            return Err(Error::Config("lr0 must be positive".into()));
        }
        if self.milestones.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("milestones must be strictly increasing".into()));
        }
        if self.batch == 0 {
            return Err(Error::Config("batch must be at least 1".into()));
        }
        Ok(())
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        lr_at(self.lr0, &self.milestones, epoch)
    }
}

/// Running sums over the batches of an epoch or an evaluation pass.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Tally {
    pub count: usize,
    pub correct: usize,
    /// Sum of per-batch mean losses weighted by batch size.
    pub loss: f64,
    pub reg: f64,
    /// Per-column sums of the global gates over samples.
    pub gates: Vec<f64>,
}

impl Tally {
    fn add<T: Real>(&mut self, g: &Graph<T>, out: &crate::models::ForwardOutput, labels: &[usize], loss: f64) {
        let n = labels.len();
        let pred = g.value(out.output).argmax_rows();
        self.correct += pred.iter().zip(labels).filter(|(p, l)| p == l).count();
        self.count += n;
        self.loss += loss * n as f64;
        if let Some(r) = out.reg_loss {
            self.reg += g.value(r).data()[0].as_f64() * n as f64;
        }
        if let Some(gv) = out.gates {
            let t = g.value(gv);
            let w = t.shape()[1];
            if self.gates.len() != w {
                self.gates = alloc::vec![0.0; w];
            }
            for row in t.data().chunks(w) {
                for (s, v) in self.gates.iter_mut().zip(row) {
                    *s += v.as_f64();
                }
            }
        }
    }

    pub fn accuracy(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            self.correct as f64 / self.count as f64
        }
    }

    pub fn mean_loss(&self) -> f64 {
        self.loss / self.count.max(1) as f64
    }

    pub fn mean_reg(&self) -> f64 {
        self.reg / self.count.max(1) as f64
    }

    /// Mean global gate per column; column 0 is the network-output gate.
    pub fn mean_gates(&self) -> Vec<f64> {
        self.gates.iter().map(|s| s / self.count.max(1) as f64).collect()
    }
}

/// One SGD step on a batch. Returns the batch loss.
pub fn train_step<T: Real>(
    model: &Model,
    store: &mut ParamStore<T>,
    opt: &mut Sgd<T>,
    batch: &Batch<T>,
    lr: T,
    tally: &mut Tally,
) -> Result<f64> {
    let mut g = Graph::new();
    let bound = store.bind(&mut g);
    let x = g.constant(batch.images.clone());
    let out = {
        let mut ctx = Ctx {
            graph: &mut g,
            bound: &bound,
            buffers: store.buffers_mut(),
            train: true,
        };
        model.forward(&mut ctx, x, GateMode::Learned)?
    };
    let loss = model.loss(&mut g, &out, &batch.labels)?;
    let value = g.value(loss).data()[0].as_f64();
    if !value.is_finite() {
        return Err(Error::NonFinite { op: "training loss" });
    }
    g.backward(loss)?;
    let grads: Vec<Option<Tensor<T>>> = bound
        .vars()
        .iter()
        .map(|&v| g.grad(v).map(|d| Tensor::from_vec(g.shape(v), d.to_vec()).expect("grad shape")))
        .collect();
    opt.step(store, &grads, lr)?;
    tally.add(&g, &out, &batch.labels, value);
    Ok(value)
}

/// Eval-mode pass over a set: batch norm uses its running statistics and
/// no parameter or buffer is modified.
pub fn evaluate<T: Real>(model: &Model, store: &ParamStore<T>, set: &ImageSet<T>, batch: usize, mode: GateMode) -> Result<Tally> {
    let mut buffers = store.buffers().to_vec();
    let mut tally = Tally::default();
    for b in BatchIter::sequential(set, batch) {
        let mut g = Graph::new();
        let bound = store.bind_frozen(&mut g);
        let x = g.constant(b.images);
        let out = {
            let mut ctx = Ctx {
                graph: &mut g,
                bound: &bound,
                buffers: &mut buffers,
                train: false,
            };
            model.forward(&mut ctx, x, mode)?
        };
        let nll = g.nll_from_probs(out.output, &b.labels)?;
        let loss = g.value(nll).data()[0].as_f64();
        tally.add(&g, &out, &b.labels, loss);
    }
    Ok(tally)
}

/// Per-epoch record.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_acc: f64,
    pub reg_loss: f64,
    /// Mean training-set global gates, network gate first.
    pub gates: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct FitResult<T> {
    pub history: Vec<EpochMetrics>,
    pub best_epoch: usize,
    pub best_val_acc: f64,
    /// Parameters and buffers at the best validation epoch.
    pub best: ParamStore<T>,
}

/// Trains for `cfg.epochs` epochs, evaluating on `val` after each one.
/// `on_epoch` sees every epoch's metrics, the current parameters, and
/// whether this epoch is the new best; an error from it stops training.
pub fn fit<T: Real>(
    model: &Model,
    store: &mut ParamStore<T>,
    train: &ImageSet<T>,
    val: &ImageSet<T>,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochMetrics, &ParamStore<T>, bool) -> Result<()>,
) -> Result<FitResult<T>> {
    cfg.validate()?;
    let mut opt = Sgd::new(store, T::from_f64(cfg.momentum), T::from_f64(cfg.weight_decay));
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(usize, f64, ParamStore<T>)> = None;
    for epoch in 0..cfg.epochs {
        let lr = cfg.lr_at(epoch);
        let mut tally = Tally::default();
        for b in BatchIter::shuffled(train, cfg.batch, cfg.seed, epoch, cfg.augment) {
            train_step(model, store, &mut opt, &b, T::from_f64(lr), &mut tally)?;
        }
        let val_acc = evaluate(model, store, val, cfg.batch, GateMode::Learned)?.accuracy();
        let m = EpochMetrics {
            epoch,
            lr,
            train_loss: tally.mean_loss(),
            train_acc: tally.accuracy(),
            val_acc,
            reg_loss: tally.mean_reg(),
            gates: tally.mean_gates(),
        };
        let improved = best.as_ref().map_or(true, |b| val_acc > b.1);
        if improved {
            best = Some((epoch, val_acc, store.clone()));
        }
        on_epoch(&m, store, improved)?;
        history.push(m);
    }
    let (best_epoch, best_val_acc, best) = best.unwrap_or_else(|| (0, 0.0, store.clone()));
    Ok(FitResult {
        history,
        best_epoch,
        best_val_acc,
        best,
    })
}
