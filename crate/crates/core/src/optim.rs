//! SGD with momentum and weight decay, and the step learning-rate schedule.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{contract_err, dim_err, Result};
use crate::{ParamStore, Real, Tensor};

/// `lr0 * 0.1^k` where `k` counts the milestones `m <= epoch`.
pub fn lr_at(lr0: f64, milestones: &[usize], epoch: usize) -> f64 {
    let passed = milestones.iter().filter(|&&m| epoch >= m).count();
    lr0 * libm::pow(0.1, passed as f64)
}

/// One in-place SGD step on a flat parameter buffer:
/// `v = momentum * v + grad + weight_decay * w; w -= lr * v`.
pub fn sgd_update<T: Real>(
    params: &mut [T],
    grads: &[T],
    velocity: &mut [T],
    lr: T,
    momentum: T,
    weight_decay: T,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != velocity.len() {
        return Err(dim_err(
            "sgd_update",
            format!("params {}, grads {}, velocity {}", params.len(), grads.len(), velocity.len()),
        ));
    }
    if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
        return Err(contract_err("sgd_update", format!("non-finite gradient at element {}", i)));
    }
    for ((w, &g), v) in params.iter_mut().zip(grads).zip(velocity.iter_mut()) {
        *v = momentum * *v + g + weight_decay * *w;
        *w -= lr * *v;
    }
    Ok(())
}

/// Momentum buffers for every parameter of a store.
#[derive(Clone, Debug, PartialEq)]
pub struct Sgd<T> {
    pub momentum: T,
    pub weight_decay: T,
    velocity: Vec<Vec<T>>,
}

impl<T: Real> Sgd<T> {
    pub fn new(store: &ParamStore<T>, momentum: T, weight_decay: T) -> Self {
        let velocity = store
            .params()
            .iter()
            .map(|p| alloc::vec![T::zero(); p.tensor.numel()])
            .collect();
        Self {
            momentum,
            weight_decay,
            velocity,
        }
    }

    /// Applies one step. `grads[i]` is the gradient of parameter `i`; `None`
    /// leaves that parameter untouched.
    pub fn step(&mut self, store: &mut ParamStore<T>, grads: &[Option<Tensor<T>>], lr: T) -> Result<()> {
        if grads.len() != self.velocity.len() {
            return Err(dim_err("sgd", "one gradient slot per parameter expected"));
        }
        for id in store.param_ids().collect::<Vec<_>>() {
            if let Some(g) = &grads[id.0] {
                let (m, wd) = (self.momentum, self.weight_decay);
                sgd_update(store.param_mut(id).data_mut(), g.data(), &mut self.velocity[id.0], lr, m, wd)?;
            }
        }
        Ok(())
    }
}
