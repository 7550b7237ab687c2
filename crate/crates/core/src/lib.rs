//! Gated attention for convolutional networks, built on a small
//! reverse-mode automatic differentiation engine.
//!
//! The crate is `no_std` and only needs `alloc`. It contains:
//!
//! - [`tensor`], [`graph`] and [`ops`]: dense tensors, the recording tape and
//!   the differentiable primitives (convolution, pooling, batch norm,
//!   softmax variants, attention reductions).
//! - [`attention`]: attention heads, output heads, layer gates, global gates,
//!   output rectification and the head orthogonality regularizer.
//! - [`models`]: the five-convolution baseline, a toy wide residual network,
//!   and the augmented model that attaches attention modules to either.
//! - [`clutter`] and [`batch`]: cluttered translated MNIST generation and
//!   deterministic batching.
//! - [`optim`]: SGD with momentum and the step learning-rate schedule.
//!
//! IO, file formats, configuration and the training driver live in the
//! `warn` crate.
#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod attention;
pub mod batch;
pub mod clutter;
mod error;
pub mod gradcheck;
pub mod graph;
pub mod init;
pub mod models;
pub mod ops;
pub mod optim;
pub mod params;
mod scalar;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use graph::{Graph, Var};
pub use params::{BufferId, ParamId, ParamStore};
pub use scalar::Real;
pub use tensor::Tensor;
