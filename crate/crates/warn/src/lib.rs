//! Datasets, file formats, the training driver and the command-line front
//! end for gated-attention CNNs built on [`warn_core`].

pub mod checkpoint;
pub mod cli;
pub mod cifar;
pub mod config;
pub mod dataset;
pub mod error;
pub mod idx;
pub mod metrics;
pub mod pgm;
pub mod run;

pub use error::{Result, WarnError};
pub use warn_core as core;
