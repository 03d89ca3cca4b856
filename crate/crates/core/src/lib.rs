//! Adversarial training and ADMM-based structured pruning for small
//! convolutional networks.

pub mod attack;
pub mod data;
pub mod error;
pub mod eval;
pub mod experiments;
pub mod nn;
pub mod numerics;
pub mod optim;
pub mod sparsity;
pub mod train;

pub use error::{Error, Result};
