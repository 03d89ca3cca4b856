//! Optimizers, learning-rate schedules and weight initialization.

mod init;
mod optimizer;
mod schedule;

pub use init::{init_params, init_params_with, InitMethod, InitRanges};
pub use optimizer::{Optimizer, OptimizerConfig, OptimizerKind};
pub use schedule::{lr_at, Schedule};
