//! Scripted studies: scratch baselines, pruning grids, inherited-initialization
//! runs, the initializer study, post-pruning comparisons and transfer.
//!
//! Every driver reads an [`ExperimentConfig`], writes CSV and JSON tables plus
//! a manifest under `output_dir`, and returns the rows. Trained models are
//! cached under `output_dir/checkpoints`, keyed by a hash of the settings that
//! produced them, so later drivers can reuse earlier runs.

mod config;
mod drivers;
mod lottery;
mod report;

pub use config::{
    apply_override, parse_override, DataSettings, DatasetName, ExperimentConfig, InitStudySettings,
    LotterySettings, ModelSettings, OptimizerName, OptimizerSettings, PruneSettings, TrainSettings,
    TransferSettings,
};
pub use drivers::{
    run_experiment, run_init_study, run_lottery_ticket, run_post_prune_study, run_prune_grid,
    run_scratch_baseline, run_transfer, Context, InitRow, LotteryRow, PostPruneRow, PruneRow,
    ScratchRow, TransferRow, EXPERIMENTS,
};
pub use lottery::shrink_to_support;
pub use report::{file_digest, sha256_hex, Manifest, Report};
