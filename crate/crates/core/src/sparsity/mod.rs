//! Sparsity constraints, their Euclidean projections, and the ADMM loop
//! that trains a network into them.

mod admm;
mod constraint;
mod mask;
mod projection;
mod retrain;

pub use admm::{
    admm_dual_update, admm_subproblem1_loss, admm_z_update, concurrent_train_prune,
    quadratic_penalty, AdmmConfig, AdmmState, IterationLog, Monitor, PruneOutcome,
};
pub use constraint::SparsityConstraint;
pub use mask::SparsityMask;
pub use projection::{
    membership, nonzero_units, project, project_column, project_filter, project_irregular,
    select_support, top_k, unit_count, unit_scores, Scheme,
};
pub use retrain::{hard_prune, masked_retrain, post_prune, PostPruneOutcome};
