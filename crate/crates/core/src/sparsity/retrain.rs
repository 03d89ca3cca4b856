use super::admm::Monitor;
use super::constraint::SparsityConstraint;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::eval::EvalReport;
use crate::nn::{Checkpoint, Network};
use crate::numerics::Rng;
use crate::train::{train, EpochStats, TrainConfig};

/// Projects every constrained tensor and installs the support as the mask.
/// Any mask already present is intersected with the new one.
pub fn hard_prune(ckpt: &Checkpoint, c: &SparsityConstraint) -> Result<Checkpoint> {
    c.validate(&ckpt.params)?;
    let mut mask = c.support(&ckpt.params)?;
    if let Some(old) = &ckpt.mask {
        old.check_shapes(&ckpt.params)?;
        mask = mask.intersect(old)?;
    }
    let mut out = ckpt.clone();
    mask.apply(&mut out.params)?;
    out.mask = Some(mask);
    Ok(out)
}

/// Adversarial (or natural, per `cfg.attack`) training that keeps every
/// masked-out weight at exactly zero.
pub fn masked_retrain(
    ckpt: &Checkpoint,
    cfg: &TrainConfig,
    data: &Dataset,
    rng: &Rng,
) -> Result<(Checkpoint, Vec<EpochStats>)> {
    let mask = ckpt
        .mask
        .clone()
        .ok_or_else(|| Error::invalid("masked retraining needs a checkpoint with a mask"))?;
    mask.check_shapes(&ckpt.params)?;
    let net = Network::new(ckpt.spec.clone())?;
    let mut out = ckpt.clone();
    let check = mask.clone();
    let history = train(&net, &mut out.params, data, cfg, rng, Some(mask), |_, p| {
        if check.holds_for(p) {
            Ok(())
        } else {
            Err(Error::invalid(
                "a pruned weight became nonzero during retraining",
            ))
        }
    })?;
    out.meta.epoch += history.len();
    Ok((out, history))
}

#[derive(Debug, Clone)]
pub struct PostPruneOutcome {
    pub checkpoint: Checkpoint,
    pub retrain: Vec<EpochStats>,
    pub before: Option<EvalReport>,
    pub after_prune: Option<EvalReport>,
    pub after_retrain: Option<EvalReport>,
}

/// One-shot pruning of a trained checkpoint, optionally followed by masked
/// retraining for `cfg.epochs` epochs.
pub fn post_prune(
    ckpt: &Checkpoint,
    c: &SparsityConstraint,
    retrain: bool,
    cfg: &TrainConfig,
    data: &Dataset,
    rng: &Rng,
    monitor: Option<Monitor<'_>>,
) -> Result<PostPruneOutcome> {
    let net = Network::new(ckpt.spec.clone())?;
    let before = monitor.map(|m| m.report(&net, &ckpt.params)).transpose()?;
    let mut pruned = hard_prune(ckpt, c)?;
    pruned.meta.training = if retrain {
        "post_pruned_retrained"
    } else {
        "post_pruned"
    }
    .into();
    let after_prune = monitor
        .map(|m| m.report(&net, &pruned.params))
        .transpose()?;
    if !retrain {
        return Ok(PostPruneOutcome {
            checkpoint: pruned,
            retrain: Vec::new(),
            before,
            after_prune,
            after_retrain: None,
        });
    }
    let (checkpoint, history) = masked_retrain(&pruned, cfg, data, rng)?;
    let after_retrain = monitor
        .map(|m| m.report(&net, &checkpoint.params))
        .transpose()?;
    Ok(PostPruneOutcome {
        checkpoint,
        retrain: history,
        before,
        after_prune,
        after_retrain,
    })
}
