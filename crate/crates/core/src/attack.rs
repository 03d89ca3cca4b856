//! Sign-gradient PGD adversary under an l-infinity budget.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Mode, ModelParams, Needs, Network};
use crate::numerics::{Rng, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttackConfig {
    /// Radius of the l-infinity ball in pixel units.
    pub epsilon: f64,
    /// Per-iteration step `alpha`.
    pub step_size: f64,
    pub steps: usize,
    pub random_start: bool,
}

impl AttackConfig {
    pub fn none() -> Self {
        Self {
            epsilon: 0.0,
            step_size: 0.0,
            steps: 0,
            random_start: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return Err(Error::config(
                "attack.epsilon",
                "must be finite and non-negative",
            ));
        }
        if !(self.step_size >= 0.0 && self.step_size.is_finite()) {
            return Err(Error::config(
                "attack.step_size",
                "must be finite and non-negative",
            ));
        }
        Ok(())
    }

    /// True when the attack cannot move any input.
    pub fn is_identity(&self) -> bool {
        self.epsilon == 0.0 || (self.steps == 0 && !self.random_start)
    }
}

/// Standard settings per dataset: `mnist` or `cifar`.
pub fn default_attack(dataset: &str) -> Result<AttackConfig> {
    match dataset {
        "mnist" => Ok(AttackConfig {
            epsilon: 0.3,
            step_size: 0.01,
            steps: 40,
            random_start: true,
        }),
        "cifar" | "cifar10" => Ok(AttackConfig {
            epsilon: 8.0 / 255.0,
            step_size: 2.0 / 255.0,
            steps: 10,
            random_start: true,
        }),
        other => Err(Error::invalid(format!(
            "no default attack for dataset `{other}`"
        ))),
    }
}

/// Projects `candidate` onto `[max(0, x - eps), min(1, x + eps)]` in place.
pub fn project_into_ball(candidate: &mut [f64], x: &[f64], epsilon: f64) {
    for (c, &x0) in candidate.iter_mut().zip(x) {
        let lo = (x0 - epsilon).max(0.0);
        let hi = (x0 + epsilon).min(1.0);
        *c = c.max(lo).min(hi);
    }
}

/// Adversarial version of the batch `x` against `params`.
///
/// The loss is the batch-mean cross-entropy; its input gradient differs
/// from the per-sample gradients only by a positive factor, which `sign`
/// discards. `mode` selects batch or running statistics for batch norm.
pub fn pgd_attack(
    net: &Network,
    params: &ModelParams,
    x: &Tensor,
    labels: &[usize],
    cfg: &AttackConfig,
    rng: &mut Rng,
    mode: Mode,
) -> Result<Tensor> {
    cfg.validate()?;
    if cfg.is_identity() {
        return Ok(x.clone());
    }
    let x0 = x.data();
    let eps = cfg.epsilon;
    let mut adv = x.clone();
    if cfg.random_start {
        for v in adv.data_mut() {
            *v += rng.uniform(-eps, eps);
        }
        project_into_ball(adv.data_mut(), x0, eps);
    }
    for _ in 0..cfg.steps {
        let lg = net.loss_grad(params, &adv, labels, mode, Needs::INPUT)?;
        let g = lg.grads.input.expect("input gradient requested");
        for (a, &gi) in adv.data_mut().iter_mut().zip(g.data()) {
            *a += cfg.step_size * crate::numerics::sign(gi);
        }
        project_into_ball(adv.data_mut(), x0, eps);
    }
    Ok(adv)
}
