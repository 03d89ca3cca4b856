//! ADMM splitting of constrained adversarial training.
//!
//! The weights `theta` are trained on the adversarial loss plus
//! `(rho/2) * sum_i ||theta_i - z_i + u_i||^2`, while the auxiliary `z_i`
//! track the Euclidean projection of `theta_i + u_i` onto the layer's
//! sparsity set and the duals `u_i` accumulate `rho * (theta_i - z_i)`.

use serde::{Deserialize, Serialize};

use super::constraint::SparsityConstraint;
use super::retrain::{hard_prune, masked_retrain};
use crate::attack::{pgd_attack, AttackConfig};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::eval::{evaluate_params, EvalReport};
use crate::nn::{Checkpoint, CheckpointMeta, Mode, ModelParams, Needs, Network};
use crate::numerics::{Rng, Stream, Tensor};
use crate::train::{EpochStats, Regularizer, TrainConfig, Trainer};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdmmConfig {
    /// Penalty `rho`.
    pub rho: f64,
    /// Number of outer iterations `K`.
    pub iterations: usize,
    /// Training epochs on the first subproblem per outer iteration.
    pub sub_epochs: usize,
    /// If set, each outer iteration runs this many batches instead of
    /// `sub_epochs` epochs (1 gives one batch per iteration).
    #[serde(default)]
    pub steps_per_iteration: Option<usize>,
    /// Epochs of masked retraining after the hard prune.
    pub retrain_epochs: usize,
}

impl Default for AdmmConfig {
    fn default() -> Self {
        Self {
            rho: 1e-3,
            iterations: 30,
            sub_epochs: 1,
            steps_per_iteration: None,
            retrain_epochs: 0,
        }
    }
}

impl AdmmConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rho > 0.0 && self.rho.is_finite()) {
            return Err(Error::config("admm.rho", "must be positive"));
        }
        if self.sub_epochs == 0 && self.steps_per_iteration.is_none() {
            return Err(Error::config("admm.sub_epochs", "must be at least 1"));
        }
        if self.steps_per_iteration == Some(0) {
            return Err(Error::config(
                "admm.steps_per_iteration",
                "must be at least 1",
            ));
        }
        Ok(())
    }
}

/// Auxiliary and dual variables for every constrained tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdmmState {
    pub z: Vec<Option<Tensor>>,
    pub u: Vec<Option<Tensor>>,
    pub rho: f64,
}

impl AdmmState {
    /// `z = Π(theta)`, `u = 0`.
    pub fn init(params: &ModelParams, c: &SparsityConstraint, rho: f64) -> Result<Self> {
        c.validate(params)?;
        let mut z = vec![None; params.len()];
        let mut u = vec![None; params.len()];
        for (i, _) in c.constrained() {
            z[i] = Some(c.project(i, &params.tensors[i])?);
            u[i] = Some(Tensor::zeros(params.tensors[i].shape()));
        }
        Ok(Self { z, u, rho })
    }

    fn pairs(&self) -> impl Iterator<Item = (usize, &Tensor, &Tensor)> {
        self.z
            .iter()
            .zip(&self.u)
            .enumerate()
            .filter_map(|(i, (z, u))| Some((i, z.as_ref()?, u.as_ref()?)))
    }

    /// `(rho/2) * sum_i ||theta_i - z_i + u_i||^2`.
    pub fn penalty(&self, params: &ModelParams) -> f64 {
        self.pairs()
            .map(|(i, z, u)| quadratic_penalty(&params.tensors[i], z, u, self.rho).0)
            .sum()
    }

    /// One z-update and dual update for every constrained tensor, checked
    /// for feasibility of `z` and exactness of the dual step.
    pub fn update(&mut self, params: &ModelParams, c: &SparsityConstraint) -> Result<()> {
        for (i, _) in c.constrained() {
            let theta = &params.tensors[i];
            let u = self.u[i]
                .as_ref()
                .expect("dual exists for constrained tensor");
            let z = admm_z_update(theta, u, c, i)?;
            if !c.member(i, &z) {
                return Err(Error::invalid(format!(
                    "z for `{}` left its sparsity set",
                    params.infos[i].name
                )));
            }
            let next = admm_dual_update(u, theta, &z, self.rho)?;
            let exact = next
                .data()
                .iter()
                .zip(u.data())
                .zip(theta.data().iter().zip(z.data()))
                .all(|((&n, &u0), (&t, &z0))| n == u0 + self.rho * (t - z0));
            if !exact {
                return Err(Error::invalid("dual update is not exact"));
            }
            self.z[i] = Some(z);
            self.u[i] = Some(next);
        }
        Ok(())
    }

    /// `max |theta - z|` per constrained tensor.
    pub fn primal_residuals(&self, params: &ModelParams) -> Vec<(usize, f64)> {
        self.pairs()
            .map(|(i, z, _)| {
                let r = params.tensors[i]
                    .data()
                    .iter()
                    .zip(z.data())
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max);
                (i, r)
            })
            .collect()
    }

    /// Whether every `z_i` lies in its sparsity set.
    pub fn z_feasible(&self, c: &SparsityConstraint) -> bool {
        self.z
            .iter()
            .enumerate()
            .all(|(i, z)| z.as_ref().is_none_or(|z| c.member(i, z)))
    }
}

impl Regularizer for AdmmState {
    fn add_to(&self, params: &ModelParams, grads: &mut [Tensor]) -> Result<f64> {
        let mut total = 0.0;
        for (i, z, u) in self.pairs() {
            let (value, grad) = quadratic_penalty(&params.tensors[i], z, u, self.rho);
            grads[i].add_scaled(&grad, 1.0)?;
            total += value;
        }
        Ok(total)
    }
}

/// `(rho/2) ||theta - z + u||^2` and its gradient `rho (theta - z + u)`.
pub fn quadratic_penalty(theta: &Tensor, z: &Tensor, u: &Tensor, rho: f64) -> (f64, Tensor) {
    let mut g = theta.clone();
    let mut sq = 0.0;
    for ((g, &zv), &uv) in g.data_mut().iter_mut().zip(z.data()).zip(u.data()) {
        let d = *g - zv + uv;
        sq += d * d;
        *g = rho * d;
    }
    (0.5 * rho * sq, g)
}

/// `z = Π_S(theta + u)` for constrained tensor `param`.
pub fn admm_z_update(
    theta: &Tensor,
    u: &Tensor,
    c: &SparsityConstraint,
    param: usize,
) -> Result<Tensor> {
    c.project(param, &theta.add(u)?)
}

/// `u' = u + rho (theta - z)`.
pub fn admm_dual_update(u: &Tensor, theta: &Tensor, z: &Tensor, rho: f64) -> Result<Tensor> {
    if u.shape() != theta.shape() || z.shape() != theta.shape() {
        return Err(Error::shape("dual update", theta.shape(), u.shape()));
    }
    let data = u
        .data()
        .iter()
        .zip(theta.data().iter().zip(z.data()))
        .map(|(&u0, (&t, &z0))| u0 + rho * (t - z0))
        .collect();
    Tensor::new(u.shape().to_vec(), data)
}

/// Loss of the first subproblem on one batch: cross-entropy on PGD
/// examples plus the quadratic penalty, with gradients for every tensor.
pub fn admm_subproblem1_loss(
    net: &Network,
    params: &ModelParams,
    state: &AdmmState,
    x: &Tensor,
    labels: &[usize],
    attack: &AttackConfig,
    rng: &mut Rng,
) -> Result<(f64, Vec<Tensor>)> {
    let adv = pgd_attack(net, params, x, labels, attack, rng, Mode::Train)?;
    let lg = net.loss_grad(params, &adv, labels, Mode::Train, Needs::PARAMS)?;
    let mut grads = lg.grads.params.expect("parameter gradients requested");
    let penalty = state.add_to(params, &mut grads)?;
    Ok((lg.loss + penalty, grads))
}

/// Held-out set and attack used to score the model during a run.
#[derive(Debug, Clone, Copy)]
pub struct Monitor<'a> {
    pub data: &'a Dataset,
    pub attack: AttackConfig,
    pub seed: u64,
}

impl Monitor<'_> {
    pub fn report(&self, net: &Network, params: &ModelParams) -> Result<EvalReport> {
        evaluate_params(net, params, self.data, &self.attack, &Rng::new(self.seed))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationLog {
    pub iteration: usize,
    pub data_loss: f64,
    pub penalty: f64,
    pub train_accuracy: f64,
    /// `(tensor name, max |theta - z|)` after the z-update.
    pub residuals: Vec<(String, f64)>,
    pub max_residual: f64,
    pub z_feasible: bool,
    pub natural_accuracy: Option<f64>,
    pub adversarial_accuracy: Option<f64>,
}

impl IterationLog {
    pub fn csv_header(names: &[String]) -> Vec<String> {
        let mut h: Vec<String> = [
            "iteration",
            "data_loss",
            "penalty",
            "train_accuracy",
            "max_residual",
            "z_feasible",
            "natural_accuracy",
            "adversarial_accuracy",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        h.extend(names.iter().map(|n| format!("residual:{n}")));
        h
    }

    pub fn csv_row(&self) -> Vec<String> {
        let opt = |v: Option<f64>| v.map_or(String::new(), |v| format!("{v:.4}"));
        let mut r = vec![
            self.iteration.to_string(),
            format!("{:.6}", self.data_loss),
            format!("{:.6e}", self.penalty),
            format!("{:.4}", self.train_accuracy),
            format!("{:.6e}", self.max_residual),
            self.z_feasible.to_string(),
            opt(self.natural_accuracy),
            opt(self.adversarial_accuracy),
        ];
        r.extend(self.residuals.iter().map(|(_, v)| format!("{v:.6e}")));
        r
    }
}

#[derive(Debug, Clone)]
pub struct PruneOutcome {
    pub checkpoint: Checkpoint,
    pub iterations: Vec<IterationLog>,
    pub retrain: Vec<EpochStats>,
    /// Accuracy right after the hard prune, before retraining.
    pub after_hard_prune: Option<EvalReport>,
}

/// Concurrent adversarial training and pruning from `start`.
///
/// Runs `admm.iterations` outer iterations of (train subproblem 1, z-update,
/// dual update), then projects the weights onto the constraint, installs
/// the support as a mask, and retrains under it for `admm.retrain_epochs`.
#[allow(clippy::too_many_arguments)]
pub fn concurrent_train_prune(
    start: &Checkpoint,
    c: &SparsityConstraint,
    admm: &AdmmConfig,
    train: &TrainConfig,
    data: &Dataset,
    rng: &Rng,
    monitor: Option<Monitor<'_>>,
    mut on_iteration: impl FnMut(&IterationLog),
) -> Result<PruneOutcome> {
    admm.validate()?;
    train.validate()?;
    let net = Network::new(start.spec.clone())?;
    let mut params = start.params.clone();
    let mut state = AdmmState::init(&params, c, admm.rho)?;
    if !state.z_feasible(c) {
        return Err(Error::invalid("initial projection is infeasible"));
    }
    let names: Vec<String> = c
        .constrained()
        .map(|(i, _)| params.infos[i].name.clone())
        .collect();
    let mut trainer = Trainer::new(
        &net,
        data,
        train.clone(),
        &rng.substream(Stream::Other(1), 0),
        None,
    )?;
    let steps = admm
        .steps_per_iteration
        .unwrap_or(admm.sub_epochs * trainer.batches_per_epoch());
    let mut log = Vec::with_capacity(admm.iterations);
    for k in 1..=admm.iterations {
        let totals = trainer.run_steps(&mut params, steps, Some(&state))?;
        state.update(&params, c)?;
        let residuals = state.primal_residuals(&params);
        let report = monitor.map(|m| m.report(&net, &params)).transpose()?;
        let entry = IterationLog {
            iteration: k,
            data_loss: totals.mean_data_loss(),
            penalty: totals.mean_penalty(),
            train_accuracy: totals.accuracy(),
            max_residual: residuals.iter().map(|r| r.1).fold(0.0, f64::max),
            residuals: names
                .iter()
                .cloned()
                .zip(residuals.iter().map(|r| r.1))
                .collect(),
            z_feasible: state.z_feasible(c),
            natural_accuracy: report.as_ref().map(|r| r.natural_accuracy),
            adversarial_accuracy: report.as_ref().map(|r| r.adversarial_accuracy),
        };
        log::info!(
            "admm {k}/{}: loss {:.4} penalty {:.3e} residual {:.3e}",
            admm.iterations,
            entry.data_loss,
            entry.penalty,
            entry.max_residual
        );
        on_iteration(&entry);
        log.push(entry);
    }
    let mut meta = CheckpointMeta {
        seed: rng.seed(),
        epoch: start.meta.epoch,
        training: "admm_pruned".into(),
        ..CheckpointMeta::default()
    };
    meta.extra.insert("scheme".into(), c.scheme.to_string());
    meta.extra
        .insert("keep_ratio".into(), c.keep_ratio.to_string());
    let pruned = hard_prune(&Checkpoint::new(start.spec.clone(), params, meta), c)?;
    let after_hard_prune = monitor
        .map(|m| m.report(&net, &pruned.params))
        .transpose()?;
    let retrain_cfg = TrainConfig {
        epochs: admm.retrain_epochs,
        ..train.clone()
    };
    let (checkpoint, retrain) = masked_retrain(
        &pruned,
        &retrain_cfg,
        data,
        &rng.substream(Stream::Other(2), 0),
    )?;
    if !c.is_satisfied(&checkpoint.params) {
        return Err(Error::invalid(
            "retrained weights violate the sparsity constraint",
        ));
    }
    Ok(PruneOutcome {
        checkpoint,
        iterations: log,
        retrain,
        after_hard_prune,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sparsity::Scheme;

    #[test]
    fn dual_update_examples() {
        let u = Tensor::vector(vec![0.0, 0.0]);
        let theta = Tensor::vector(vec![1.0, 2.0]);
        let z = Tensor::vector(vec![0.0, 0.0]);
        let u1 = admm_dual_update(&u, &theta, &z, 1e-3).unwrap();
        assert_eq!(u1.data(), &[0.001, 0.002]);
        assert_eq!(admm_dual_update(&u1, &theta, &theta, 1e-3).unwrap(), u1);
        let u2 = admm_dual_update(&u1, &theta, &z, 1e-3).unwrap();
        assert!((u2.data()[1] - 0.004).abs() < 1e-18);
    }

    #[test]
    fn penalty_vanishes_at_z_minus_u() {
        let z = Tensor::vector(vec![0.5, -1.0, 2.0]);
        let u = Tensor::vector(vec![0.25, 0.125, -0.5]);
        let theta = z.sub(&u).unwrap();
        let (v, g) = quadratic_penalty(&theta, &z, &u, 0.7);
        assert_eq!(v, 0.0);
        assert_eq!(g.count_nonzero(), 0);
        let (v0, g0) = quadratic_penalty(&Tensor::vector(vec![5.0, 5.0, 5.0]), &z, &u, 0.0);
        assert_eq!((v0, g0.count_nonzero()), (0.0, 0));
    }

    #[test]
    fn z_of_feasible_theta_is_theta() {
        use crate::nn::{LayerSpec, NetworkSpec};
        let spec =
            NetworkSpec::custom([1, 1, 1], vec![LayerSpec::Flatten, LayerSpec::fc(1, 4)]).unwrap();
        let mut p = ModelParams::zeros(&spec);
        p.tensors[0] = Tensor::new(vec![4, 1], vec![0.0, 3.0, 0.0, -1.0]).unwrap();
        let c = SparsityConstraint::uniform(&p, Scheme::Irregular, 0.5).unwrap();
        let u = Tensor::zeros(&[4, 1]);
        assert_eq!(
            admm_z_update(&p.tensors[0], &u, &c, 0).unwrap(),
            p.tensors[0]
        );
        let zero = Tensor::zeros(&[4, 1]);
        assert_eq!(admm_z_update(&zero, &u, &c, 0).unwrap(), zero);
    }
}
