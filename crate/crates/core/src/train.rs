//! Natural and adversarial mini-batch training.

use serde::{Deserialize, Serialize};

use crate::attack::{pgd_attack, AttackConfig};
use crate::data::{BatchPlan, Dataset};
use crate::error::{Error, Result};
use crate::nn::{argmax_rows, Mode, ModelParams, Needs, Network};
use crate::numerics::{Rng, Stream, Tensor};
use crate::optim::{Optimizer, OptimizerConfig};
use crate::sparsity::SparsityMask;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch: BatchPlan,
    pub optimizer: OptimizerConfig,
    /// Adversary used to craft every training batch; `None` trains on
    /// clean inputs.
    pub attack: Option<AttackConfig>,
    /// Caps the number of batches per epoch.
    #[serde(default)]
    pub max_batches: Option<usize>,
    /// Over the first `n` epochs the attack radius and step grow in equal
    /// steps, epoch `e` using the fraction `(e + 1) / (n + 1)`.
    #[serde(default)]
    pub attack_warmup_epochs: usize,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.batch.validate()?;
        self.optimizer.validate()?;
        if let Some(a) = &self.attack {
            a.validate()?;
        }
        if self.max_batches == Some(0) {
            return Err(Error::config("train.max_batches", "must be at least 1"));
        }
        Ok(())
    }
}

/// Extra differentiable term added to the training objective.
pub trait Regularizer {
    /// Adds the term's gradient to `grads` and returns its value.
    fn add_to(&self, params: &ModelParams, grads: &mut [Tensor]) -> Result<f64>;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepStats {
    /// Cross-entropy on the (possibly adversarial) batch.
    pub data_loss: f64,
    /// Value of the regularizer, zero without one.
    pub penalty: f64,
    pub correct: usize,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub batches: usize,
    pub data_loss: f64,
    pub penalty: f64,
    /// Accuracy on the training batches as seen by the optimizer.
    pub train_accuracy: f64,
}

/// Running sums of step statistics.
#[derive(Debug, Clone, Copy, Default)]
pub struct StepTotals {
    pub steps: usize,
    pub data_loss: f64,
    pub penalty: f64,
    pub correct: usize,
    pub count: usize,
}

impl StepTotals {
    pub fn add(&mut self, s: &StepStats) {
        self.steps += 1;
        self.data_loss += s.data_loss;
        self.penalty += s.penalty;
        self.correct += s.correct;
        self.count += s.count;
    }

    pub fn mean_data_loss(&self) -> f64 {
        self.data_loss / self.steps.max(1) as f64
    }

    pub fn mean_penalty(&self) -> f64 {
        self.penalty / self.steps.max(1) as f64
    }

    pub fn accuracy(&self) -> f64 {
        100.0 * self.correct as f64 / self.count.max(1) as f64
    }
}

/// Stateful loop over an endless stream of shuffled batches.
pub struct Trainer<'a> {
    net: &'a Network,
    data: &'a Dataset,
    cfg: TrainConfig,
    optimizer: Optimizer,
    mask: Option<SparsityMask>,
    attack_rng: Rng,
    epoch: usize,
    queue: Vec<Vec<usize>>,
    per_epoch: usize,
    global_step: u64,
}

impl<'a> Trainer<'a> {
    /// `rng` seeds the attack random starts; shuffling follows
    /// `cfg.batch.shuffle_seed`.
    pub fn new(
        net: &'a Network,
        data: &'a Dataset,
        cfg: TrainConfig,
        rng: &Rng,
        mask: Option<SparsityMask>,
    ) -> Result<Self> {
        cfg.validate()?;
        if data.is_empty() {
            return Err(Error::invalid("training set is empty"));
        }
        if data.image_shape() != net.spec().input {
            return Err(Error::shape(
                "training images",
                &net.spec().input,
                &data.image_shape(),
            ));
        }
        let per_epoch = cfg.batch.index_batches(data.len(), 0).len();
        let per_epoch = cfg.max_batches.map_or(per_epoch, |m| m.min(per_epoch));
        Ok(Self {
            net,
            data,
            optimizer: Optimizer::new(cfg.optimizer.clone())?,
            cfg,
            mask,
            attack_rng: rng.substream(Stream::AttackStart, 0),
            epoch: 0,
            queue: Vec::new(),
            per_epoch,
            global_step: 0,
        })
    }

    pub fn batches_per_epoch(&self) -> usize {
        self.per_epoch
    }

    pub fn mask(&self) -> Option<&SparsityMask> {
        self.mask.as_ref()
    }

    /// Completed epochs plus the fraction of the current one.
    pub fn progress(&self) -> f64 {
        if self.queue.is_empty() {
            self.epoch as f64
        } else {
            (self.epoch - 1) as f64
                + (self.per_epoch - self.queue.len()) as f64 / self.per_epoch as f64
        }
    }

    fn next_batch(&mut self) -> Vec<usize> {
        if self.queue.is_empty() {
            let mut b = self.cfg.batch.index_batches(self.data.len(), self.epoch);
            b.truncate(self.per_epoch);
            b.reverse();
            self.queue = b;
            self.epoch += 1;
        }
        self.queue.pop().expect("batch queue refilled")
    }

    /// Attack for the epoch under way, scaled down during warmup.
    pub fn current_attack(&self) -> Option<AttackConfig> {
        let attack = self.cfg.attack?;
        let n = self.cfg.attack_warmup_epochs;
        let e = self.epoch.saturating_sub(1);
        if e >= n {
            return Some(attack);
        }
        let f = (e + 1) as f64 / (n + 1) as f64;
        Some(AttackConfig {
            epsilon: attack.epsilon * f,
            step_size: attack.step_size * f,
            ..attack
        })
    }

    /// One optimizer step on the next batch.
    pub fn step(
        &mut self,
        params: &mut ModelParams,
        reg: Option<&dyn Regularizer>,
    ) -> Result<StepStats> {
        let progress = self.progress();
        let idx = self.next_batch();
        let (mut x, y) = self.data.gather(&idx);
        if let Some(attack) = self.current_attack() {
            let mut r = self
                .attack_rng
                .substream(Stream::AttackStart, self.global_step);
            x = pgd_attack(self.net, params, &x, &y, &attack, &mut r, Mode::Train)?;
        }
        self.global_step += 1;
        let lg = self
            .net
            .loss_grad(params, &x, &y, Mode::Train, Needs::PARAMS)?;
        let mut grads = lg.grads.params.expect("parameter gradients requested");
        let penalty = match reg {
            Some(r) => r.add_to(params, &mut grads)?,
            None => 0.0,
        };
        if let Some(m) = &self.mask {
            m.apply_to_grads(&mut grads);
        }
        self.optimizer
            .step(params, &grads, progress, self.mask.as_ref())?;
        params.apply_updates(lg.bn_updates);
        let correct = argmax_rows(&lg.logits)
            .iter()
            .zip(&y)
            .filter(|(p, t)| p == t)
            .count();
        Ok(StepStats {
            data_loss: lg.loss,
            penalty,
            correct,
            count: y.len(),
        })
    }

    pub fn run_steps(
        &mut self,
        params: &mut ModelParams,
        steps: usize,
        reg: Option<&dyn Regularizer>,
    ) -> Result<StepTotals> {
        let mut totals = StepTotals::default();
        for _ in 0..steps {
            totals.add(&self.step(params, reg)?);
        }
        Ok(totals)
    }

    /// One full epoch (finishing the current one if it is under way).
    pub fn run_epoch(
        &mut self,
        params: &mut ModelParams,
        reg: Option<&dyn Regularizer>,
    ) -> Result<EpochStats> {
        let steps = if self.queue.is_empty() {
            self.per_epoch
        } else {
            self.queue.len()
        };
        let t = self.run_steps(params, steps, reg)?;
        Ok(EpochStats {
            epoch: self.epoch,
            batches: t.steps,
            data_loss: t.mean_data_loss(),
            penalty: t.mean_penalty(),
            train_accuracy: t.accuracy(),
        })
    }
}

/// Trains `params` for `cfg.epochs` epochs, calling `on_epoch` after each
/// epoch with its statistics and the current parameters.
pub fn train(
    net: &Network,
    params: &mut ModelParams,
    data: &Dataset,
    cfg: &TrainConfig,
    rng: &Rng,
    mask: Option<SparsityMask>,
    mut on_epoch: impl FnMut(&EpochStats, &ModelParams) -> Result<()>,
) -> Result<Vec<EpochStats>> {
    if let Some(m) = &mask {
        m.apply(params)?;
    }
    let mut trainer = Trainer::new(net, data, cfg.clone(), rng, mask)?;
    let mut history = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        let stats = trainer.run_epoch(params, None)?;
        log::info!(
            "epoch {} loss {:.4} train acc {:.2}%",
            stats.epoch,
            stats.data_loss,
            stats.train_accuracy
        );
        on_epoch(&stats, params)?;
        history.push(stats);
    }
    Ok(history)
}
