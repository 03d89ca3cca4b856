use serde::{Deserialize, Serialize};

use super::schedule::{lr_at, Schedule};
use crate::error::{Error, Result};
use crate::nn::ModelParams;
use crate::numerics::Tensor;
use crate::sparsity::SparsityMask;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd { momentum: f64 },
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub schedule: Schedule,
}

impl OptimizerConfig {
    /// Adam with the originally published moment constants.
    pub fn adam(lr: f64) -> Self {
        Self {
            kind: OptimizerKind::Adam {
                beta1: 0.9,
                beta2: 0.999,
                eps: 1e-8,
            },
            lr,
            schedule: Schedule::Constant,
        }
    }

    pub fn sgd(lr: f64, momentum: f64) -> Self {
        Self {
            kind: OptimizerKind::Sgd { momentum },
            lr,
            schedule: Schedule::Constant,
        }
    }

    /// SGD with momentum under a cosine-annealed rate.
    pub fn cos_anneal(lr: f64, momentum: f64, t_max: f64) -> Self {
        Self {
            schedule: Schedule::CosineAnnealing { t_max },
            ..Self::sgd(lr, momentum)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::config(
                "optimizer.lr",
                "learning rate must be positive",
            ));
        }
        match self.kind {
            OptimizerKind::Sgd { momentum } if !(0.0..1.0).contains(&momentum) => Err(
                Error::config("optimizer.momentum", "momentum must lie in [0, 1)"),
            ),
            OptimizerKind::Adam { beta1, beta2, eps }
                if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) || eps <= 0.0 =>
            {
                Err(Error::config(
                    "optimizer.beta",
                    "Adam betas must lie in [0, 1) and eps > 0",
                ))
            }
            _ => match &self.schedule {
                Schedule::CosineAnnealing { t_max } if *t_max <= 0.0 => Err(Error::config(
                    "optimizer.schedule.t_max",
                    "must be positive",
                )),
                Schedule::StepDecay { factor, .. } if *factor <= 0.0 => Err(Error::config(
                    "optimizer.schedule.factor",
                    "must be positive",
                )),
                _ => Ok(()),
            },
        }
    }

    pub fn lr_at(&self, epoch: f64) -> f64 {
        lr_at(&self.schedule, self.lr, epoch)
    }
}

#[derive(Debug, Clone)]
enum Slot {
    Sgd { velocity: Vec<f64> },
    Adam { m: Vec<f64>, v: Vec<f64> },
}

/// Optimizer state owned by one training loop.
#[derive(Debug, Clone)]
pub struct Optimizer {
    cfg: OptimizerConfig,
    slots: Vec<Option<Slot>>,
    steps: u64,
}

impl Optimizer {
    pub fn new(cfg: OptimizerConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            cfg,
            slots: Vec::new(),
            steps: 0,
        })
    }

    pub fn config(&self) -> &OptimizerConfig {
        &self.cfg
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// One update of every trainable tensor. Entries masked out by `mask`
    /// are left bit-identical and their optimizer state is not advanced.
    pub fn step(
        &mut self,
        params: &mut ModelParams,
        grads: &[Tensor],
        epoch: f64,
        mask: Option<&SparsityMask>,
    ) -> Result<()> {
        if grads.len() != params.len() {
            return Err(Error::invalid(format!(
                "{} gradients for {} parameter tensors",
                grads.len(),
                params.len()
            )));
        }
        for (i, (p, g)) in params.tensors.iter().zip(grads).enumerate() {
            if p.shape() != g.shape() {
                return Err(Error::shape(
                    params.infos[i].name.clone(),
                    p.shape(),
                    g.shape(),
                ));
            }
        }
        if let Some(m) = mask {
            m.check_shapes(params)?;
        }
        if self.slots.len() != params.len() {
            self.slots = params
                .infos
                .iter()
                .zip(&params.tensors)
                .map(|(info, t)| {
                    info.kind.is_trainable().then(|| match self.cfg.kind {
                        OptimizerKind::Sgd { .. } => Slot::Sgd {
                            velocity: vec![0.0; t.len()],
                        },
                        OptimizerKind::Adam { .. } => Slot::Adam {
                            m: vec![0.0; t.len()],
                            v: vec![0.0; t.len()],
                        },
                    })
                })
                .collect();
        }
        self.steps += 1;
        let lr = self.cfg.lr_at(epoch);
        let t = self.steps as i32;
        for (i, slot) in self.slots.iter_mut().enumerate() {
            let Some(slot) = slot else { continue };
            let keep = mask.and_then(|m| m.get(i)).map(|m| m.data());
            let w = params.tensors[i].data_mut();
            let g = grads[i].data();
            let active = |j: usize| keep.is_none_or(|k| k[j] != 0.0);
            match (slot, &self.cfg.kind) {
                (Slot::Sgd { velocity }, OptimizerKind::Sgd { momentum }) => {
                    for j in 0..w.len() {
                        if !active(j) {
                            continue;
                        }
                        velocity[j] = momentum * velocity[j] + g[j];
                        w[j] -= lr * velocity[j];
                    }
                }
                (Slot::Adam { m, v }, OptimizerKind::Adam { beta1, beta2, eps }) => {
                    let bc1 = 1.0 - beta1.powi(t);
                    let bc2 = 1.0 - beta2.powi(t);
                    for j in 0..w.len() {
                        if !active(j) {
                            continue;
                        }
                        m[j] = beta1 * m[j] + (1.0 - beta1) * g[j];
                        v[j] = beta2 * v[j] + (1.0 - beta2) * g[j] * g[j];
                        let mhat = m[j] / bc1;
                        let vhat = v[j] / bc2;
                        w[j] -= lr * mhat / (vhat.sqrt() + eps);
                    }
                }
                _ => unreachable!("slot kind follows the optimizer kind"),
            }
        }
        Ok(())
    }
}
