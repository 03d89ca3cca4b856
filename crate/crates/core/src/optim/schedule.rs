use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Schedule {
    Constant,
    /// Multiply by `factor` at each milestone epoch passed.
    StepDecay {
        milestones: Vec<usize>,
        factor: f64,
    },
    /// Half-cosine from the base rate at epoch 0 to zero at `t_max`.
    CosineAnnealing {
        t_max: f64,
    },
}

/// Learning rate at a (possibly fractional) epoch.
pub fn lr_at(schedule: &Schedule, base_lr: f64, epoch: f64) -> f64 {
    match schedule {
        Schedule::Constant => base_lr,
        Schedule::StepDecay { milestones, factor } => {
            let passed = milestones.iter().filter(|&&m| epoch >= m as f64).count();
            base_lr * factor.powi(passed as i32)
        }
        Schedule::CosineAnnealing { t_max } => {
            let t = epoch.clamp(0.0, *t_max);
            base_lr * (1.0 + (PI * t / t_max).cos()) / 2.0
        }
    }
}
