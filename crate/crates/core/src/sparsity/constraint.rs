use serde::{Deserialize, Serialize};

use super::mask::SparsityMask;
use super::projection::{membership, nonzero_units, project, select_support, unit_count, Scheme};
use crate::error::{Error, Result};
use crate::nn::ModelParams;
use crate::numerics::Tensor;

/// Per-layer sparsity budgets under one pruning scheme.
///
/// `budgets[i]` is `Some(k)` for a constrained parameter tensor and `None`
/// for tensors outside the constraint (biases, batch norm, and the
/// classifier under the filter scheme, where dropping rows would delete
/// classes).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparsityConstraint {
    pub scheme: Scheme,
    pub keep_ratio: f64,
    pub budgets: Vec<Option<usize>>,
}

impl SparsityConstraint {
    /// Same keep-ratio for every prunable layer; each budget is
    /// `max(1, round(ratio * units))`.
    pub fn uniform(params: &ModelParams, scheme: Scheme, keep_ratio: f64) -> Result<Self> {
        if !(keep_ratio > 0.0 && keep_ratio <= 1.0) {
            return Err(Error::invalid(format!(
                "keep ratio {keep_ratio} outside (0, 1]"
            )));
        }
        let budgets = params
            .infos
            .iter()
            .map(|info| {
                if !info.prunable || (info.classifier && scheme == Scheme::Filter) {
                    return None;
                }
                let units = unit_count(&info.shape, scheme);
                Some(((keep_ratio * units as f64).round() as usize).clamp(1, units))
            })
            .collect();
        Ok(Self {
            scheme,
            keep_ratio,
            budgets,
        })
    }

    pub fn budget(&self, param: usize) -> Option<usize> {
        self.budgets.get(param).copied().flatten()
    }

    /// Indices of constrained tensors.
    pub fn constrained(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.budgets
            .iter()
            .enumerate()
            .filter_map(|(i, b)| b.map(|b| (i, b)))
    }

    /// Rejects budgets that do not fit the parameter shapes.
    pub fn validate(&self, params: &ModelParams) -> Result<()> {
        if self.budgets.len() != params.len() {
            return Err(Error::invalid(format!(
                "constraint covers {} tensors, model has {}",
                self.budgets.len(),
                params.len()
            )));
        }
        for (i, b) in self.constrained() {
            let info = &params.infos[i];
            let units = unit_count(&info.shape, self.scheme);
            if !info.prunable {
                return Err(Error::invalid(format!("`{}` is not prunable", info.name)));
            }
            if b == 0 || b > units {
                return Err(Error::invalid(format!(
                    "{} budget {b} for `{}` outside [1, {units}]",
                    self.scheme, info.name
                )));
            }
        }
        Ok(())
    }

    /// Membership of one tensor in its constraint set.
    pub fn member(&self, param: usize, theta: &Tensor) -> bool {
        match self.budget(param) {
            Some(b) => membership(theta, self.scheme, b),
            None => true,
        }
    }

    /// Names of tensors whose nonzero-unit count exceeds the budget.
    pub fn violations(&self, tensors: &[Tensor], params: &ModelParams) -> Vec<String> {
        self.constrained()
            .filter(|&(i, b)| nonzero_units(&tensors[i], self.scheme) > b)
            .map(|(i, _)| params.infos[i].name.clone())
            .collect()
    }

    pub fn is_satisfied(&self, params: &ModelParams) -> bool {
        self.violations(&params.tensors, params).is_empty()
    }

    /// Projection of a single tensor onto its constraint set.
    pub fn project(&self, param: usize, v: &Tensor) -> Result<Tensor> {
        match self.budget(param) {
            Some(b) => project(v, self.scheme, b),
            None => Ok(v.clone()),
        }
    }

    /// Support of the projection of every constrained tensor.
    pub fn support(&self, params: &ModelParams) -> Result<SparsityMask> {
        let mut masks = vec![None; params.len()];
        for (i, b) in self.constrained() {
            masks[i] = Some(select_support(&params.tensors[i], self.scheme, b)?);
        }
        Ok(SparsityMask::from_parts(masks))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{build_network, Family};

    #[test]
    fn uniform_budgets_for_lenet() {
        let spec = build_network(Family::MnistLenet, 4).unwrap();
        let params = ModelParams::zeros(&spec);
        let c = SparsityConstraint::uniform(&params, Scheme::Filter, 0.25).unwrap();
        let budgets: Vec<(String, usize)> = c
            .constrained()
            .map(|(i, b)| (params.infos[i].name.clone(), b))
            .collect();
        // conv 8 -> 2, conv 16 -> 4, fc 256 -> 64, classifier exempt
        assert_eq!(
            budgets.iter().map(|b| b.1).collect::<Vec<_>>(),
            vec![2, 4, 64]
        );
        c.validate(&params).unwrap();

        let col = SparsityConstraint::uniform(&params, Scheme::Column, 0.25).unwrap();
        assert_eq!(col.constrained().count(), 4);
        assert!(SparsityConstraint::uniform(&params, Scheme::Irregular, 0.0).is_err());
        assert!(SparsityConstraint::uniform(&params, Scheme::Irregular, 1.5).is_err());
    }

    #[test]
    fn tiny_ratio_keeps_one_unit() {
        let spec = build_network(Family::MnistLenet, 1).unwrap();
        let params = ModelParams::zeros(&spec);
        let c = SparsityConstraint::uniform(&params, Scheme::Filter, 0.01).unwrap();
        assert!(c.constrained().all(|(_, b)| b == 1));
    }
}
