use crate::error::{Error, Result};
use crate::nn::ModelParams;
use crate::numerics::Tensor;

/// Binary keep-masks for a subset of parameter tensors (1 = trainable, 0 = pruned).
#[derive(Debug, Clone, PartialEq)]
pub struct SparsityMask {
    masks: Vec<Option<Tensor>>,
}

impl SparsityMask {
    pub fn from_parts(masks: Vec<Option<Tensor>>) -> Self {
        Self { masks }
    }

    /// All-ones masks over every prunable tensor.
    pub fn dense(params: &ModelParams) -> Self {
        Self {
            masks: params
                .infos
                .iter()
                .map(|p| p.prunable.then(|| Tensor::full(&p.shape, 1.0)))
                .collect(),
        }
    }

    pub fn get(&self, param: usize) -> Option<&Tensor> {
        self.masks.get(param).and_then(Option::as_ref)
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, &Tensor)> {
        self.masks
            .iter()
            .enumerate()
            .filter_map(|(i, m)| m.as_ref().map(|m| (i, m)))
    }

    pub fn len(&self) -> usize {
        self.masks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masks.iter().all(Option::is_none)
    }

    pub fn check_shapes(&self, params: &ModelParams) -> Result<()> {
        if self.masks.len() != params.len() {
            return Err(Error::invalid(format!(
                "mask covers {} tensors, model has {}",
                self.masks.len(),
                params.len()
            )));
        }
        for (i, m) in self.iter() {
            if m.shape() != params.tensors[i].shape() {
                return Err(Error::shape(
                    format!("mask for {}", params.infos[i].name),
                    params.tensors[i].shape(),
                    m.shape(),
                ));
            }
        }
        Ok(())
    }

    /// Entrywise product with `other`; tensors masked in only one of the two
    /// keep that mask.
    pub fn intersect(&self, other: &SparsityMask) -> Result<SparsityMask> {
        if self.masks.len() != other.masks.len() {
            return Err(Error::invalid("masks cover different parameter sets"));
        }
        let masks = self
            .masks
            .iter()
            .zip(&other.masks)
            .map(|(a, b)| match (a, b) {
                (Some(a), Some(b)) => a.mul(b).map(Some),
                (Some(m), None) | (None, Some(m)) => Ok(Some(m.clone())),
                (None, None) => Ok(None),
            })
            .collect::<Result<_>>()?;
        Ok(SparsityMask { masks })
    }

    /// Zeroes every masked-out entry of `params`.
    pub fn apply(&self, params: &mut ModelParams) -> Result<()> {
        self.check_shapes(params)?;
        for (i, m) in self.masks.iter().enumerate() {
            if let Some(m) = m {
                zero_masked(params.tensors[i].data_mut(), m.data());
            }
        }
        Ok(())
    }

    /// Zeroes masked-out gradient entries.
    pub fn apply_to_grads(&self, grads: &mut [Tensor]) {
        for (g, m) in grads.iter_mut().zip(&self.masks) {
            if let Some(m) = m {
                zero_masked(g.data_mut(), m.data());
            }
        }
    }

    /// `(kept, total)` entry counts over masked tensors.
    pub fn kept(&self) -> (usize, usize) {
        self.iter().fold((0, 0), |(k, t), (_, m)| {
            (k + m.count_nonzero(), t + m.len())
        })
    }

    /// True when no masked-out entry of `params` is nonzero.
    pub fn holds_for(&self, params: &ModelParams) -> bool {
        self.iter().all(|(i, m)| {
            params.tensors[i]
                .data()
                .iter()
                .zip(m.data())
                .all(|(&w, &k)| k != 0.0 || w == 0.0)
        })
    }
}

fn zero_masked(values: &mut [f64], mask: &[f64]) {
    for (v, &m) in values.iter_mut().zip(mask) {
        if m == 0.0 {
            *v = 0.0;
        }
    }
}
