//! Euclidean projections onto the filter, column and irregular sparsity sets.
//!
//! Every weight is viewed as `[N, C, H, W]` (fully connected `[out, in]` as
//! `[out, in, 1, 1]`). A scheme partitions the entries into units:
//!
//! * filter: the `N` slices `v[n, :, :, :]`
//! * column: the `C*H*W` slices `v[:, c, h, w]` shared across filters
//! * irregular: every single entry
//!
//! The nearest point with at most `k` nonzero units keeps the `k` units of
//! largest squared Frobenius norm and zeroes the rest. Ties prefer the lower
//! unit index.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    Filter,
    Column,
    Irregular,
}

impl Scheme {
    pub const ALL: [Scheme; 3] = [Scheme::Filter, Scheme::Column, Scheme::Irregular];

    pub fn as_str(self) -> &'static str {
        match self {
            Scheme::Filter => "filter",
            Scheme::Column => "column",
            Scheme::Irregular => "irregular",
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Scheme::ALL
            .into_iter()
            .find(|x| x.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown pruning scheme `{s}`")))
    }
}

/// `[filters, per-filter size]` of a weight viewed as `[N, C*H*W]`.
fn rows_cols(shape: &[usize]) -> (usize, usize) {
    match shape {
        [] => (1, 1),
        [n] => (*n, 1),
        [n, rest @ ..] => (*n, rest.iter().product()),
    }
}

/// Number of selectable units of a tensor under `scheme`.
pub fn unit_count(shape: &[usize], scheme: Scheme) -> usize {
    let (n, chw) = rows_cols(shape);
    match scheme {
        Scheme::Filter => n,
        Scheme::Column => chw,
        Scheme::Irregular => n * chw,
    }
}

/// Squared Frobenius norm of every unit.
pub fn unit_scores(v: &Tensor, scheme: Scheme) -> Vec<f64> {
    let (n, chw) = rows_cols(v.shape());
    let d = v.data();
    match scheme {
        Scheme::Filter => d
            .chunks_exact(chw)
            .map(|f| f.iter().map(|x| x * x).sum())
            .collect(),
        Scheme::Column => {
            let mut s = vec![0.0; chw];
            for f in d.chunks_exact(chw).take(n) {
                for (acc, x) in s.iter_mut().zip(f) {
                    *acc += x * x;
                }
            }
            s
        }
        Scheme::Irregular => d.iter().map(|x| x * x).collect(),
    }
}

/// Number of units containing at least one nonzero entry.
pub fn nonzero_units(v: &Tensor, scheme: Scheme) -> usize {
    let (n, chw) = rows_cols(v.shape());
    let d = v.data();
    match scheme {
        Scheme::Filter => d
            .chunks_exact(chw)
            .filter(|f| f.iter().any(|&x| x != 0.0))
            .count(),
        Scheme::Column => (0..chw)
            .filter(|&j| (0..n).any(|i| d[i * chw + j] != 0.0))
            .count(),
        Scheme::Irregular => d.iter().filter(|&&x| x != 0.0).count(),
    }
}

/// Indices of the `k` largest scores, larger first, ties to the lower index.
pub fn top_k(scores: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

fn check_budget(v: &Tensor, scheme: Scheme, budget: usize) -> Result<usize> {
    let units = unit_count(v.shape(), scheme);
    if budget == 0 || budget > units {
        return Err(Error::invalid(format!(
            "{scheme} budget {budget} outside [1, {units}] for shape {:?}",
            v.shape()
        )));
    }
    Ok(units)
}

/// 0/1 tensor marking the entries kept by the projection of `v`.
pub fn select_support(v: &Tensor, scheme: Scheme, budget: usize) -> Result<Tensor> {
    check_budget(v, scheme, budget)?;
    let (_, chw) = rows_cols(v.shape());
    let keep = top_k(&unit_scores(v, scheme), budget);
    let mut mask = Tensor::zeros(v.shape());
    let m = mask.data_mut();
    match scheme {
        Scheme::Filter => {
            for n in keep {
                m[n * chw..(n + 1) * chw].fill(1.0);
            }
        }
        Scheme::Column => {
            for j in keep {
                m.iter_mut().skip(j).step_by(chw).for_each(|x| *x = 1.0);
            }
        }
        Scheme::Irregular => {
            for i in keep {
                m[i] = 1.0;
            }
        }
    }
    Ok(mask)
}

/// Euclidean projection of `v` onto `{ x : nonzero units of x <= budget }`.
pub fn project(v: &Tensor, scheme: Scheme, budget: usize) -> Result<Tensor> {
    let mask = select_support(v, scheme, budget)?;
    Tensor::new(
        v.shape().to_vec(),
        v.data()
            .iter()
            .zip(mask.data())
            .map(|(&x, &m)| if m != 0.0 { x } else { 0.0 })
            .collect(),
    )
}

/// Keeps the `alpha` filters of largest squared norm.
pub fn project_filter(v: &Tensor, alpha: usize) -> Result<Tensor> {
    project(v, Scheme::Filter, alpha)
}

/// Keeps the `beta` `(c, h, w)` positions of largest squared norm across filters.
pub fn project_column(v: &Tensor, beta: usize) -> Result<Tensor> {
    project(v, Scheme::Column, beta)
}

/// Keeps the `gamma` entries of largest magnitude.
pub fn project_irregular(v: &Tensor, gamma: usize) -> Result<Tensor> {
    project(v, Scheme::Irregular, gamma)
}

/// Whether `theta` has at most `budget` nonzero units.
pub fn membership(theta: &Tensor, scheme: Scheme, budget: usize) -> bool {
    nonzero_units(theta, scheme) <= budget
}

#[cfg(test)]
mod tests {
    use super::*;

    fn filters(norms: &[f64]) -> Tensor {
        // one-entry filters with the requested squared norm
        Tensor::new(
            vec![norms.len(), 1, 1, 1],
            norms.iter().map(|n| n.sqrt()).collect(),
        )
        .unwrap()
    }

    #[test]
    fn filter_keeps_largest() {
        let v = filters(&[9.0, 1.0, 4.0]);
        let p = project_filter(&v, 2).unwrap();
        assert_eq!(p.data(), &[3.0, 0.0, 2.0]);
    }

    #[test]
    fn filter_tie_prefers_lower_index() {
        let v = filters(&[5.0, 5.0, 3.0]);
        let p = project_filter(&v, 1).unwrap();
        assert_eq!(p.data()[0], 5f64.sqrt());
        assert_eq!(&p.data()[1..], &[0.0, 0.0]);
    }

    #[test]
    fn full_budget_is_identity() {
        let v = Tensor::from_fn(&[3, 2, 2, 2], |i| (i as f64).sin());
        assert_eq!(project_filter(&v, 3).unwrap(), v);
        assert_eq!(project_column(&v, 8).unwrap(), v);
        assert_eq!(project_irregular(&v, 24).unwrap(), v);
    }

    #[test]
    fn column_keeps_position_in_all_filters() {
        // column norms: position 0 -> 4 + 4 = 8, position 1 -> 1 + 1 = 2
        let v = Tensor::new(vec![2, 2, 1, 1], vec![2.0, 1.0, -2.0, 1.0]).unwrap();
        let p = project_column(&v, 1).unwrap();
        assert_eq!(p.data(), &[2.0, 0.0, -2.0, 0.0]);
    }

    #[test]
    fn zero_tensor_is_fixed_point() {
        let v = Tensor::zeros(&[2, 3, 1, 1]);
        assert_eq!(project_column(&v, 2).unwrap(), v);
    }

    #[test]
    fn irregular_examples() {
        let v = Tensor::vector(vec![0.5, -2.0, 0.1]);
        assert_eq!(project_irregular(&v, 1).unwrap().data(), &[0.0, -2.0, 0.0]);
        let t = Tensor::vector(vec![1.0, -1.0]);
        assert_eq!(project_irregular(&t, 1).unwrap().data(), &[1.0, 0.0]);
    }

    #[test]
    fn budget_out_of_range() {
        let v = Tensor::zeros(&[3, 2, 1, 1]);
        assert!(project_filter(&v, 0).is_err());
        assert!(project_filter(&v, 4).is_err());
        assert!(project_column(&v, 3).is_err());
        assert!(project_irregular(&v, 7).is_err());
    }

    #[test]
    fn membership_examples() {
        let zero = Tensor::zeros(&[3, 2, 2, 2]);
        assert!(membership(&zero, Scheme::Filter, 1));
        let dense = Tensor::full(&[3, 2, 2, 2], 1.0);
        assert!(membership(&dense, Scheme::Filter, 3));
        assert!(!membership(&dense, Scheme::Filter, 2));
        assert!(membership(&dense, Scheme::Column, 8));
        assert!(!membership(&dense, Scheme::Irregular, 23));
    }

    #[test]
    fn fc_weights_are_viewed_as_out_by_in() {
        let v = Tensor::new(vec![2, 3], vec![1.0, 0.0, 0.0, 0.0, 5.0, 0.0]).unwrap();
        assert_eq!(unit_count(v.shape(), Scheme::Filter), 2);
        assert_eq!(unit_count(v.shape(), Scheme::Column), 3);
        assert_eq!(nonzero_units(&v, Scheme::Column), 2);
        assert_eq!(
            project_filter(&v, 1).unwrap().data(),
            &[0.0, 0.0, 0.0, 0.0, 5.0, 0.0]
        );
    }
}
