mod common;

use proptest::prelude::*;

use common::{exhaustive_min_distance, small_weight, squared_distance, unit_of};
use robustprune::numerics::Tensor;
use robustprune::sparsity::{membership, nonzero_units, project, unit_count, Scheme};

const MAX_UNITS: usize = 10;

#[test]
fn projection_attains_exhaustive_minimum() {
    for scheme in Scheme::ALL {
        for seed in 0..300 {
            let v = small_weight(seed, scheme, MAX_UNITS);
            let units = unit_count(v.shape(), scheme);
            for budget in 1..=units {
                let p = project(&v, scheme, budget).unwrap();
                let got = squared_distance(&v, &p);
                let best = exhaustive_min_distance(&v, scheme, budget);
                assert!(
                    (got - best).abs() <= 1e-12,
                    "{scheme} seed {seed} budget {budget}: {got} vs {best}"
                );
                assert!(membership(&p, scheme, budget));
            }
        }
    }
}

#[test]
fn kept_entries_are_copied_and_dropped_units_are_zero() {
    for scheme in Scheme::ALL {
        for seed in 0..100 {
            let v = small_weight(seed, scheme, MAX_UNITS);
            let units = unit_of(v.shape(), scheme);
            let p = project(&v, scheme, 1).unwrap();
            let kept: Vec<usize> = units
                .iter()
                .zip(p.data())
                .filter(|(_, &x)| x != 0.0)
                .map(|(&u, _)| u)
                .collect();
            assert!(
                kept.windows(2).all(|w| w[0] == w[1]),
                "more than one unit survives"
            );
            for (i, (&a, &b)) in v.data().iter().zip(p.data()).enumerate() {
                assert!(b == 0.0 || a == b, "entry {i} changed value");
            }
        }
    }
}

#[test]
fn ties_go_to_the_lower_index() {
    let v = Tensor::new(vec![3, 2], vec![1.0, 0.0, 0.0, 1.0, 1.0, 0.0]).unwrap();
    let p = project(&v, Scheme::Filter, 1).unwrap();
    assert_eq!(p.data(), &[1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
    let c = project(&v, Scheme::Column, 1).unwrap();
    assert_eq!(c.data(), &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
}

fn weights() -> impl Strategy<Value = Tensor> {
    (1usize..5, 1usize..4, 1usize..3, 1usize..3).prop_flat_map(|(n, c, h, w)| {
        prop::collection::vec(-3.0f64..3.0, n * c * h * w)
            .prop_map(move |d| Tensor::new(vec![n, c, h, w], d).unwrap())
    })
}

fn scheme() -> impl Strategy<Value = Scheme> {
    prop_oneof![
        Just(Scheme::Filter),
        Just(Scheme::Column),
        Just(Scheme::Irregular)
    ]
}

proptest! {
    #[test]
    fn idempotent_bit_exact(v in weights(), s in scheme(), frac in 0.0f64..1.0) {
        let units = unit_count(v.shape(), s);
        let budget = 1 + (frac * units as f64) as usize % units;
        let once = project(&v, s, budget).unwrap();
        let twice = project(&once, s, budget).unwrap();
        prop_assert_eq!(once.data(), twice.data());
    }

    #[test]
    fn output_is_feasible_and_never_farther_than_zero(v in weights(), s in scheme(), frac in 0.0f64..1.0) {
        let units = unit_count(v.shape(), s);
        let budget = 1 + (frac * units as f64) as usize % units;
        let p = project(&v, s, budget).unwrap();
        prop_assert!(nonzero_units(&p, s) <= budget);
        let zero = Tensor::zeros(v.shape());
        prop_assert!(squared_distance(&v, &p) <= squared_distance(&v, &zero));
    }

    #[test]
    fn full_budget_is_identity(v in weights(), s in scheme()) {
        let p = project(&v, s, unit_count(v.shape(), s)).unwrap();
        prop_assert_eq!(p.data(), v.data());
    }
}
