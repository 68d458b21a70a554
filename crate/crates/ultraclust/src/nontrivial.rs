//! The predicate singling out ultrametrics that come from hierarchies.
//!
//! An ultrametric is *non-trivial* when
//! 1. every non-empty `S ⊆ V` contains a pair at distance ≥ `|S| − 1`, and
//! 2. every equivalence class `C` of `d ≤ t` has diameter ≤ `|C| − 1`.
//!
//! Condition 1 quantifies over all subsets, but under the strong triangle
//! inequality `d ≤ v` is an equivalence relation, so a set with pairwise
//! distances ≤ v sits inside one class of that relation. Checking, at every
//! distinct value v, that each class has at most `v + 1` members is therefore
//! a complete test. The brute-force subset check lives in
//! [`oracle::brute_nontrivial`](crate::oracle::brute_nontrivial) and the two
//! are cross-validated there.

use thiserror::Error;

use crate::matrix::{Ultrametric, VALUE_TOL};

/// Why an ultrametric is not induced by any hierarchy, with a witness.
#[derive(Clone, Debug, Error, PartialEq)]
pub enum NontrivialViolation {
    #[error(
        "set {class:?} has all pairwise distances <= {threshold} but needs a pair at distance >= {}",
        class.len() - 1
    )]
    Spreading { class: Vec<usize>, threshold: f64 },
    #[error(
        "class {class:?} under d <= {threshold} has diameter {diameter} > {}",
        class.len() - 1
    )]
    Hereditary {
        class: Vec<usize>,
        threshold: f64,
        diameter: f64,
    },
    #[error("d({i},{j}) = {value} is outside the integer range 0..={max}")]
    Range {
        i: usize,
        j: usize,
        value: f64,
        max: usize,
    },
}

/// Checks both non-triviality conditions and the integer range `0..=n−1`.
pub fn check_nontrivial(d: &Ultrametric) -> Result<(), NontrivialViolation> {
    let n = d.n();
    for v in d.distinct_values() {
        for class in d.classes_at(v) {
            if class.len() < 2 {
                continue;
            }
            let limit = (class.len() - 1) as f64;
            if limit > v + VALUE_TOL {
                return Err(NontrivialViolation::Spreading {
                    class,
                    threshold: v,
                });
            }
            let mut diameter = 0.0f64;
            for (a, &i) in class.iter().enumerate() {
                for &j in class.iter().skip(a + 1) {
                    diameter = diameter.max(d.get(i, j));
                }
            }
            if diameter > limit + VALUE_TOL {
                return Err(NontrivialViolation::Hereditary {
                    class,
                    threshold: v,
                    diameter,
                });
            }
        }
    }
    for (i, j, value) in d.iter() {
        let r = value.round();
        if (value - r).abs() > VALUE_TOL || r < 1.0 || r > (n - 1) as f64 {
            return Err(NontrivialViolation::Range {
                i,
                j,
                value,
                max: n - 1,
            });
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tree::{build_tree, induced_ultrametric, HierTree};

    #[test]
    fn all_ones_violates_spreading() {
        let d = Ultrametric::from_fn(3, |_, _| 1.0).unwrap();
        match check_nontrivial(&d) {
            Err(NontrivialViolation::Spreading { class, .. }) => {
                assert_eq!(class, vec![0, 1, 2]);
            }
            other => panic!("expected spreading violation, got {other:?}"),
        }
    }

    #[test]
    fn all_n_violates_hereditary() {
        let n = 4;
        let d = Ultrametric::from_fn(n, |_, _| n as f64).unwrap();
        match check_nontrivial(&d) {
            Err(NontrivialViolation::Hereditary { class, diameter, .. }) => {
                assert_eq!(class.len(), n);
                assert_eq!(diameter, n as f64);
            }
            other => panic!("expected hereditary violation, got {other:?}"),
        }
    }

    #[test]
    fn tree_induced_is_nontrivial() {
        let d = induced_ultrametric(&HierTree::star(5));
        assert_eq!(check_nontrivial(&d), Ok(()));
    }

    #[test]
    fn restriction_to_a_class_stays_nontrivial() {
        let d = Ultrametric::from_fn(4, |i, j| {
            if (i, j) == (0, 1) || (i, j) == (2, 3) {
                1.0
            } else {
                3.0
            }
        })
        .unwrap();
        assert_eq!(check_nontrivial(&d), Ok(()));
        for class in d.classes_at(1.0) {
            if class.len() < 2 {
                continue;
            }
            let restricted =
                Ultrametric::from_fn(class.len(), |a, b| d.get(class[a], class[b])).unwrap();
            assert_eq!(check_nontrivial(&restricted), Ok(()));
        }
    }

    #[test]
    fn doubled_tree_metric_fails() {
        let d0 = induced_ultrametric(&build_tree(&Ultrametric::from_fn(4, |i, j| {
            if (i, j) == (0, 1) {
                1.0
            } else {
                3.0
            }
        })
        .unwrap())
        .unwrap());
        let doubled = Ultrametric::from_fn(4, |i, j| 2.0 * d0.get(i, j)).unwrap();
        assert!(check_nontrivial(&doubled).is_err());
    }
}
