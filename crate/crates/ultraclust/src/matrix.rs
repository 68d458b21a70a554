//! Similarity matrices and ultrametrics.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pairs::PairTable;

/// Comparison tolerance for forming equivalence classes and snapping
/// integer-valued distances.
pub const VALUE_TOL: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum MatrixError {
    #[error("need at least 2 points, got {0}")]
    TooFewPoints(usize),
    #[error("similarity({i},{j}) = {value} is negative or not finite")]
    BadSimilarity { i: usize, j: usize, value: f64 },
    #[error("distance({i},{j}) = {value} must be positive and finite")]
    BadDistance { i: usize, j: usize, value: f64 },
    #[error(
        "strong triangle inequality fails: d({i},{k}) = {dik} > max(d({i},{j}), d({j},{k})) = {max}"
    )]
    StrongTriangle {
        i: usize,
        j: usize,
        k: usize,
        dik: f64,
        max: f64,
    },
}

/// Symmetric nonnegative pairwise similarities over `n >= 2` points.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimilarityMatrix {
    table: PairTable,
}

impl SimilarityMatrix {
    pub fn new(table: PairTable) -> Result<Self, MatrixError> {
        if table.n() < 2 {
            return Err(MatrixError::TooFewPoints(table.n()));
        }
        for (i, j, v) in table.iter() {
            if !(v.is_finite() && v >= 0.0) {
                return Err(MatrixError::BadSimilarity { i, j, value: v });
            }
        }
        Ok(SimilarityMatrix { table })
    }

    pub fn from_fn(n: usize, f: impl FnMut(usize, usize) -> f64) -> Result<Self, MatrixError> {
        Self::new(PairTable::from_fn(n, f))
    }

    /// Constant similarity on every pair; handy in tests.
    pub fn constant(n: usize, value: f64) -> Self {
        Self::new(PairTable::filled(n, value)).expect("constant similarity")
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.table.n()
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.table.get(i, j)
    }

    /// Sum of all pairwise similarities.
    pub fn total(&self) -> f64 {
        self.table.values().iter().sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.table.iter()
    }

    pub fn table(&self) -> &PairTable {
        &self.table
    }
}

/// A distance matrix satisfying the strong triangle inequality
/// `d(i,j) <= max(d(i,k), d(k,j))`.
///
/// Off-diagonal values are strictly positive; the diagonal is zero.
/// Values within [`VALUE_TOL`] of an integer are snapped on construction so
/// that integer-valued ultrametrics compare exactly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ultrametric {
    table: PairTable,
}

impl Ultrametric {
    pub fn new(mut table: PairTable) -> Result<Self, MatrixError> {
        if table.n() < 2 {
            return Err(MatrixError::TooFewPoints(table.n()));
        }
        for v in table.values_mut() {
            let r = v.round();
            if (*v - r).abs() <= VALUE_TOL {
                *v = r;
            }
        }
        for (i, j, v) in table.iter() {
            if !(v.is_finite() && v > 0.0) {
                return Err(MatrixError::BadDistance { i, j, value: v });
            }
        }
        let n = table.n();
        for i in 0..n {
            for j in i + 1..n {
                let dij = table.get(i, j);
                for k in 0..n {
                    if k == i || k == j {
                        continue;
                    }
                    let max = table.get(i, k).max(table.get(k, j));
                    if dij > max + VALUE_TOL {
                        return Err(MatrixError::StrongTriangle {
                            i,
                            j: k,
                            k: j,
                            dik: dij,
                            max,
                        });
                    }
                }
            }
        }
        Ok(Ultrametric { table })
    }

    pub fn from_fn(n: usize, f: impl FnMut(usize, usize) -> f64) -> Result<Self, MatrixError> {
        Self::new(PairTable::from_fn(n, f))
    }

    /// Skips validation. Callers must guarantee the invariants hold.
    pub(crate) fn from_table_unchecked(table: PairTable) -> Self {
        Ultrametric { table }
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.table.n()
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.table.get(i, j)
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.table.iter()
    }

    pub fn table(&self) -> &PairTable {
        &self.table
    }

    /// Distinct off-diagonal values in increasing order, merging values that
    /// agree within [`VALUE_TOL`].
    pub fn distinct_values(&self) -> Vec<f64> {
        let mut vals: Vec<f64> = self.table.values().to_vec();
        vals.sort_by(f64::total_cmp);
        vals.dedup_by(|a, b| (*a - *b).abs() <= VALUE_TOL);
        vals
    }

    /// Equivalence classes of the relation `d(i,j) <= threshold`.
    ///
    /// The strong triangle inequality makes the relation transitive, so the
    /// classes are well defined. Each class lists its members in increasing
    /// order; classes are ordered by smallest member.
    pub fn classes_at(&self, threshold: f64) -> Vec<Vec<usize>> {
        let n = self.n();
        let mut class_of = vec![usize::MAX; n];
        let mut classes: Vec<Vec<usize>> = Vec::new();
        for i in 0..n {
            if class_of[i] != usize::MAX {
                continue;
            }
            let id = classes.len();
            let mut members = vec![i];
            class_of[i] = id;
            for j in i + 1..n {
                if class_of[j] == usize::MAX && self.get(i, j) <= threshold + VALUE_TOL {
                    class_of[j] = id;
                    members.push(j);
                }
            }
            classes.push(members);
        }
        classes
    }

    /// ⟨κ, d⟩ = Σ_{i<j} κ(i,j) · d(i,j).
    pub fn inner_product(&self, kappa: &SimilarityMatrix) -> f64 {
        assert_eq!(self.n(), kappa.n(), "point count mismatch");
        self.iter().map(|(i, j, v)| v * kappa.get(i, j)).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_negative_similarity() {
        let err = SimilarityMatrix::from_fn(3, |i, _| if i == 0 { -1.0 } else { 1.0 });
        assert!(matches!(err, Err(MatrixError::BadSimilarity { .. })));
    }

    #[test]
    fn rejects_single_point() {
        assert_eq!(
            SimilarityMatrix::new(PairTable::filled(1, 0.0)),
            Err(MatrixError::TooFewPoints(1))
        );
    }

    #[test]
    fn rejects_strong_triangle_violation() {
        // d(0,2) = 3 > max(d(0,1), d(1,2)) = 1
        let err = Ultrametric::from_fn(3, |i, j| if (i, j) == (0, 2) { 3.0 } else { 1.0 });
        assert!(matches!(err, Err(MatrixError::StrongTriangle { .. })));
    }

    #[test]
    fn snaps_near_integers() {
        let d = Ultrametric::from_fn(3, |i, j| if (i, j) == (0, 1) { 1.0 + 1e-12 } else { 2.0 })
            .unwrap();
        assert_eq!(d.get(0, 1), 1.0);
    }

    #[test]
    fn classes_partition_points() {
        // two blocks {0,1} and {2,3} at threshold 1
        let d = Ultrametric::from_fn(4, |i, j| {
            if (i, j) == (0, 1) || (i, j) == (2, 3) {
                1.0
            } else {
                3.0
            }
        })
        .unwrap();
        assert_eq!(d.classes_at(1.0), vec![vec![0, 1], vec![2, 3]]);
        assert_eq!(d.classes_at(3.0), vec![vec![0, 1, 2, 3]]);
        assert_eq!(d.classes_at(0.5).len(), 4);
    }
}
