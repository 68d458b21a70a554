//! Upper-triangle storage for symmetric pairwise data.

use serde::{Deserialize, Serialize};

/// Dense storage of one value per unordered pair of `0..n`.
///
/// Lookups are symmetric and the diagonal is implicitly zero.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairTable {
    n: usize,
    vals: Vec<f64>,
}

#[inline]
pub(crate) fn pair_index(n: usize, i: usize, j: usize) -> usize {
    debug_assert!(i != j && i < n && j < n);
    let (a, b) = if i < j { (i, j) } else { (j, i) };
    a * (2 * n - a - 1) / 2 + (b - a - 1)
}

impl PairTable {
    pub fn filled(n: usize, value: f64) -> Self {
        PairTable {
            n,
            vals: vec![value; n * (n - 1) / 2],
        }
    }

    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut vals = Vec::with_capacity(n * (n - 1) / 2);
        for i in 0..n {
            for j in i + 1..n {
                vals.push(f(i, j));
            }
        }
        PairTable { n, vals }
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        if i == j {
            return 0.0;
        }
        self.vals[pair_index(self.n, i, j)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        let n = self.n;
        self.vals[pair_index(n, i, j)] = v;
    }

    /// Iterates `(i, j, value)` over pairs with `i < j`.
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        let n = self.n;
        (0..n)
            .flat_map(move |i| (i + 1..n).map(move |j| (i, j)))
            .zip(self.vals.iter())
            .map(|((i, j), &v)| (i, j, v))
    }

    pub fn values(&self) -> &[f64] {
        &self.vals
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.vals
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn indexing_is_symmetric_and_dense() {
        let n = 5;
        let mut seen = vec![false; n * (n - 1) / 2];
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    continue;
                }
                assert_eq!(pair_index(n, i, j), pair_index(n, j, i));
                seen[pair_index(n, i, j)] = true;
            }
        }
        assert!(seen.iter().all(|&s| s));
    }

    #[test]
    fn iter_matches_get() {
        let t = PairTable::from_fn(4, |i, j| (10 * i + j) as f64);
        for (i, j, v) in t.iter() {
            assert_eq!(v, t.get(i, j));
            assert_eq!(v, t.get(j, i));
        }
        assert_eq!(t.get(2, 2), 0.0);
    }
}
