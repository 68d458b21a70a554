//! Exhaustive ground truth for small instances.
//!
//! Everything here trades scale for certainty: trees are enumerated or
//! optimized exactly over bitmask subsets, and predicates are checked by
//! literal quantification. The fast implementations elsewhere in the crate
//! are validated against this module.

use rand::Rng;
use thiserror::Error;

use crate::lp::LayeredSolution;
use crate::matrix::{SimilarityMatrix, Ultrametric, VALUE_TOL};
use crate::nontrivial::NontrivialViolation;
use crate::scaler::CostScaler;
use crate::tree::{HierTree, Nested};

#[derive(Debug, Error, PartialEq)]
pub enum OracleError {
    #[error("instance has {n} points, oracle capped at {cap}")]
    AboveCap { n: usize, cap: usize },
}

/// All hierarchies with leaf set `0..n`, each canonical shape exactly once.
///
/// Children of every node are ordered by smallest descendant leaf, so the
/// emitted [`Nested`] forms are already canonical.
pub struct TreeEnumeration {
    pub n: usize,
}

impl TreeEnumeration {
    pub fn new(n: usize) -> Self {
        TreeEnumeration { n }
    }

    /// Number of hierarchies on `n` labeled leaves.
    ///
    /// With `T(1) = 1` and `A(0) = 1`, the counts satisfy
    /// `T(n) = Σ_{k<n} C(n−1, k−1) · T(k) · A(n−k)` and
    /// `A(n) = 2 T(n)` for `n ≥ 2`, where `A` counts forests assembled from
    /// partitions into one or more blocks.
    pub fn count(&self) -> u128 {
        if self.n == 0 {
            return 0;
        }
        let n = self.n;
        let mut binom = vec![vec![0u128; n + 1]; n + 1];
        for i in 0..=n {
            binom[i][0] = 1;
            for j in 1..=i {
                binom[i][j] = binom[i - 1][j - 1] + if j <= i - 1 { binom[i - 1][j] } else { 0 };
            }
        }
        let mut t = vec![0u128; n + 1];
        let mut a = vec![0u128; n + 1];
        a[0] = 1;
        t[1] = 1;
        if n >= 1 {
            a[1] = 1;
        }
        for m in 2..=n {
            let mut sum = 0u128;
            for k in 1..m {
                sum += binom[m - 1][k - 1] * t[k] * a[m - k];
            }
            t[m] = sum;
            a[m] = 2 * sum;
        }
        t[n]
    }

    /// Materializes every tree. Exponential; intended for `n <= 7`.
    pub fn trees(&self) -> Vec<HierTree> {
        let points: Vec<usize> = (0..self.n).collect();
        trees_on(&points)
            .into_iter()
            .map(|nested| HierTree::from_nested(&nested).expect("enumerated tree is valid"))
            .collect()
    }
}

fn trees_on(points: &[usize]) -> Vec<Nested> {
    if points.len() == 1 {
        return vec![Nested::Leaf { leaf: points[0] }];
    }
    let mut out = Vec::new();
    for_each_partition(points, &mut |blocks| {
        let block_trees: Vec<Vec<Nested>> = blocks.iter().map(|b| trees_on(b)).collect();
        let mut children = Vec::with_capacity(blocks.len());
        cartesian(&block_trees, &mut children, &mut out);
    });
    out
}

fn cartesian(choices: &[Vec<Nested>], partial: &mut Vec<Nested>, out: &mut Vec<Nested>) {
    if partial.len() == choices.len() {
        out.push(Nested::Internal {
            children: partial.clone(),
        });
        return;
    }
    for t in &choices[partial.len()] {
        partial.push(t.clone());
        cartesian(choices, partial, out);
        partial.pop();
    }
}

/// Enumerates set partitions of `points` into at least two blocks, blocks
/// ordered by smallest member.
fn for_each_partition(points: &[usize], visit: &mut impl FnMut(&[Vec<usize>])) {
    fn recur(points: &[usize], ix: usize, blocks: &mut Vec<Vec<usize>>, visit: &mut impl FnMut(&[Vec<usize>])) {
        if ix == points.len() {
            if blocks.len() >= 2 {
                visit(blocks);
            }
            return;
        }
        for b in 0..blocks.len() {
            blocks[b].push(points[ix]);
            recur(points, ix + 1, blocks, visit);
            blocks[b].pop();
        }
        blocks.push(vec![points[ix]]);
        recur(points, ix + 1, blocks, visit);
        blocks.pop();
    }
    let mut blocks = vec![vec![points[0]]];
    recur(points, 1, &mut blocks, visit);
}

/// Minimum of `tree_cost_f` over every hierarchy, by dynamic programming
/// over bitmask subsets.
///
/// The cost decomposes over internal nodes as `f(|S|)` times the similarity
/// mass split at `S`, so the optimum over subsets satisfies a partition
/// recurrence. Ties resolve to the first minimizer in a fixed submask
/// enumeration order, making the returned tree deterministic.
pub fn exact_optimum(
    kappa: &SimilarityMatrix,
    f: &CostScaler,
    n_cap: usize,
) -> Result<(HierTree, f64), OracleError> {
    let n = kappa.n();
    if n > n_cap {
        return Err(OracleError::AboveCap { n, cap: n_cap });
    }
    let full = (1usize << n) - 1;

    // ksum[s] = total similarity inside subset s
    let mut ksum = vec![0.0f64; full + 1];
    for s in 1..=full {
        let low = s.trailing_zeros() as usize;
        let rest = s & !(1 << low);
        let mut extra = 0.0;
        let mut m = rest;
        while m != 0 {
            let j = m.trailing_zeros() as usize;
            extra += kappa.get(low, j);
            m &= m - 1;
        }
        ksum[s] = ksum[rest] + extra;
    }

    let mut best = vec![0.0f64; full + 1];
    let mut partition_of: Vec<Vec<usize>> = vec![Vec::new(); full + 1];
    let mut masks_by_size: Vec<Vec<usize>> = vec![Vec::new(); n + 1];
    for s in 1..=full {
        masks_by_size[s.count_ones() as usize].push(s);
    }

    let mut h = vec![0.0f64; full + 1];
    let mut h_choice = vec![0usize; full + 1];
    for p in 2..=n {
        let fp = f.eval(p);
        // h[s] = cheapest way to split s into blocks, each a subtree priced
        // against the parent size p
        for size in 1..p {
            for &s in &masks_by_size[size] {
                let low = 1usize << s.trailing_zeros();
                let mut best_h = f64::INFINITY;
                let mut best_b = 0usize;
                // submasks of s containing the lowest bit
                let rest = s & !low;
                let mut sub = rest;
                loop {
                    let block = sub | low;
                    let cand = best[block] - fp * ksum[block] + h[s & !block];
                    if cand < best_h {
                        best_h = cand;
                        best_b = block;
                    }
                    if sub == 0 {
                        break;
                    }
                    sub = (sub - 1) & rest;
                }
                h[s] = best_h;
                h_choice[s] = best_b;
            }
        }
        for &s in &masks_by_size[p] {
            let low = 1usize << s.trailing_zeros();
            let rest = s & !low;
            let mut best_val = f64::INFINITY;
            let mut best_first = 0usize;
            // first block contains the lowest point and is a proper subset
            let mut sub = (rest - 1) & rest;
            loop {
                let block = sub | low;
                let cand = best[block] - fp * ksum[block] + h[s & !block];
                if cand < best_val {
                    best_val = cand;
                    best_first = block;
                }
                if sub == 0 {
                    break;
                }
                sub = (sub - 1) & rest;
            }
            best[s] = fp * ksum[s] + best_val;
            let mut blocks = vec![best_first];
            let mut remainder = s & !best_first;
            while remainder != 0 {
                let b = h_choice[remainder];
                blocks.push(b);
                remainder &= !b;
            }
            partition_of[s] = blocks;
        }
    }

    let mut nodes = Vec::new();
    let root = reconstruct(full, &partition_of, &mut nodes);
    let tree = HierTree::new(nodes, root).expect("reconstructed tree is valid");
    Ok((tree, best[full]))
}

fn reconstruct(
    mask: usize,
    partition_of: &[Vec<usize>],
    nodes: &mut Vec<crate::tree::TreeNode>,
) -> usize {
    if mask.count_ones() == 1 {
        nodes.push(crate::tree::TreeNode {
            children: Vec::new(),
            leaf: Some(mask.trailing_zeros() as usize),
        });
        return nodes.len() - 1;
    }
    let children = partition_of[mask]
        .iter()
        .map(|&b| reconstruct(b, partition_of, nodes))
        .collect();
    nodes.push(crate::tree::TreeNode {
        children,
        leaf: None,
    });
    nodes.len() - 1
}

/// Literal subset quantification of both non-triviality conditions.
pub fn brute_nontrivial(d: &Ultrametric, n_cap: usize) -> Result<Result<(), NontrivialViolation>, OracleError> {
    let n = d.n();
    if n > n_cap {
        return Err(OracleError::AboveCap { n, cap: n_cap });
    }
    for mask in 1usize..(1 << n) {
        let members: Vec<usize> = (0..n).filter(|&i| mask & (1 << i) != 0).collect();
        if members.len() < 2 {
            continue;
        }
        let mut max = 0.0f64;
        for (a, &i) in members.iter().enumerate() {
            for &j in members.iter().skip(a + 1) {
                max = max.max(d.get(i, j));
            }
        }
        if max < (members.len() - 1) as f64 - VALUE_TOL {
            return Ok(Err(NontrivialViolation::Spreading {
                class: members,
                threshold: max,
            }));
        }
    }
    for t in d.distinct_values() {
        for class in d.classes_at(t) {
            if class.len() < 2 {
                continue;
            }
            let mut diameter = 0.0f64;
            for (a, &i) in class.iter().enumerate() {
                for &j in class.iter().skip(a + 1) {
                    diameter = diameter.max(d.get(i, j));
                }
            }
            if diameter > (class.len() - 1) as f64 + VALUE_TOL {
                return Ok(Err(NontrivialViolation::Hereditary {
                    class,
                    threshold: t,
                    diameter,
                }));
            }
        }
    }
    Ok(Ok(()))
}

#[derive(Clone, Debug, PartialEq)]
pub struct SpreadingViolation {
    pub center: usize,
    /// Members of the violating set, including the center.
    pub set: Vec<usize>,
    /// How far below `|S| − t` the sum falls.
    pub deficit: f64,
}

/// Every violated spreading constraint at layer `t`, by enumerating all
/// sets containing each center.
pub fn brute_spreading(
    sol: &LayeredSolution,
    t: usize,
    tol: f64,
    n_cap: usize,
) -> Result<Vec<SpreadingViolation>, OracleError> {
    let n = sol.n();
    if n > n_cap {
        return Err(OracleError::AboveCap { n, cap: n_cap });
    }
    let mut out = Vec::new();
    for center in 0..n {
        for mask in 0usize..(1 << n) {
            if mask & (1 << center) == 0 {
                continue;
            }
            let members: Vec<usize> = (0..n).filter(|&i| mask & (1 << i) != 0).collect();
            if members.len() <= t {
                continue;
            }
            let sum: f64 = members.iter().map(|&j| sol.get(t, center, j)).sum();
            let required = (members.len() - t) as f64;
            if sum < required - tol {
                out.push(SpreadingViolation {
                    center,
                    set: members,
                    deficit: required - sum,
                });
            }
        }
    }
    Ok(out)
}

/// Uniform-ish random hierarchy on `n` leaves: shuffle the points and
/// recursively split into a random number of blocks.
pub fn random_tree(n: usize, rng: &mut impl Rng) -> HierTree {
    let mut points: Vec<usize> = (0..n).collect();
    shuffle(&mut points, rng);
    fn grow(points: &[usize], rng: &mut impl Rng) -> Nested {
        if points.len() == 1 {
            return Nested::Leaf { leaf: points[0] };
        }
        let m = rng.gen_range(2..=points.len());
        let mut blocks: Vec<Vec<usize>> = vec![Vec::new(); m];
        blocks[0].push(points[0]);
        for (ix, &p) in points.iter().enumerate().skip(1) {
            // keep the first m points spread out so no block is empty
            let b = if ix < m { ix } else { rng.gen_range(0..m) };
            blocks[b].push(p);
        }
        Nested::Internal {
            children: blocks.iter().map(|b| grow(b, rng)).collect(),
        }
    }
    HierTree::from_nested(&grow(&points, rng)).expect("random tree is valid")
}

/// Random valid ultrametric, non-trivial with probability roughly 1/2.
///
/// Starts from a tree-induced ultrametric (always non-trivial) and sometimes
/// relabels its values by a random strictly increasing map, which preserves
/// the strong triangle inequality but usually breaks non-triviality.
pub fn random_ultrametric(n: usize, rng: &mut impl Rng) -> Ultrametric {
    let base = crate::tree::induced_ultrametric(&random_tree(n, rng));
    if rng.gen_bool(0.5) {
        return base;
    }
    let mut levels = vec![0.0f64; n];
    let mut acc = 0.0;
    for l in levels.iter_mut().skip(1) {
        acc += 0.25 + 2.0 * rng.gen::<f64>();
        *l = acc;
    }
    Ultrametric::from_fn(n, |i, j| levels[base.get(i, j) as usize]).expect("monotone relabel")
}

fn shuffle(points: &mut [usize], rng: &mut impl Rng) {
    for i in (1..points.len()).rev() {
        points.swap(i, rng.gen_range(0..=i));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nontrivial::check_nontrivial;
    use crate::tree::{build_tree, induced_ultrametric, tree_cost, tree_cost_f};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::collections::HashSet;

    const COUNTS: [u128; 8] = [1, 1, 4, 26, 236, 2752, 39208, 660032];

    #[test]
    fn counts_match_known_table() {
        for (ix, &expect) in COUNTS.iter().enumerate() {
            assert_eq!(TreeEnumeration::new(ix + 1).count(), expect, "n = {}", ix + 1);
        }
    }

    #[test]
    fn enumeration_matches_count_and_is_duplicate_free() {
        for n in 1..=6 {
            let trees = TreeEnumeration::new(n).trees();
            assert_eq!(trees.len() as u128, TreeEnumeration::new(n).count());
            let canon: HashSet<Nested> = trees.iter().map(|t| t.canonical()).collect();
            assert_eq!(canon.len(), trees.len(), "duplicates at n = {n}");
        }
    }

    #[test]
    fn exact_optimum_on_uniform_triangle() {
        let ones = SimilarityMatrix::constant(3, 1.0);
        let (tree, cost) = exact_optimum(&ones, &CostScaler::Linear, 8).unwrap();
        assert_eq!(cost, 8.0);
        assert_eq!(tree_cost(&tree, &ones).unwrap(), 8.0);
    }

    #[test]
    fn exact_optimum_pairs_up_two_cliques() {
        let kappa = SimilarityMatrix::from_fn(4, |i, j| {
            if (i, j) == (0, 1) || (i, j) == (2, 3) {
                1.0
            } else {
                0.0
            }
        })
        .unwrap();
        let (tree, cost) = exact_optimum(&kappa, &CostScaler::Linear, 8).unwrap();
        assert_eq!(cost, 4.0);
        let expect = HierTree::from_nested(&Nested::Internal {
            children: vec![
                Nested::Internal {
                    children: vec![Nested::Leaf { leaf: 0 }, Nested::Leaf { leaf: 1 }],
                },
                Nested::Internal {
                    children: vec![Nested::Leaf { leaf: 2 }, Nested::Leaf { leaf: 3 }],
                },
            ],
        })
        .unwrap();
        assert!(tree.same_hierarchy(&expect));
    }

    #[test]
    fn exact_optimum_zero_similarity_costs_nothing() {
        let zeros = SimilarityMatrix::constant(4, 0.0);
        let (_, cost) = exact_optimum(&zeros, &CostScaler::Linear, 8).unwrap();
        assert_eq!(cost, 0.0);
    }

    #[test]
    fn exact_optimum_agrees_with_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for n in 2..=5 {
            for f in [CostScaler::Linear, CostScaler::Quadratic] {
                let kappa = SimilarityMatrix::from_fn(n, |_, _| rng.gen::<f64>()).unwrap();
                let (_, dp_cost) = exact_optimum(&kappa, &f, 8).unwrap();
                let enum_cost = TreeEnumeration::new(n)
                    .trees()
                    .iter()
                    .map(|t| tree_cost_f(t, &kappa, &f).unwrap())
                    .fold(f64::INFINITY, f64::min);
                assert!((dp_cost - enum_cost).abs() < 1e-9, "n={n} f={f}");
            }
        }
    }

    #[test]
    fn exact_optimum_respects_cap() {
        let ones = SimilarityMatrix::constant(9, 1.0);
        assert_eq!(
            exact_optimum(&ones, &CostScaler::Linear, 8).unwrap_err(),
            OracleError::AboveCap { n: 9, cap: 8 }
        );
    }

    #[test]
    fn brute_nontrivial_examples() {
        let flat = Ultrametric::from_fn(3, |_, _| 1.0).unwrap();
        assert!(matches!(
            brute_nontrivial(&flat, 10).unwrap(),
            Err(NontrivialViolation::Spreading { .. })
        ));
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let d = induced_ultrametric(&random_tree(6, &mut rng));
            assert_eq!(brute_nontrivial(&d, 10).unwrap(), Ok(()));
        }
    }

    #[test]
    fn brute_agrees_with_fast_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..150 {
            let n = rng.gen_range(2..=8);
            let d = random_ultrametric(n, &mut rng);
            let fast = check_nontrivial(&d).is_ok();
            let brute = brute_nontrivial(&d, 10).unwrap().is_ok();
            assert_eq!(fast, brute, "disagreement on {d:?}");
        }
    }

    #[test]
    fn random_trees_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let n = rng.gen_range(2..=7);
            let t = random_tree(n, &mut rng);
            let d = induced_ultrametric(&t);
            let rebuilt = build_tree(&d).unwrap();
            assert_eq!(induced_ultrametric(&rebuilt), d);
            assert!(rebuilt.same_hierarchy(&t));
        }
    }
}
