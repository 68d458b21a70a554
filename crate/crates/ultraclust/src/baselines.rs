//! Classical clustering baselines and the evaluation protocol used to
//! compare everything: linkage methods and Ward for hierarchies, k-means for
//! flat clusters, pruning a hierarchy into k clusters, and classification
//! error against a reference labeling.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::matrix::SimilarityMatrix;
use crate::tree::{HierTree, TreeNode};

#[derive(Debug, Error, PartialEq)]
pub enum BaselineError {
    #[error("k = {k} is out of range for {n} points")]
    KOutOfRange { k: usize, n: usize },
    #[error("no pruning of this tree has exactly {k} clusters")]
    NoPruning { k: usize },
    #[error("clusterings label different point counts: {a} vs {b}")]
    PointSetMismatch { a: usize, b: usize },
    #[error("point {index} has dimension {got}, expected {expected}")]
    DimensionMismatch {
        index: usize,
        got: usize,
        expected: usize,
    },
    #[error("point {index} has a non-finite coordinate")]
    BadCoordinate { index: usize },
}

/// Points in a common real coordinate space.
#[derive(Clone, Debug, PartialEq)]
pub struct PointSet {
    points: Vec<Vec<f64>>,
    dim: usize,
}

impl PointSet {
    pub fn new(points: Vec<Vec<f64>>) -> Result<Self, BaselineError> {
        assert!(!points.is_empty(), "empty point set");
        let dim = points[0].len();
        for (index, p) in points.iter().enumerate() {
            if p.len() != dim {
                return Err(BaselineError::DimensionMismatch {
                    index,
                    got: p.len(),
                    expected: dim,
                });
            }
            if p.iter().any(|c| !c.is_finite()) {
                return Err(BaselineError::BadCoordinate { index });
            }
        }
        Ok(PointSet { points, dim })
    }

    pub fn n(&self) -> usize {
        self.points.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f64]> {
        self.points.iter().map(|p| p.as_slice())
    }

    pub fn squared_distance(&self, i: usize, j: usize) -> f64 {
        self.points[i]
            .iter()
            .zip(&self.points[j])
            .map(|(a, b)| (a - b) * (a - b))
            .sum()
    }
}

/// A flat clustering: every point carries a label in `0..k`, every label
/// non-empty.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FlatClustering {
    labels: Vec<usize>,
    k: usize,
}

impl FlatClustering {
    /// Compacts arbitrary label values to `0..k` (ascending by value).
    pub fn new(raw: Vec<usize>) -> Self {
        let mut distinct: Vec<usize> = raw.clone();
        distinct.sort_unstable();
        distinct.dedup();
        let labels = raw
            .iter()
            .map(|l| distinct.binary_search(l).unwrap())
            .collect();
        FlatClustering {
            labels,
            k: distinct.len(),
        }
    }

    pub fn from_groups(n: usize, groups: &[Vec<usize>]) -> Self {
        let mut labels = vec![usize::MAX; n];
        for (ix, g) in groups.iter().enumerate() {
            for &p in g {
                labels[p] = ix;
            }
        }
        assert!(labels.iter().all(|&l| l != usize::MAX), "uncovered point");
        FlatClustering { labels, k: groups.len() }
    }

    pub fn n(&self) -> usize {
        self.labels.len()
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LinkageMethod {
    Single,
    Average,
    Complete,
}

impl std::str::FromStr for LinkageMethod {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "single" => Ok(LinkageMethod::Single),
            "average" => Ok(LinkageMethod::Average),
            "complete" => Ok(LinkageMethod::Complete),
            other => Err(format!("unknown linkage method {other:?}")),
        }
    }
}

/// Agglomerative clustering on similarities: repeatedly merge the pair of
/// clusters with the highest inter-cluster similarity.
///
/// Working with similarities flips the usual distance conventions: single
/// linkage takes the maximum pairwise similarity between clusters, complete
/// linkage the minimum, average linkage the mean. Ties break toward the
/// smallest cluster creation indices. The result is binary with exactly
/// `n − 1` internal nodes.
pub fn linkage(sim: &SimilarityMatrix, method: LinkageMethod) -> HierTree {
    let n = sim.n();
    // cluster slots: 0..n leaves, then one per merge
    let total = 2 * n - 1;
    let mut sims = vec![f64::NAN; total * total];
    let mut sizes = vec![0usize; total];
    let mut node_of = vec![0usize; total];
    let mut alive: Vec<usize> = (0..n).collect();
    let mut nodes: Vec<TreeNode> = (0..n)
        .map(|i| TreeNode {
            children: Vec::new(),
            leaf: Some(i),
        })
        .collect();
    for i in 0..n {
        sizes[i] = 1;
        node_of[i] = i;
        for j in 0..n {
            if i != j {
                sims[i * total + j] = sim.get(i, j);
            }
        }
    }
    for next in n..total {
        let (mut best_a, mut best_b, mut best_s) = (0, 0, f64::NEG_INFINITY);
        for (ai, &a) in alive.iter().enumerate() {
            for &b in alive.iter().skip(ai + 1) {
                let s = sims[a * total + b];
                if s > best_s {
                    (best_a, best_b, best_s) = (a, b, s);
                }
            }
        }
        let (a, b) = (best_a.min(best_b), best_a.max(best_b));
        for &c in &alive {
            if c == a || c == b {
                continue;
            }
            let sa = sims[a * total + c];
            let sb = sims[b * total + c];
            let merged = match method {
                LinkageMethod::Single => sa.max(sb),
                LinkageMethod::Complete => sa.min(sb),
                LinkageMethod::Average => {
                    (sizes[a] as f64 * sa + sizes[b] as f64 * sb)
                        / (sizes[a] + sizes[b]) as f64
                }
            };
            sims[next * total + c] = merged;
            sims[c * total + next] = merged;
        }
        sizes[next] = sizes[a] + sizes[b];
        nodes.push(TreeNode {
            children: vec![node_of[a], node_of[b]],
            leaf: None,
        });
        node_of[next] = nodes.len() - 1;
        alive.retain(|&c| c != a && c != b);
        alive.push(next);
    }
    HierTree::new(nodes, node_of[total - 1]).expect("linkage builds a valid tree")
}

/// Ward's method: agglomerative merging minimizing the within-cluster
/// variance increase, via the Lance–Williams update on squared Euclidean
/// distances.
pub fn ward(points: &PointSet) -> HierTree {
    let n = points.n();
    assert!(n >= 2);
    let total = 2 * n - 1;
    let mut dist = vec![f64::NAN; total * total];
    let mut sizes = vec![0usize; total];
    let mut node_of = vec![0usize; total];
    let mut alive: Vec<usize> = (0..n).collect();
    let mut nodes: Vec<TreeNode> = (0..n)
        .map(|i| TreeNode {
            children: Vec::new(),
            leaf: Some(i),
        })
        .collect();
    for i in 0..n {
        sizes[i] = 1;
        node_of[i] = i;
        for j in 0..n {
            if i != j {
                dist[i * total + j] = points.squared_distance(i, j);
            }
        }
    }
    for next in n..total {
        let (mut best_a, mut best_b, mut best_d) = (0, 0, f64::INFINITY);
        for (ai, &a) in alive.iter().enumerate() {
            for &b in alive.iter().skip(ai + 1) {
                let d = dist[a * total + b];
                if d < best_d {
                    (best_a, best_b, best_d) = (a, b, d);
                }
            }
        }
        let (a, b) = (best_a.min(best_b), best_a.max(best_b));
        let (na, nb) = (sizes[a] as f64, sizes[b] as f64);
        for &c in &alive {
            if c == a || c == b {
                continue;
            }
            let nc = sizes[c] as f64;
            let merged = ((na + nc) * dist[a * total + c] + (nb + nc) * dist[b * total + c]
                - nc * dist[a * total + b])
                / (na + nb + nc);
            dist[next * total + c] = merged;
            dist[c * total + next] = merged;
        }
        sizes[next] = sizes[a] + sizes[b];
        nodes.push(TreeNode {
            children: vec![node_of[a], node_of[b]],
            leaf: None,
        });
        node_of[next] = nodes.len() - 1;
        alive.retain(|&c| c != a && c != b);
        alive.push(next);
    }
    HierTree::new(nodes, node_of[total - 1]).expect("ward builds a valid tree")
}

/// Lloyd's algorithm with distance-squared-proportional seeding; the best of
/// `restarts` runs by within-cluster sum of squares.
pub fn kmeans(
    points: &PointSet,
    k: usize,
    seed: u64,
    restarts: usize,
) -> Result<(FlatClustering, f64), BaselineError> {
    let n = points.n();
    if k == 0 || k > n {
        return Err(BaselineError::KOutOfRange { k, n });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<(Vec<usize>, f64)> = None;
    for _ in 0..restarts.max(1) {
        let (labels, wcss) = lloyd_once(points, k, &mut rng);
        if best.as_ref().map_or(true, |(_, b)| wcss < *b) {
            best = Some((labels, wcss));
        }
    }
    let (labels, wcss) = best.unwrap();
    Ok((FlatClustering::new(labels), wcss))
}

fn lloyd_once(points: &PointSet, k: usize, rng: &mut ChaCha8Rng) -> (Vec<usize>, f64) {
    let n = points.n();
    let dim = points.dim();

    // seeding: first center uniform, the rest proportional to squared
    // distance from the nearest chosen center
    let mut centers: Vec<Vec<f64>> = Vec::with_capacity(k);
    centers.push(points.point(rng.gen_range(0..n)).to_vec());
    let mut d2: Vec<f64> = (0..n)
        .map(|i| sq_dist(points.point(i), &centers[0]))
        .collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.gen::<f64>() * total;
            let mut chosen = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if target < w {
                    chosen = i;
                    break;
                }
                target -= w;
            }
            chosen
        } else {
            rng.gen_range(0..n)
        };
        centers.push(points.point(pick).to_vec());
        for i in 0..n {
            d2[i] = d2[i].min(sq_dist(points.point(i), centers.last().unwrap()));
        }
    }

    let mut labels = vec![0usize; n];
    for _iter in 0..300 {
        let mut changed = false;
        for i in 0..n {
            let mut best_c = labels[i];
            let mut best_d = f64::INFINITY;
            for (c, center) in centers.iter().enumerate() {
                let d = sq_dist(points.point(i), center);
                if d < best_d {
                    best_d = d;
                    best_c = c;
                }
            }
            if best_c != labels[i] {
                labels[i] = best_c;
                changed = true;
            }
        }
        if !changed && _iter > 0 {
            break;
        }
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for i in 0..n {
            counts[labels[i]] += 1;
            for (s, &x) in sums[labels[i]].iter_mut().zip(points.point(i)) {
                *s += x;
            }
        }
        for c in 0..k {
            if counts[c] == 0 {
                // revive an empty cluster at the point farthest from its center
                let far = (0..n)
                    .max_by(|&a, &b| {
                        sq_dist(points.point(a), &centers[labels[a]])
                            .total_cmp(&sq_dist(points.point(b), &centers[labels[b]]))
                    })
                    .unwrap();
                centers[c] = points.point(far).to_vec();
            } else {
                for (s, out) in sums[c].iter().zip(centers[c].iter_mut()) {
                    *out = s / counts[c] as f64;
                }
            }
        }
    }
    let wcss = (0..n)
        .map(|i| sq_dist(points.point(i), &centers[labels[i]]))
        .sum();
    (labels, wcss)
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[derive(Clone, Debug)]
pub struct PruningResult {
    pub clustering: FlatClustering,
    pub error: f64,
    /// Exhaustive enumeration was abandoned for the greedy fallback.
    pub approximate: bool,
}

/// Cap on exhaustively enumerated prunings before the greedy fallback.
pub const PRUNING_ENUM_CAP: u128 = 100_000;

/// Best flat k-clustering obtainable by cutting the tree: the antichain of
/// exactly `k` nodes covering all leaves that minimizes classification error
/// against `target`.
pub fn best_pruning(
    tree: &HierTree,
    k: usize,
    target: &FlatClustering,
) -> Result<PruningResult, BaselineError> {
    let n = tree.n();
    if target.n() != n {
        return Err(BaselineError::PointSetMismatch {
            a: n,
            b: target.n(),
        });
    }
    if k == 0 || k > n {
        return Err(BaselineError::KOutOfRange { k, n });
    }
    let counts = pruning_counts(tree, k);
    if counts[tree.root()][k] == 0 {
        return Err(BaselineError::NoPruning { k });
    }
    let leaf_lists = tree.leaf_lists();
    if counts[tree.root()][k] > PRUNING_ENUM_CAP {
        return greedy_pruning(tree, k, target, &leaf_lists);
    }
    let mut best: Option<(f64, Vec<usize>)> = None;
    let mut antichain: Vec<usize> = Vec::with_capacity(k);
    enumerate_prunings(
        tree,
        &counts,
        tree.root(),
        k,
        &mut antichain,
        &mut |nodes: &[usize]| {
            let groups: Vec<Vec<usize>> =
                nodes.iter().map(|&v| leaf_lists[v].clone()).collect();
            let h = FlatClustering::from_groups(n, &groups);
            let err = classification_error(&h, target).expect("same point set");
            if best.as_ref().map_or(true, |(b, _)| err < *b) {
                best = Some((err, nodes.to_vec()));
            }
        },
    );
    let (error, nodes) = best.expect("count said a pruning exists");
    let groups: Vec<Vec<usize>> = nodes.iter().map(|&v| leaf_lists[v].clone()).collect();
    Ok(PruningResult {
        clustering: FlatClustering::from_groups(n, &groups),
        error,
        approximate: false,
    })
}

/// `counts[v][j]` = number of antichains of size `j` covering the leaves of
/// the subtree at `v`, for `j <= k_max`.
fn pruning_counts(tree: &HierTree, k_max: usize) -> Vec<Vec<u128>> {
    let mut counts = vec![vec![0u128; k_max + 1]; tree.len()];
    for id in tree.postorder() {
        let node = tree.node(id);
        if node.leaf.is_some() {
            if k_max >= 1 {
                counts[id][1] = 1;
            }
            continue;
        }
        // convolution over children, each contributing >= 1 parts
        let mut acc = vec![0u128; k_max + 1];
        acc[0] = 1;
        for &c in &node.children {
            let mut next = vec![0u128; k_max + 1];
            for have in 0..=k_max {
                if acc[have] == 0 {
                    continue;
                }
                for take in 1..=k_max - have {
                    let ways = counts[c][take];
                    if ways > 0 {
                        next[have + take] = next[have + take].saturating_add(
                            acc[have].saturating_mul(ways),
                        );
                    }
                }
            }
            acc = next;
        }
        acc[1] = acc[1].saturating_add(1); // the node itself as one cluster
        counts[id] = acc;
    }
    counts
}

fn enumerate_prunings(
    tree: &HierTree,
    counts: &[Vec<u128>],
    node: usize,
    k: usize,
    antichain: &mut Vec<usize>,
    visit: &mut impl FnMut(&[usize]),
) {
    fn recur(
        tree: &HierTree,
        counts: &[Vec<u128>],
        node: usize,
        k: usize,
        antichain: &mut Vec<usize>,
        cont: &mut dyn FnMut(&mut Vec<usize>),
    ) {
        if k == 1 {
            antichain.push(node);
            cont(antichain);
            antichain.pop();
            return;
        }
        let children = tree.node(node).children.clone();
        if children.is_empty() {
            return;
        }
        // distribute k parts over the children
        fn assign(
            tree: &HierTree,
            counts: &[Vec<u128>],
            children: &[usize],
            remaining: usize,
            antichain: &mut Vec<usize>,
            cont: &mut dyn FnMut(&mut Vec<usize>),
        ) {
            if children.is_empty() {
                if remaining == 0 {
                    cont(antichain);
                }
                return;
            }
            let c = children[0];
            let rest = &children[1..];
            let min_rest = rest.len();
            for take in 1..=remaining.saturating_sub(min_rest) {
                if take >= counts[c].len() || counts[c][take] == 0 {
                    continue;
                }
                recur(tree, counts, c, take, antichain, &mut |ac| {
                    assign(tree, counts, rest, remaining - take, ac, cont);
                });
            }
        }
        assign(tree, counts, &children, k, antichain, cont);
    }
    recur(tree, counts, node, k, antichain, &mut |ac| visit(ac));
}

/// Best-first splitting used when the pruning count is too large: repeatedly
/// expand whichever antichain node improves the error most until `k` parts.
fn greedy_pruning(
    tree: &HierTree,
    k: usize,
    target: &FlatClustering,
    leaf_lists: &[Vec<usize>],
) -> Result<PruningResult, BaselineError> {
    let n = tree.n();
    let mut antichain = vec![tree.root()];
    while antichain.len() < k {
        let mut best: Option<(f64, usize)> = None; // (err, position to expand)
        for (pos, &v) in antichain.iter().enumerate() {
            let node = tree.node(v);
            if node.leaf.is_some() {
                continue;
            }
            let grown = antichain.len() - 1 + node.children.len();
            if grown > k {
                continue;
            }
            let mut cand = antichain.clone();
            cand.splice(pos..=pos, node.children.iter().copied());
            let groups: Vec<Vec<usize>> = cand.iter().map(|&u| leaf_lists[u].clone()).collect();
            let h = FlatClustering::from_groups(n, &groups);
            let err = classification_error(&h, target)?;
            if best.as_ref().map_or(true, |(b, _)| err < *b) {
                best = Some((err, pos));
            }
        }
        let Some((_, pos)) = best else {
            return Err(BaselineError::NoPruning { k });
        };
        let children = tree.node(antichain[pos]).children.clone();
        antichain.splice(pos..=pos, children);
    }
    let groups: Vec<Vec<usize>> = antichain.iter().map(|&u| leaf_lists[u].clone()).collect();
    let clustering = FlatClustering::from_groups(n, &groups);
    let error = classification_error(&clustering, target)?;
    Ok(PruningResult {
        clustering,
        error,
        approximate: true,
    })
}

/// Minimum mislabeled fraction over all bijections between the two label
/// sets (the smaller side padded with empty labels), by optimal assignment
/// on the confusion matrix.
pub fn classification_error(
    h: &FlatClustering,
    g: &FlatClustering,
) -> Result<f64, BaselineError> {
    if h.n() != g.n() {
        return Err(BaselineError::PointSetMismatch { a: h.n(), b: g.n() });
    }
    let n = h.n();
    let k = h.k().max(g.k());
    let mut confusion = vec![vec![0.0f64; k]; k];
    for i in 0..n {
        confusion[h.label(i)][g.label(i)] += 1.0;
    }
    let agreement = assignment_max(&confusion);
    Ok(1.0 - agreement / n as f64)
}

/// Maximum-total assignment on a square matrix (Hungarian algorithm on the
/// negated costs).
fn assignment_max(weights: &[Vec<f64>]) -> f64 {
    let k = weights.len();
    // potentials formulation, 1-indexed helpers
    let inf = f64::INFINITY;
    let mut u = vec![0.0f64; k + 1];
    let mut v = vec![0.0f64; k + 1];
    let mut assignment = vec![0usize; k + 1]; // column -> row
    for row in 1..=k {
        let mut links = vec![0usize; k + 1];
        let mut mins = vec![inf; k + 1];
        let mut visited = vec![false; k + 1];
        let mut marked_col = 0usize;
        assignment[0] = row;
        loop {
            visited[marked_col] = true;
            let marked_row = assignment[marked_col];
            let mut delta = inf;
            let mut next_col = 0;
            for col in 1..=k {
                if visited[col] {
                    continue;
                }
                // minimize negated weight
                let cur = -weights[marked_row - 1][col - 1] - u[marked_row] - v[col];
                if cur < mins[col] {
                    mins[col] = cur;
                    links[col] = marked_col;
                }
                if mins[col] < delta {
                    delta = mins[col];
                    next_col = col;
                }
            }
            for col in 0..=k {
                if visited[col] {
                    u[assignment[col]] += delta;
                    v[col] -= delta;
                } else {
                    mins[col] -= delta;
                }
            }
            marked_col = next_col;
            if assignment[marked_col] == 0 {
                break;
            }
        }
        // augment
        while marked_col != 0 {
            let prev = links[marked_col];
            assignment[marked_col] = assignment[prev];
            marked_col = prev;
        }
    }
    let mut total = 0.0;
    for col in 1..=k {
        if assignment[col] != 0 {
            total += weights[assignment[col] - 1][col - 1];
        }
    }
    total
}
