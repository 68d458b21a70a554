//! Rooted trees over the data points and the costs of the hierarchies they
//! describe.
//!
//! A hierarchy and an ultrametric carry the same information: the tree
//! induces the distance `d(i,j) = |leaves below lca(i,j)| − 1`, and every
//! ultrametric passing [`check_nontrivial`](crate::check_nontrivial) is
//! realized by exactly one tree, recovered by [`build_tree`].

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::matrix::{SimilarityMatrix, Ultrametric, VALUE_TOL};
use crate::nontrivial::{check_nontrivial, NontrivialViolation};
use crate::pairs::PairTable;
use crate::scaler::CostScaler;

pub type NodeId = usize;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TreeNode {
    pub children: Vec<NodeId>,
    /// Point index for leaves, `None` for internal nodes.
    pub leaf: Option<usize>,
}

#[derive(Debug, Error, PartialEq)]
pub enum TreeError {
    #[error("node {0} has exactly one child; unary chains are not allowed")]
    UnaryNode(NodeId),
    #[error("leaf set must be exactly 0..n, but leaf {0} is missing or repeated")]
    BadLeafSet(usize),
    #[error("node {0} is unreachable from the root or appears twice")]
    Disconnected(NodeId),
    #[error("tree has {tree} leaves but the matrix covers {matrix} points")]
    LeafSetMismatch { tree: usize, matrix: usize },
    #[error("all similarities are zero; normalized cost is undefined")]
    AllZeroSimilarity,
    #[error("input is not a non-trivial ultrametric: {0}")]
    NotNontrivial(NontrivialViolation),
}

/// A hierarchical clustering: a rooted tree whose leaves are the points
/// `0..n`, with every internal node having at least two children.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct HierTree {
    nodes: Vec<TreeNode>,
    root: NodeId,
}

/// Nested value form of a tree, also its JSON wire shape:
/// `{"leaf": 3}` or `{"children": [...]}`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Nested {
    Leaf { leaf: usize },
    Internal { children: Vec<Nested> },
}

impl HierTree {
    pub fn new(nodes: Vec<TreeNode>, root: NodeId) -> Result<Self, TreeError> {
        let tree = HierTree { nodes, root };
        tree.validate()?;
        Ok(tree)
    }

    pub fn from_nested(nested: &Nested) -> Result<Self, TreeError> {
        let mut nodes = Vec::new();
        fn add(nodes: &mut Vec<TreeNode>, nested: &Nested) -> NodeId {
            let node = match nested {
                Nested::Leaf { leaf } => TreeNode {
                    children: Vec::new(),
                    leaf: Some(*leaf),
                },
                Nested::Internal { children } => TreeNode {
                    children: children.iter().map(|c| add(nodes, c)).collect(),
                    leaf: None,
                },
            };
            nodes.push(node);
            nodes.len() - 1
        }
        let root = add(&mut nodes, nested);
        HierTree::new(nodes, root)
    }

    /// The depth-1 tree with all points as children of the root.
    pub fn star(n: usize) -> Self {
        let mut nodes: Vec<TreeNode> = (0..n)
            .map(|i| TreeNode {
                children: Vec::new(),
                leaf: Some(i),
            })
            .collect();
        nodes.push(TreeNode {
            children: (0..n).collect(),
            leaf: None,
        });
        HierTree { nodes, root: n }
    }

    fn validate(&self) -> Result<(), TreeError> {
        let mut seen_nodes = vec![false; self.nodes.len()];
        let mut leaf_seen = Vec::new();
        let mut stack = vec![self.root];
        while let Some(id) = stack.pop() {
            if seen_nodes[id] {
                return Err(TreeError::Disconnected(id));
            }
            seen_nodes[id] = true;
            let node = &self.nodes[id];
            match node.leaf {
                Some(ix) => {
                    if !node.children.is_empty() {
                        return Err(TreeError::UnaryNode(id));
                    }
                    if ix >= leaf_seen.len() {
                        leaf_seen.resize(ix + 1, false);
                    }
                    if leaf_seen[ix] {
                        return Err(TreeError::BadLeafSet(ix));
                    }
                    leaf_seen[ix] = true;
                }
                None => {
                    if node.children.len() < 2 {
                        return Err(TreeError::UnaryNode(id));
                    }
                    stack.extend_from_slice(&node.children);
                }
            }
        }
        if let Some(id) = seen_nodes.iter().position(|&s| !s) {
            return Err(TreeError::Disconnected(id));
        }
        if let Some(ix) = leaf_seen.iter().position(|&s| !s) {
            return Err(TreeError::BadLeafSet(ix));
        }
        Ok(())
    }

    #[inline]
    pub fn root(&self) -> NodeId {
        self.root
    }

    #[inline]
    pub fn node(&self, id: NodeId) -> &TreeNode {
        &self.nodes[id]
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Number of points (leaves).
    pub fn n(&self) -> usize {
        self.nodes.iter().filter(|n| n.leaf.is_some()).count()
    }

    pub fn internal_count(&self) -> usize {
        self.nodes.iter().filter(|n| n.leaf.is_none()).count()
    }

    /// Leaf indices below each node, in increasing order.
    pub fn leaf_lists(&self) -> Vec<Vec<usize>> {
        let mut lists: Vec<Vec<usize>> = vec![Vec::new(); self.nodes.len()];
        for id in self.postorder() {
            let node = &self.nodes[id];
            if let Some(ix) = node.leaf {
                lists[id].push(ix);
            } else {
                let mut merged = Vec::new();
                for &c in &node.children {
                    merged.extend_from_slice(&lists[c]);
                }
                merged.sort_unstable();
                lists[id] = merged;
            }
        }
        lists
    }

    pub fn postorder(&self) -> Vec<NodeId> {
        let mut order = Vec::with_capacity(self.nodes.len());
        let mut stack = vec![(self.root, false)];
        while let Some((id, expanded)) = stack.pop() {
            if expanded {
                order.push(id);
            } else {
                stack.push((id, true));
                for &c in &self.nodes[id].children {
                    stack.push((c, false));
                }
            }
        }
        order
    }

    /// Calls `visit(i, j, leaves_at_lca)` once per unordered pair, where
    /// `leaves_at_lca` is the leaf count of the pair's lowest common ancestor.
    pub fn for_each_lca_pair(&self, mut visit: impl FnMut(usize, usize, usize)) {
        let lists = self.leaf_lists();
        for id in 0..self.nodes.len() {
            let node = &self.nodes[id];
            if node.leaf.is_some() {
                continue;
            }
            let size = lists[id].len();
            for (a, &c1) in node.children.iter().enumerate() {
                for &c2 in node.children.iter().skip(a + 1) {
                    for &i in &lists[c1] {
                        for &j in &lists[c2] {
                            visit(i.min(j), i.max(j), size);
                        }
                    }
                }
            }
        }
    }

    pub fn to_nested(&self) -> Nested {
        fn conv(tree: &HierTree, id: NodeId) -> Nested {
            let node = tree.node(id);
            match node.leaf {
                Some(leaf) => Nested::Leaf { leaf },
                None => Nested::Internal {
                    children: node.children.iter().map(|&c| conv(tree, c)).collect(),
                },
            }
        }
        conv(self, self.root)
    }

    /// Nested form with children ordered by smallest descendant leaf.
    /// Two trees describe the same hierarchy iff their canonical forms are
    /// equal.
    pub fn canonical(&self) -> Nested {
        fn sort(n: &mut Nested) -> usize {
            match n {
                Nested::Leaf { leaf } => *leaf,
                Nested::Internal { children } => {
                    let mut keyed: Vec<(usize, Nested)> = children
                        .drain(..)
                        .map(|mut c| {
                            let key = sort(&mut c);
                            (key, c)
                        })
                        .collect();
                    keyed.sort_by_key(|(k, _)| *k);
                    let min = keyed[0].0;
                    *children = keyed.into_iter().map(|(_, c)| c).collect();
                    min
                }
            }
        }
        let mut nested = self.to_nested();
        sort(&mut nested);
        nested
    }

    pub fn same_hierarchy(&self, other: &HierTree) -> bool {
        self.canonical() == other.canonical()
    }
}

/// Σ_{i<j} κ(i,j) · |leaves(T[lca(i,j)])|.
pub fn tree_cost(tree: &HierTree, kappa: &SimilarityMatrix) -> Result<f64, TreeError> {
    tree_cost_f(tree, kappa, &CostScaler::Linear)
}

/// Σ_{i<j} κ(i,j) · f(|leaves(T[lca(i,j)])|).
pub fn tree_cost_f(
    tree: &HierTree,
    kappa: &SimilarityMatrix,
    f: &CostScaler,
) -> Result<f64, TreeError> {
    if tree.n() != kappa.n() {
        return Err(TreeError::LeafSetMismatch {
            tree: tree.n(),
            matrix: kappa.n(),
        });
    }
    let mut cost = 0.0;
    tree.for_each_lca_pair(|i, j, size| cost += kappa.get(i, j) * f.eval(size));
    Ok(cost)
}

/// Cost relative to the star tree; lies in `(0, 1]` whenever Σκ > 0.
pub fn normalized_cost(
    tree: &HierTree,
    kappa: &SimilarityMatrix,
    f: &CostScaler,
) -> Result<f64, TreeError> {
    if kappa.total() <= 0.0 {
        return Err(TreeError::AllZeroSimilarity);
    }
    let star = f.eval(kappa.n()) * kappa.total();
    Ok(tree_cost_f(tree, kappa, f)? / star)
}

/// The ultrametric `d(i,j) = |leaves(T[lca(i,j)])| − 1` induced by a tree.
pub fn induced_ultrametric(tree: &HierTree) -> Ultrametric {
    let n = tree.n();
    let mut table = PairTable::filled(n, 0.0);
    tree.for_each_lca_pair(|i, j, size| table.set(i, j, (size - 1) as f64));
    Ultrametric::from_table_unchecked(table)
}

/// Reconstructs the hierarchy realizing a non-trivial ultrametric.
///
/// Recursively partitions the current point set `S` into the equivalence
/// classes of `d(i,j) < |S| − 1`; non-triviality guarantees the partition is
/// proper at every step, and the result induces `d` exactly. Runs in O(n³).
pub fn build_tree(d: &Ultrametric) -> Result<HierTree, TreeError> {
    check_nontrivial(d).map_err(TreeError::NotNontrivial)?;
    let mut nodes: Vec<TreeNode> = Vec::new();
    let root = build_subtree(d, &(0..d.n()).collect::<Vec<_>>(), &mut nodes);
    HierTree::new(nodes, root)
}

fn build_subtree(d: &Ultrametric, points: &[usize], nodes: &mut Vec<TreeNode>) -> NodeId {
    if points.len() == 1 {
        nodes.push(TreeNode {
            children: Vec::new(),
            leaf: Some(points[0]),
        });
        return nodes.len() - 1;
    }
    // classes of d(i,j) < |points| − 1; values are integer-snapped
    let threshold = (points.len() - 1) as f64 - 0.5;
    let mut assigned = vec![false; points.len()];
    let mut children = Vec::new();
    for a in 0..points.len() {
        if assigned[a] {
            continue;
        }
        assigned[a] = true;
        let mut class = vec![points[a]];
        for b in a + 1..points.len() {
            if !assigned[b] && d.get(points[a], points[b]) < threshold + VALUE_TOL {
                assigned[b] = true;
                class.push(points[b]);
            }
        }
        children.push(build_subtree(d, &class, nodes));
    }
    debug_assert!(children.len() >= 2, "non-trivial input must split");
    nodes.push(TreeNode {
        children,
        leaf: None,
    });
    nodes.len() - 1
}
