//! Hierarchical clustering by ultrametric optimization.
//!
//! Dasgupta's cost of a hierarchy charges every pair of points the size of
//! the smallest cluster still containing both, weighted by their similarity.
//! Minimizing it exactly is intractable, but the hierarchies are in bijection
//! with a combinatorially characterized family of ultrametrics, and that
//! family admits a layered linear-programming relaxation. This crate solves
//! the relaxation with cutting planes, rounds it layer by layer with sphere
//! growing, and converts the rounded ultrametric back into a tree, with a
//! provable O(log n) gap to the optimum.
//!
//! The main entry points:
//! - [`pipeline::run_pipeline`] — relaxation → rounding → tree, with a full
//!   audit of the per-layer guarantees;
//! - [`oracle::exact_optimum`] — exhaustive optimum for n ≤ 8;
//! - [`baselines`] — linkage methods, Ward, k-means, tree pruning, and
//!   classification error for comparisons;
//! - [`kernels`] / [`io`] — similarity construction, synthetic mixtures, and
//!   every file format the CLI speaks.
//!
//! ```
//! use ultraclust::{CostScaler, SimilarityMatrix};
//!
//! let kappa = SimilarityMatrix::constant(3, 1.0);
//! let (tree, cost) = ultraclust::oracle::exact_optimum(&kappa, &CostScaler::Linear, 8).unwrap();
//! assert_eq!(cost, 8.0);
//! assert_eq!(ultraclust::tree_cost(&tree, &kappa).unwrap(), 8.0);
//! ```

mod book;
mod matrix;
mod nontrivial;
mod pairs;
mod scaler;
mod tree;

pub mod baselines;
pub mod io;
pub mod kernels;
pub mod lp;
pub mod oracle;
pub mod pipeline;
pub mod rounding;
pub mod simplex;

pub use matrix::{MatrixError, SimilarityMatrix, Ultrametric, VALUE_TOL};
pub use nontrivial::{check_nontrivial, NontrivialViolation};
pub use pairs::PairTable;
pub use scaler::{CostScaler, ScalerError};
pub use tree::{
    build_tree, induced_ultrametric, normalized_cost, tree_cost, tree_cost_f, HierTree, Nested,
    NodeId, TreeError, TreeNode,
};
