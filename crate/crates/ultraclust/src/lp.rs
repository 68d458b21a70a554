//! The layered relaxation and its separation oracles.
//!
//! For `n` points there are layers `t = 1..n−1` with one variable per
//! unordered pair; `x^t_ij = 1` reads "i and j are at distance ≥ t". The
//! relaxation keeps three constraint families per layer: the strong triangle
//! inequality, the spreading constraints `Σ_{j∈S} x^t_ij ≥ |S| − t`, and the
//! box `0 ≤ x ≤ 1`, with `x^t ≥ x^{t+1}` tying layers together.
//!
//! The program carries one column per `(t, pair)` with box bounds `[0, 1]`
//! and the monotonicity rows from the start; triangle and spreading rows are
//! exponential-by-layer and enter lazily through [`separate_triangle`] and
//! [`separate_spreading`]. Symmetry and the zero diagonal never appear at
//! all: columns are indexed by unordered pairs.

use std::collections::HashSet;

use thiserror::Error;

use crate::matrix::SimilarityMatrix;
use crate::pairs::{pair_index, PairTable};
use crate::scaler::CostScaler;
use crate::simplex::{self, LinearProgram, LpStatus, Row, Sense, SolveLimits};

/// Default violation tolerance for the separation oracles.
pub const SEPARATION_TOL: f64 = 1e-7;
/// Rows added per separator per round, most violated first.
pub const BATCH_CAP: usize = 500;

#[derive(Debug, Error)]
pub enum LpError {
    #[error("cutting plane loop hit the round cap with max violation {max_violation}")]
    IterationCap { max_violation: f64 },
    #[error("restricted relaxation came back {0:?}; the relaxation is always feasible, so this is a solver bug")]
    Solver(LpStatus),
    #[error("instances above 64 points are not supported")]
    TooLarge,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SolutionMode {
    Fractional,
    Binary,
}

/// Values `x^t_ij` for layers `t = 1..=layers`, symmetric with zero diagonal.
#[derive(Clone, Debug, PartialEq)]
pub struct LayeredSolution {
    n: usize,
    layers: Vec<PairTable>,
    mode: SolutionMode,
}

impl LayeredSolution {
    pub fn new(n: usize, layers: Vec<PairTable>, mode: SolutionMode) -> Self {
        for l in &layers {
            assert_eq!(l.n(), n);
        }
        if mode == SolutionMode::Binary {
            for l in &layers {
                for (_, _, v) in l.iter() {
                    assert!(v == 0.0 || v == 1.0, "binary solution with value {v}");
                }
            }
        }
        LayeredSolution { n, layers, mode }
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    /// Number of layers stored; `n−1` for relaxation solutions.
    #[inline]
    pub fn layer_count(&self) -> usize {
        self.layers.len()
    }

    pub fn mode(&self) -> SolutionMode {
        self.mode
    }

    /// `x^t_ij` with `t` 1-based.
    #[inline]
    pub fn get(&self, t: usize, i: usize, j: usize) -> f64 {
        self.layers[t - 1].get(i, j)
    }

    pub fn layer(&self, t: usize) -> &PairTable {
        &self.layers[t - 1]
    }

    /// Entries `(t, i, j, value)` over all layers, `i < j`.
    pub fn entries(&self) -> impl Iterator<Item = (usize, usize, usize, f64)> + '_ {
        self.layers
            .iter()
            .enumerate()
            .flat_map(|(ix, l)| l.iter().map(move |(i, j, v)| (ix + 1, i, j, v)))
    }

    /// Monotonicity defect `max_t max_ij (x^{t+1} − x^t)`; 0 for solutions of
    /// the relaxation since layers only shrink.
    pub fn monotonicity_defect(&self) -> f64 {
        let mut worst = 0.0f64;
        for t in 1..self.layers.len() {
            for (i, j, hi) in self.layers[t].iter() {
                worst = worst.max(hi - self.layers[t - 1].get(i, j));
            }
        }
        worst
    }
}

/// Provenance of a pooled cut; the pool never holds two rows with one tag.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum CutTag {
    /// `x^t_ij + x^t_jk ≥ x^t_ik`, normalized to `i < k`.
    Triangle {
        t: usize,
        i: usize,
        j: usize,
        k: usize,
    },
    /// `Σ_{j∈S} x^t_ij ≥ |S| − t` for the member bitmask `set` (center included).
    Spreading { t: usize, center: usize, set: u64 },
}

#[derive(Clone, Debug)]
pub struct Cut {
    pub tag: CutTag,
    pub row: Row,
    pub violation: f64,
}

/// Deduplicating admission of separated rows.
#[derive(Debug, Default)]
pub struct CutPool {
    seen: HashSet<CutTag>,
}

impl CutPool {
    pub fn new() -> Self {
        CutPool::default()
    }

    /// True if the tag was new and the cut should be appended.
    pub fn admit(&mut self, tag: &CutTag) -> bool {
        self.seen.insert(tag.clone())
    }

    pub fn len(&self) -> usize {
        self.seen.len()
    }

    pub fn is_empty(&self) -> bool {
        self.seen.is_empty()
    }
}

#[inline]
fn xcol(npairs: usize, t: usize, pair: usize) -> usize {
    (t - 1) * npairs + pair
}

/// Builds the relaxation for `κ` under scaler `f`.
///
/// Variables `x^t_ij` for `t = 1..n−1`, `i < j`, bounded in `[0, 1]`, with
/// objective weight `κ(i,j)·(f(t)−f(t−1))`. Monotonicity rows
/// `x^t − x^{t+1} ≥ 0` are present from the start; triangle and spreading
/// rows start out separated away.
pub fn build_relaxation(kappa: &SimilarityMatrix, f: &CostScaler) -> LinearProgram {
    let n = kappa.n();
    let layers = n - 1;
    let npairs = n * (n - 1) / 2;
    let ncols = layers * npairs;

    let mut objective = vec![0.0; ncols];
    for t in 1..=layers {
        let w = f.increment(t);
        for (ix, (i, j, _)) in kappa.iter().enumerate() {
            debug_assert_eq!(ix, pair_index(n, i, j));
            objective[xcol(npairs, t, ix)] = kappa.get(i, j) * w;
        }
    }
    let mut lp = LinearProgram::new(objective, vec![(0.0, 1.0); ncols]);
    for t in 1..layers {
        for pair in 0..npairs {
            lp.push_row(Row::new(
                vec![(xcol(npairs, t, pair), 1.0), (xcol(npairs, t + 1, pair), -1.0)],
                Sense::Ge,
                0.0,
            ));
        }
    }
    lp
}

/// Lays the raw solver vector out as a layered solution.
pub fn extract_solution(n: usize, x: &[f64]) -> LayeredSolution {
    let layers = n - 1;
    let npairs = n * (n - 1) / 2;
    assert_eq!(x.len(), layers * npairs);
    let mut tables = vec![PairTable::filled(n, 0.0); layers];
    for (t, table) in tables.iter_mut().enumerate() {
        for pair_ix in 0..npairs {
            table.values_mut()[pair_ix] = x[xcol(npairs, t + 1, pair_ix)].clamp(0.0, 1.0);
        }
    }
    LayeredSolution::new(n, tables, SolutionMode::Fractional)
}

/// All triangle rows violated beyond `tol`, most violated first, at most
/// `cap` of them.
pub fn separate_triangle(sol: &LayeredSolution, tol: f64, cap: usize) -> Vec<Cut> {
    let n = sol.n();
    let npairs = n * (n - 1) / 2;
    let nlayers = sol.layer_count();
    let mut cuts = Vec::new();
    for t in 1..=nlayers {
        for i in 0..n {
            for k in i + 1..n {
                let xik = sol.get(t, i, k);
                for j in 0..n {
                    if j == i || j == k {
                        continue;
                    }
                    let violation = xik - sol.get(t, i, j) - sol.get(t, j, k);
                    if violation > tol {
                        let coeffs = vec![
                            (xcol(npairs, t, pair_index(n, i, j)), 1.0),
                            (xcol(npairs, t, pair_index(n, j, k)), 1.0),
                            (xcol(npairs, t, pair_index(n, i, k)), -1.0),
                        ];
                        cuts.push(Cut {
                            tag: CutTag::Triangle { t, i, j, k },
                            row: Row::new(coeffs, Sense::Ge, 0.0),
                            violation,
                        });
                    }
                }
            }
        }
    }
    cuts.sort_by(|a, b| b.violation.total_cmp(&a.violation));
    cuts.truncate(cap);
    cuts
}

/// All spreading rows violated beyond `tol`, most violated first, at most
/// `cap` of them.
///
/// For fixed layer `t` and center `i`, only prefix sets of the distance
/// ordering around `i` can be violated: any other set of the same size has a
/// no-smaller sum. So for each size `m ∈ {t+1..n}` the `m` nearest vertices
/// (center included) are the one candidate to test.
pub fn separate_spreading(sol: &LayeredSolution, tol: f64, cap: usize) -> Vec<Cut> {
    let n = sol.n();
    let npairs = n * (n - 1) / 2;
    let nlayers = sol.layer_count();
    let mut cuts = Vec::new();
    for t in 1..=nlayers {
        for center in 0..n {
            let mut order: Vec<(f64, usize)> = (0..n)
                .filter(|&j| j != center)
                .map(|j| (sol.get(t, center, j), j))
                .collect();
            order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let mut sum = 0.0;
            let mut mask = 1u64 << center;
            for (rank, &(dist, j)) in order.iter().enumerate() {
                sum += dist;
                mask |= 1 << j;
                let m = rank + 2; // set size including the center
                if m <= t {
                    continue;
                }
                let required = (m - t) as f64;
                let violation = required - sum;
                if violation > tol {
                    let coeffs = order[..=rank]
                        .iter()
                        .map(|&(_, member)| (xcol(npairs, t, pair_index(n, center, member)), 1.0))
                        .collect();
                    cuts.push(Cut {
                        tag: CutTag::Spreading {
                            t,
                            center,
                            set: mask,
                        },
                        row: Row::new(coeffs, Sense::Ge, required),
                        violation,
                    });
                }
            }
        }
    }
    cuts.sort_by(|a, b| b.violation.total_cmp(&a.violation));
    cuts.truncate(cap);
    cuts
}

#[derive(Clone, Debug, serde::Serialize)]
pub struct SolveRound {
    pub round: usize,
    pub triangle_added: usize,
    pub spreading_added: usize,
    pub objective: f64,
    pub pivots: usize,
}

#[derive(Clone, Debug)]
pub struct RelaxationSolution {
    pub solution: LayeredSolution,
    /// Per-layer objective values γ_t = Σ_{i<j} (f(t)−f(t−1)) κ(i,j) x^t_ij,
    /// indexed by `t − 1`.
    pub gamma: Vec<f64>,
    /// Σ_t γ_t, the optimum of the relaxation.
    pub opt_value: f64,
    pub rounds: Vec<SolveRound>,
    pub rows_in_pool: usize,
}

#[derive(Clone, Copy, Debug)]
pub struct SolveOptions {
    pub tol: f64,
    pub batch_cap: usize,
    pub max_rounds: usize,
    pub max_pivots: usize,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            tol: SEPARATION_TOL,
            batch_cap: BATCH_CAP,
            max_rounds: 500,
            max_pivots: 2_000_000,
        }
    }
}

/// Cutting-plane solve of the relaxation: solve the restricted program, run
/// both separators, add what they found, re-solve warm with the dual simplex,
/// repeat until nothing is violated beyond `tol`.
pub fn solve_relaxation(
    kappa: &SimilarityMatrix,
    f: &CostScaler,
    tol: f64,
) -> Result<RelaxationSolution, LpError> {
    solve_relaxation_opts(
        kappa,
        f,
        &SolveOptions {
            tol,
            ..SolveOptions::default()
        },
    )
}

pub fn solve_relaxation_opts(
    kappa: &SimilarityMatrix,
    f: &CostScaler,
    opts: &SolveOptions,
) -> Result<RelaxationSolution, LpError> {
    let n = kappa.n();
    if n > 64 {
        return Err(LpError::TooLarge);
    }
    let mut lp = build_relaxation(kappa, f);
    let limits = SolveLimits {
        max_pivots: opts.max_pivots,
        tol: simplex::FEAS_TOL,
    };
    let mut outcome = simplex::solve(&lp, &limits);
    if outcome.status != LpStatus::Optimal {
        return Err(LpError::Solver(outcome.status));
    }
    let mut pool = CutPool::new();
    let mut rounds = Vec::new();
    for round in 0..opts.max_rounds {
        let sol = extract_solution(n, &outcome.x);
        let mut cuts = separate_triangle(&sol, opts.tol, opts.batch_cap);
        let tri_found = cuts.len();
        cuts.extend(separate_spreading(&sol, opts.tol, opts.batch_cap));
        let spread_found = cuts.len() - tri_found;
        cuts.retain(|c| pool.admit(&c.tag));
        if cuts.is_empty() {
            if tri_found + spread_found > 0 {
                // separators re-found pooled rows the solver left violated
                let worst = max_violation(&sol, opts.tol);
                return Err(LpError::IterationCap {
                    max_violation: worst,
                });
            }
            return Ok(finish(kappa, f, sol, outcome.obj, rounds, pool.len()));
        }
        debug_assert!(
            cuts.iter().all(|c| c.row.violation(&outcome.x) > 0.0),
            "separator emitted a row the current point satisfies"
        );
        let added = cuts.len();
        let mut tri_added = 0;
        for c in cuts {
            if matches!(c.tag, CutTag::Triangle { .. }) {
                tri_added += 1;
            }
            lp.push_row(c.row);
        }
        outcome = simplex::resolve_with_rows(&outcome, &lp, added, &limits);
        if outcome.status != LpStatus::Optimal {
            return Err(LpError::Solver(outcome.status));
        }
        if std::env::var_os("ULTRACLUST_KKT").is_some() {
            let (p, d) = simplex::kkt_residuals(&lp, &outcome);
            eprintln!("[kkt] round={round} rows={} primal={p:.2e} dual={d:.2e} obj={:.4} pivots={}", lp.rows.len(), outcome.obj, outcome.pivots);
        }
        rounds.push(SolveRound {
            round,
            triangle_added: tri_added,
            spreading_added: added - tri_added,
            objective: outcome.obj,
            pivots: outcome.pivots,
        });
    }
    let sol = extract_solution(n, &outcome.x);
    Err(LpError::IterationCap {
        max_violation: max_violation(&sol, opts.tol),
    })
}

fn max_violation(sol: &LayeredSolution, tol: f64) -> f64 {
    separate_triangle(sol, tol, 1)
        .into_iter()
        .chain(separate_spreading(sol, tol, 1))
        .map(|c| c.violation)
        .fold(0.0, f64::max)
}

fn finish(
    kappa: &SimilarityMatrix,
    f: &CostScaler,
    solution: LayeredSolution,
    lp_obj: f64,
    rounds: Vec<SolveRound>,
    rows_in_pool: usize,
) -> RelaxationSolution {
    let gamma = layer_objectives(kappa, f, &solution);
    let opt_value: f64 = gamma.iter().sum();
    debug_assert!(
        (opt_value - lp_obj).abs() <= 1e-6 * (1.0 + lp_obj.abs()),
        "layer objectives should sum to the LP optimum"
    );
    RelaxationSolution {
        solution,
        gamma,
        opt_value,
        rounds,
        rows_in_pool,
    }
}

/// γ_t for every layer of a solution.
pub fn layer_objectives(
    kappa: &SimilarityMatrix,
    f: &CostScaler,
    sol: &LayeredSolution,
) -> Vec<f64> {
    (1..=sol.layer_count())
        .map(|t| {
            let w = f.increment(t);
            kappa
                .iter()
                .map(|(i, j, k)| w * k * sol.get(t, i, j))
                .sum()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn uniform_solution(n: usize, value: f64) -> LayeredSolution {
        LayeredSolution::new(
            n,
            vec![PairTable::filled(n, value); n - 1],
            SolutionMode::Fractional,
        )
    }

    #[test]
    fn relaxation_shape_for_three_points() {
        let kappa = SimilarityMatrix::constant(3, 1.0);
        let lp = build_relaxation(&kappa, &CostScaler::Linear);
        assert_eq!(lp.ncols, 6, "2 layers x 3 pairs");
        assert_eq!(lp.rows.len(), 3, "one monotonicity row per pair");
    }

    #[test]
    fn linear_objective_weights_equal_kappa_everywhere() {
        let kappa = SimilarityMatrix::from_fn(3, |i, j| (1 + i + j) as f64).unwrap();
        let lp = build_relaxation(&kappa, &CostScaler::Linear);
        for (ix, (i, j, _)) in kappa.iter().enumerate() {
            assert_eq!(lp.objective[ix], kappa.get(i, j));
            assert_eq!(lp.objective[3 + ix], kappa.get(i, j));
        }
    }

    #[test]
    fn quadratic_layer_weight_is_odd_numbers() {
        let f = CostScaler::Quadratic;
        for t in 1..8 {
            assert_eq!(f.increment(t), (2 * t - 1) as f64);
        }
    }

    #[test]
    fn solved_relaxations_have_monotone_layers() {
        let kappa = SimilarityMatrix::from_fn(5, |i, j| ((i * 3 + j) % 4) as f64).unwrap();
        let out = solve_relaxation(&kappa, &CostScaler::Linear, 1e-7).unwrap();
        assert!(out.solution.monotonicity_defect() <= 1e-7);
    }

    #[test]
    fn triangle_separator_finds_the_maximal_violation() {
        let mut layer = PairTable::filled(3, 0.0);
        layer.set(0, 2, 1.0);
        let sol = LayeredSolution::new(
            3,
            vec![layer, PairTable::filled(3, 0.0)],
            SolutionMode::Fractional,
        );
        let cuts = separate_triangle(&sol, 1e-7, 500);
        assert_eq!(cuts.len(), 1);
        assert_eq!(
            cuts[0].tag,
            CutTag::Triangle {
                t: 1,
                i: 0,
                j: 1,
                k: 2
            }
        );
        assert!((cuts[0].violation - 1.0).abs() < 1e-12);
    }

    #[test]
    fn half_uniform_satisfies_triangle() {
        let sol = uniform_solution(4, 0.5);
        assert!(separate_triangle(&sol, 1e-7, 500).is_empty());
    }

    #[test]
    fn clique_union_layers_satisfy_triangle() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let n = rng.gen_range(3..=8);
            let labels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..3)).collect();
            let layer =
                PairTable::from_fn(n, |i, j| if labels[i] == labels[j] { 0.0 } else { 1.0 });
            let sol = LayeredSolution::new(n, vec![layer; n - 1], SolutionMode::Binary);
            assert!(separate_triangle(&sol, 1e-7, 500).is_empty());
        }
    }

    #[test]
    fn spreading_finds_uniform_deficit() {
        let sol = uniform_solution(4, 0.2);
        let cuts = separate_spreading(&sol, 1e-7, 500);
        // t=1, center 0, S=V: sum 0.6 against |S| − t = 3
        let full = cuts
            .iter()
            .find(|c| matches!(c.tag, CutTag::Spreading { t: 1, center: 0, set } if set == 0b1111))
            .expect("full-set cut present");
        assert!((full.violation - 2.4).abs() < 1e-12);
    }

    #[test]
    fn all_ones_satisfies_spreading() {
        let sol = uniform_solution(5, 1.0);
        assert!(separate_spreading(&sol, 1e-7, 500).is_empty());
    }

    #[test]
    fn spreading_agrees_with_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..60 {
            let n = rng.gen_range(2..=7);
            let layers: Vec<PairTable> = (0..n - 1)
                .map(|_| PairTable::from_fn(n, |_, _| rng.gen::<f64>()))
                .collect();
            let sol = LayeredSolution::new(n, layers, SolutionMode::Fractional);
            let fast = separate_spreading(&sol, 1e-7, usize::MAX);
            for t in 1..n {
                let brute = oracle::brute_spreading(&sol, t, 1e-7, 10).unwrap();
                let fast_t = fast
                    .iter()
                    .any(|c| matches!(c.tag, CutTag::Spreading { t: ct, .. } if ct == t));
                assert_eq!(
                    fast_t,
                    !brute.is_empty(),
                    "prefix separation must find a violation iff one exists (t={t}, n={n})"
                );
            }
        }
    }

    #[test]
    fn two_point_instance_is_forced_to_one() {
        let kappa = SimilarityMatrix::constant(2, 2.5);
        let out = solve_relaxation(&kappa, &CostScaler::Linear, 1e-7).unwrap();
        assert!((out.solution.get(1, 0, 1) - 1.0).abs() < 1e-7);
        assert!((out.opt_value - 2.5).abs() < 1e-7);
    }

    #[test]
    fn zero_similarity_costs_nothing() {
        let kappa = SimilarityMatrix::constant(4, 0.0);
        let out = solve_relaxation(&kappa, &CostScaler::Linear, 1e-7).unwrap();
        assert!(out.opt_value.abs() < 1e-9);
    }

    #[test]
    fn relaxation_lower_bounds_the_exact_optimum() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for n in [5, 6] {
            for f in [CostScaler::Linear, CostScaler::Quadratic] {
                let kappa = SimilarityMatrix::from_fn(n, |_, _| rng.gen::<f64>()).unwrap();
                let out = solve_relaxation(&kappa, &f, 1e-7).unwrap();
                let (tree, _) = oracle::exact_optimum(&kappa, &f, 8).unwrap();
                let d = crate::tree::induced_ultrametric(&tree);
                let weighted: f64 = d
                    .iter()
                    .map(|(i, j, v)| kappa.get(i, j) * f.eval(v as usize))
                    .sum();
                assert!(
                    out.opt_value <= weighted + 1e-6,
                    "n={n} f={f}: LP {} > tree bound {}",
                    out.opt_value,
                    weighted
                );
            }
        }
    }

    #[test]
    fn solution_keeps_large_sets_spread() {
        // |S| > (1+ε)t forces max_{j∈S} d_t(center, j) > ε/(1+ε)
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let kappa = SimilarityMatrix::from_fn(6, |_, _| 0.2 + rng.gen::<f64>()).unwrap();
        let out = solve_relaxation(&kappa, &CostScaler::Linear, 1e-7).unwrap();
        let eps = 0.5;
        for _ in 0..200 {
            let t = rng.gen_range(1..=5);
            let want = ((1.0 + eps) * t as f64).floor() as usize + 1;
            if want > 6 {
                continue;
            }
            let mut members: Vec<usize> = (0..6).collect();
            for i in (1..members.len()).rev() {
                members.swap(i, rng.gen_range(0..=i));
            }
            members.truncate(want);
            let center = members[0];
            let max = members
                .iter()
                .map(|&j| out.solution.get(t, center, j))
                .fold(0.0, f64::max);
            assert!(
                max > eps / (1.0 + eps) - 1e-6,
                "set of {want} at layer {t} with max {max}"
            );
        }
    }

    #[test]
    fn opt_value_weakly_decreases_with_tighter_tolerance() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let kappa = SimilarityMatrix::from_fn(5, |_, _| rng.gen::<f64>()).unwrap();
        let loose = solve_relaxation(&kappa, &CostScaler::Linear, 1e-3).unwrap();
        let tight = solve_relaxation(&kappa, &CostScaler::Linear, 1e-8).unwrap();
        assert!(tight.opt_value >= loose.opt_value - 1e-6);
    }
}
