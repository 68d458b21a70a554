//! Bounded-variable revised simplex with incremental row addition.
//!
//! Cold solves run primal simplex (a composite phase 1 drives out primal
//! infeasibility, then phase 2 optimizes). After appending rows to a solved
//! program the dual simplex restores primal feasibility from the previous
//! basis, which is exactly the warm-start pattern cutting-plane loops need.
//!
//! The basis is kept as a dense LU factorization refreshed every
//! [`REFACTOR_EVERY`] pivots, with product-form eta updates in between.

use thiserror::Error;

/// Pivot-element tolerance.
pub const PIVOT_TOL: f64 = 1e-9;
/// Dual feasibility: reduced costs within this of zero count as zero.
pub const DUAL_TOL: f64 = 1e-7;
/// Primal feasibility tolerance.
pub const FEAS_TOL: f64 = 1e-7;
/// Pivots without objective improvement before Bland's rule engages.
pub const BLAND_STALL: usize = 50;
/// Basis refactorization cadence.
pub const REFACTOR_EVERY: usize = 100;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Sense {
    Le,
    Ge,
    Eq,
}

#[derive(Clone, Debug)]
pub struct Row {
    /// Sparse coefficients, sorted by column index.
    pub coeffs: Vec<(usize, f64)>,
    pub sense: Sense,
    pub rhs: f64,
}

impl Row {
    pub fn new(mut coeffs: Vec<(usize, f64)>, sense: Sense, rhs: f64) -> Self {
        coeffs.sort_by_key(|&(c, _)| c);
        Row { coeffs, sense, rhs }
    }

    pub fn dot(&self, x: &[f64]) -> f64 {
        self.coeffs.iter().map(|&(c, v)| v * x[c]).sum()
    }

    /// Signed violation of the row at `x`; positive means violated.
    pub fn violation(&self, x: &[f64]) -> f64 {
        let lhs = self.dot(x);
        match self.sense {
            Sense::Le => lhs - self.rhs,
            Sense::Ge => self.rhs - lhs,
            Sense::Eq => (lhs - self.rhs).abs(),
        }
    }
}

/// A bounded-variable linear program, minimized.
#[derive(Clone, Debug, Default)]
pub struct LinearProgram {
    pub ncols: usize,
    pub objective: Vec<f64>,
    pub rows: Vec<Row>,
    /// Per-variable `[lo, hi]`; infinities allowed.
    pub bounds: Vec<(f64, f64)>,
}

#[derive(Debug, Error, PartialEq)]
pub enum LpFormatError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

impl LinearProgram {
    pub fn new(objective: Vec<f64>, bounds: Vec<(f64, f64)>) -> Self {
        assert_eq!(objective.len(), bounds.len());
        LinearProgram {
            ncols: objective.len(),
            objective,
            rows: Vec::new(),
            bounds,
        }
    }

    pub fn push_row(&mut self, row: Row) {
        self.rows.push(row);
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.objective.len() != self.ncols || self.bounds.len() != self.ncols {
            return Err("objective/bounds length mismatch".into());
        }
        for (i, &(lo, hi)) in self.bounds.iter().enumerate() {
            if lo > hi || lo.is_nan() || hi.is_nan() {
                return Err(format!("variable {i} has bad bounds [{lo}, {hi}]"));
            }
        }
        for (r, row) in self.rows.iter().enumerate() {
            if !row.rhs.is_finite() {
                return Err(format!("row {r} has non-finite rhs"));
            }
            for &(c, v) in &row.coeffs {
                if c >= self.ncols || !v.is_finite() {
                    return Err(format!("row {r} has bad coefficient {c}:{v}"));
                }
            }
        }
        Ok(())
    }

    /// Minimal textual form for debugging exchanges.
    pub fn to_text(&self) -> String {
        fn num(v: f64) -> String {
            if v == f64::INFINITY {
                "inf".into()
            } else if v == f64::NEG_INFINITY {
                "-inf".into()
            } else {
                format!("{v:?}")
            }
        }
        let mut out = String::new();
        out.push_str(&format!("vars {}\n", self.ncols));
        out.push_str("min");
        for c in &self.objective {
            out.push_str(&format!(" {}", num(*c)));
        }
        out.push('\n');
        for (i, &(lo, hi)) in self.bounds.iter().enumerate() {
            out.push_str(&format!("bound {} {} {}\n", i, num(lo), num(hi)));
        }
        for row in &self.rows {
            let sense = match row.sense {
                Sense::Le => "<=",
                Sense::Ge => ">=",
                Sense::Eq => "=",
            };
            out.push_str(&format!("row {} {}", sense, num(row.rhs)));
            for &(c, v) in &row.coeffs {
                out.push_str(&format!(" {}:{}", c, num(v)));
            }
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, LpFormatError> {
        fn num(tok: &str, line: usize) -> Result<f64, LpFormatError> {
            match tok {
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                _ => tok.parse().map_err(|_| LpFormatError::Parse {
                    line,
                    msg: format!("bad number {tok:?}"),
                }),
            }
        }
        let mut lp = LinearProgram::default();
        for (ix, raw) in text.lines().enumerate() {
            let line = ix + 1;
            let mut toks = raw.split_whitespace();
            let Some(head) = toks.next() else { continue };
            match head {
                "vars" => {
                    let n: usize = toks
                        .next()
                        .and_then(|t| t.parse().ok())
                        .ok_or_else(|| LpFormatError::Parse {
                            line,
                            msg: "vars needs a count".into(),
                        })?;
                    lp.ncols = n;
                    lp.objective = vec![0.0; n];
                    lp.bounds = vec![(f64::NEG_INFINITY, f64::INFINITY); n];
                }
                "min" => {
                    for (j, tok) in toks.enumerate() {
                        if j >= lp.ncols {
                            return Err(LpFormatError::Parse {
                                line,
                                msg: "too many objective coefficients".into(),
                            });
                        }
                        lp.objective[j] = num(tok, line)?;
                    }
                }
                "bound" => {
                    let j: usize = toks
                        .next()
                        .and_then(|t| t.parse().ok())
                        .ok_or_else(|| LpFormatError::Parse {
                            line,
                            msg: "bound needs an index".into(),
                        })?;
                    let lo = num(
                        toks.next().ok_or_else(|| LpFormatError::Parse {
                            line,
                            msg: "bound needs lo and hi".into(),
                        })?,
                        line,
                    )?;
                    let hi = num(
                        toks.next().ok_or_else(|| LpFormatError::Parse {
                            line,
                            msg: "bound needs lo and hi".into(),
                        })?,
                        line,
                    )?;
                    if j >= lp.ncols {
                        return Err(LpFormatError::Parse {
                            line,
                            msg: format!("bound index {j} out of range"),
                        });
                    }
                    lp.bounds[j] = (lo, hi);
                }
                "row" => {
                    let sense = match toks.next() {
                        Some("<=") => Sense::Le,
                        Some(">=") => Sense::Ge,
                        Some("=") => Sense::Eq,
                        other => {
                            return Err(LpFormatError::Parse {
                                line,
                                msg: format!("bad sense {other:?}"),
                            })
                        }
                    };
                    let rhs = num(
                        toks.next().ok_or_else(|| LpFormatError::Parse {
                            line,
                            msg: "row needs a rhs".into(),
                        })?,
                        line,
                    )?;
                    let mut coeffs = Vec::new();
                    for tok in toks {
                        let (c, v) = tok.split_once(':').ok_or_else(|| LpFormatError::Parse {
                            line,
                            msg: format!("bad coefficient {tok:?}"),
                        })?;
                        let c: usize = c.parse().map_err(|_| LpFormatError::Parse {
                            line,
                            msg: format!("bad column {c:?}"),
                        })?;
                        coeffs.push((c, num(v, line)?));
                    }
                    lp.push_row(Row::new(coeffs, sense, rhs));
                }
                other => {
                    return Err(LpFormatError::Parse {
                        line,
                        msg: format!("unknown directive {other:?}"),
                    })
                }
            }
        }
        Ok(lp)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
    IterationLimit,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolveLimits {
    pub max_pivots: usize,
    pub tol: f64,
}

impl Default for SolveLimits {
    fn default() -> Self {
        SolveLimits {
            max_pivots: 50_000,
            tol: FEAS_TOL,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum VarState {
    Basic(usize),
    AtLower,
    AtUpper,
    Free,
}

/// Basis snapshot carried inside an outcome so a later `resolve_with_rows`
/// can warm start.
#[derive(Clone, Debug)]
pub struct BasisSnapshot {
    var_state: Vec<VarState>,
    nrows: usize,
}

#[derive(Clone, Debug)]
pub struct LpOutcome {
    pub status: LpStatus,
    /// Structural variable values.
    pub x: Vec<f64>,
    pub obj: f64,
    /// Row multipliers at the final basis.
    pub duals: Vec<f64>,
    pub pivots: usize,
    basis: Option<BasisSnapshot>,
}

impl LpOutcome {
    fn failed(status: LpStatus, ncols: usize, nrows: usize) -> Self {
        LpOutcome {
            status,
            x: vec![0.0; ncols],
            obj: f64::NAN,
            duals: vec![0.0; nrows],
            pivots: 0,
            basis: None,
        }
    }
}

/// Largest primal-feasibility and dual-sign violation of an outcome, using
/// true costs; both should sit within tolerance for a certified optimum.
pub fn kkt_residuals(lp: &LinearProgram, out: &LpOutcome) -> (f64, f64) {
    let mut primal: f64 = 0.0;
    for row in &lp.rows {
        primal = primal.max(row.violation(&out.x));
    }
    for (j, &x) in out.x.iter().enumerate() {
        let (lo, hi) = lp.bounds[j];
        primal = primal.max(lo - x).max(x - hi);
    }
    let mut dual: f64 = 0.0;
    let mut reduced = lp.objective.clone();
    for (r, row) in lp.rows.iter().enumerate() {
        let y = out.duals[r];
        if y != 0.0 {
            for &(c, v) in &row.coeffs {
                reduced[c] -= y * v;
            }
        }
    }
    for (j, &d) in reduced.iter().enumerate() {
        let (lo, hi) = lp.bounds[j];
        let x = out.x[j];
        let scale = 1.0 + lp.objective[j].abs();
        if (x - lo).abs() < 1e-7 {
            dual = dual.max(-d / scale);
        } else if (hi - x).abs() < 1e-7 {
            dual = dual.max(d / scale);
        } else {
            dual = dual.max(d.abs() / scale);
        }
    }
    (primal, dual)
}

/// Cold solve: primal simplex with composite phase 1.
pub fn solve(lp: &LinearProgram, limits: &SolveLimits) -> LpOutcome {
    if let Err(msg) = lp.validate() {
        panic!("malformed linear program: {msg}");
    }
    if lp.bounds.iter().any(|&(lo, hi)| lo > hi) {
        return LpOutcome::failed(LpStatus::Infeasible, lp.ncols, lp.rows.len());
    }
    let mut solver = Solver::new(lp);
    solver.perturb_costs();
    solver.init_cold();
    solver.run_primal(limits)
}

/// Warm re-solve after appending `new_rows` rows to `lp`.
///
/// `prev` must be an optimal outcome for `lp` without its last `new_rows`
/// rows. The previous basis stays dual feasible, so the dual simplex walks
/// back to optimality.
pub fn resolve_with_rows(
    prev: &LpOutcome,
    lp: &LinearProgram,
    new_rows: usize,
    limits: &SolveLimits,
) -> LpOutcome {
    let Some(snapshot) = prev.basis.as_ref() else {
        return solve(lp, limits);
    };
    assert_eq!(
        snapshot.nrows + new_rows,
        lp.rows.len(),
        "resolve_with_rows: row count mismatch"
    );
    if prev.status != LpStatus::Optimal {
        return solve(lp, limits);
    }
    let mut solver = Solver::new(lp);
    solver.perturb_costs();
    if !solver.init_from_snapshot(snapshot) {
        return solve(lp, limits);
    }
    let out = solver.run_dual(limits);
    match out.status {
        // the dual pass restores primal feasibility; a primal phase-2 sweep
        // re-certifies optimality in case dual feasibility eroded
        LpStatus::Optimal => {
            let cleaned = solver.run_primal(limits);
            if cleaned.status == LpStatus::IterationLimit {
                return solve(lp, limits);
            }
            cleaned
        }
        LpStatus::IterationLimit => solve(lp, limits), // numerical distress
        _ => out,
    }
}

struct Solver<'a> {
    lp: &'a LinearProgram,
    m: usize,
    nvars: usize, // structurals then slacks
    obj: Vec<f64>,
    lo: Vec<f64>,
    up: Vec<f64>,
    cols: Vec<Vec<(usize, f64)>>, // structural columns only
    var_state: Vec<VarState>,
    basic: Vec<usize>,
    xb: Vec<f64>,
    lu: SparseLu,
    etas: Vec<Eta>,
    eta_nnz: usize,
    pivots_since_refactor: usize,
    total_pivots: usize,
}

/// Product-form update: basis column `row` was replaced; `w = B⁻¹·a_enter`.
struct Eta {
    row: usize,
    diag: f64,
    /// Off-pivot nonzeros of `w`.
    w: Vec<(usize, f64)>,
}

impl<'a> Solver<'a> {
    fn new(lp: &'a LinearProgram) -> Self {
        let m = lp.rows.len();
        let n = lp.ncols;
        let nvars = n + m;
        let mut obj = lp.objective.clone();
        obj.resize(nvars, 0.0);
        let mut lo = Vec::with_capacity(nvars);
        let mut up = Vec::with_capacity(nvars);
        for &(l, h) in &lp.bounds {
            lo.push(l);
            up.push(h);
        }
        for row in &lp.rows {
            // a·x + s = rhs
            match row.sense {
                Sense::Le => {
                    lo.push(0.0);
                    up.push(f64::INFINITY);
                }
                Sense::Ge => {
                    lo.push(f64::NEG_INFINITY);
                    up.push(0.0);
                }
                Sense::Eq => {
                    lo.push(0.0);
                    up.push(0.0);
                }
            }
        }
        let mut cols: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
        for (r, row) in lp.rows.iter().enumerate() {
            for &(c, v) in &row.coeffs {
                cols[c].push((r, v));
            }
        }
        Solver {
            lp,
            m,
            nvars,
            obj,
            lo,
            up,
            cols,
            var_state: vec![VarState::AtLower; nvars],
            basic: Vec::new(),
            xb: Vec::new(),
            lu: SparseLu::identity(m),
            etas: Vec::new(),
            eta_nnz: 0,
            pivots_since_refactor: 0,
            total_pivots: 0,
        }
    }

    /// Deterministic sub-tolerance cost jitter; massively degenerate bases
    /// (this problem family is full of symmetry) otherwise stall the ratio
    /// tests on exact ties. The reported objective always uses true costs.
    fn perturb_costs(&mut self) {
        let mut state = 0x9e3779b97f4a7c15u64;
        for (j, c) in self.obj.iter_mut().enumerate() {
            state = state
                .wrapping_add(j as u64)
                .wrapping_mul(0xbf58476d1ce4e5b9);
            state ^= state >> 31;
            let unit = (state >> 11) as f64 / (1u64 << 53) as f64;
            *c += 3e-10 * (1.0 + c.abs()) * unit;
        }
    }

    fn init_cold(&mut self) {
        for j in 0..self.lp.ncols {
            self.var_state[j] = if self.lo[j].is_finite() {
                VarState::AtLower
            } else if self.up[j].is_finite() {
                VarState::AtUpper
            } else {
                VarState::Free
            };
        }
        self.basic = (self.lp.ncols..self.nvars).collect();
        for (r, &k) in self.basic.clone().iter().enumerate() {
            self.var_state[k] = VarState::Basic(r);
        }
        self.refactorize();
    }

    /// Rebuilds solver state from a snapshot taken before `new_rows` rows
    /// were appended; the new slacks enter the basis. Returns false if the
    /// snapshot is unusable.
    fn init_from_snapshot(&mut self, snap: &BasisSnapshot) -> bool {
        let old_nvars = self.lp.ncols + snap.nrows;
        if snap.var_state.len() != old_nvars {
            return false;
        }
        let mut rows_taken = vec![false; self.m];
        self.basic = vec![usize::MAX; self.m];
        for (v, &st) in snap.var_state.iter().enumerate() {
            self.var_state[v] = st;
            if let VarState::Basic(r) = st {
                if r >= snap.nrows || rows_taken[r] {
                    return false;
                }
                rows_taken[r] = true;
                self.basic[r] = v;
            }
        }
        for r in snap.nrows..self.m {
            let slack = self.lp.ncols + r;
            self.basic[r] = slack;
            self.var_state[slack] = VarState::Basic(r);
        }
        if self.basic.iter().any(|&v| v == usize::MAX) {
            return false;
        }
        self.refactorize();
        true
    }

    #[inline]
    fn nonbasic_value(&self, v: usize) -> f64 {
        match self.var_state[v] {
            VarState::AtLower => self.lo[v],
            VarState::AtUpper => self.up[v],
            VarState::Free => 0.0,
            VarState::Basic(r) => self.xb[r],
        }
    }

    /// Column `v` of the constraint matrix as a dense vector.
    fn dense_column(&self, v: usize, out: &mut [f64]) {
        out.fill(0.0);
        if v < self.lp.ncols {
            for &(r, coef) in &self.cols[v] {
                out[r] = coef;
            }
        } else {
            out[v - self.lp.ncols] = 1.0;
        }
    }

    fn refactorize(&mut self) {
        let m = self.m;
        let columns: Vec<Vec<(usize, f64)>> = self
            .basic
            .iter()
            .map(|&v| {
                if v < self.lp.ncols {
                    self.cols[v].clone()
                } else {
                    vec![(v - self.lp.ncols, 1.0)]
                }
            })
            .collect();
        self.lu = SparseLu::factorize(m, &columns);
        if std::env::var_os("ULTRACLUST_LU_STATS").is_some() {
            let input: usize = columns.iter().map(|c| c.len()).sum();
            eprintln!("[lu] m={} input_nnz={} factor_nnz={}", m, input, self.lu.nnz());
        }
        self.etas.clear();
        self.eta_nnz = 0;
        self.pivots_since_refactor = 0;
        self.recompute_xb();
    }

    fn recompute_xb(&mut self) {
        let m = self.m;
        let mut rhs = vec![0.0; m];
        for (r, row) in self.lp.rows.iter().enumerate() {
            rhs[r] = row.rhs;
        }
        for v in 0..self.nvars {
            if matches!(self.var_state[v], VarState::Basic(_)) {
                continue;
            }
            let val = self.nonbasic_value(v);
            if val == 0.0 {
                continue;
            }
            if v < self.lp.ncols {
                for &(r, coef) in &self.cols[v] {
                    rhs[r] -= coef * val;
                }
            } else {
                rhs[v - self.lp.ncols] -= val;
            }
        }
        self.ftran(&mut rhs);
        self.xb = rhs;
    }

    fn ftran(&self, v: &mut [f64]) {
        self.lu.solve(v);
        for eta in &self.etas {
            let t = v[eta.row] / eta.diag;
            if t != 0.0 {
                for &(i, wi) in &eta.w {
                    v[i] -= wi * t;
                }
            }
            v[eta.row] = t;
        }
    }

    fn btran(&self, v: &mut [f64]) {
        for eta in self.etas.iter().rev() {
            let mut dot = 0.0;
            for &(i, wi) in &eta.w {
                dot += wi * v[i];
            }
            v[eta.row] = (v[eta.row] - dot) / eta.diag;
        }
        self.lu.solve_transposed(v);
    }

    /// y such that yᵀB = c_B.
    fn duals_for(&self, cost: impl Fn(usize) -> f64) -> Vec<f64> {
        let mut y: Vec<f64> = self.basic.iter().map(|&v| cost(v)).collect();
        self.btran(&mut y);
        y
    }

    fn reduced_cost(&self, y: &[f64], v: usize, cost: impl Fn(usize) -> f64) -> f64 {
        let mut d = cost(v);
        if v < self.lp.ncols {
            for &(r, coef) in &self.cols[v] {
                d -= y[r] * coef;
            }
        } else {
            d -= y[v - self.lp.ncols];
        }
        d
    }

    fn structural_x(&self) -> Vec<f64> {
        (0..self.lp.ncols).map(|v| self.nonbasic_value(v)).collect()
    }

    fn objective_value(&self) -> f64 {
        (0..self.lp.ncols)
            .map(|v| self.lp.objective[v] * self.nonbasic_value(v))
            .sum()
    }

    fn infeasibility(&self) -> f64 {
        let mut total = 0.0;
        for (r, &v) in self.basic.iter().enumerate() {
            let x = self.xb[r];
            if x < self.lo[v] {
                total += self.lo[v] - x;
            } else if x > self.up[v] {
                total += x - self.up[v];
            }
        }
        total
    }

    fn outcome(&mut self, status: LpStatus) -> LpOutcome {
        let y = self.duals_for(|v| self.obj[v]);
        LpOutcome {
            status,
            x: self.structural_x(),
            obj: self.objective_value(),
            duals: y,
            pivots: self.total_pivots,
            basis: Some(BasisSnapshot {
                var_state: self.var_state.clone(),
                nrows: self.m,
            }),
        }
    }

    // ---- primal simplex ----

    fn run_primal(&mut self, limits: &SolveLimits) -> LpOutcome {
        let ftol = limits.tol;
        // phase 1: minimize total bound violation of basic variables
        let mut stall = 0usize;
        let mut best_inf = f64::INFINITY;
        while self.infeasibility() > ftol {
            if self.total_pivots >= limits.max_pivots {
                return self.outcome(LpStatus::IterationLimit);
            }
            let phase1_cost = |slf: &Solver, v: usize| -> f64 {
                if let VarState::Basic(r) = slf.var_state[v] {
                    if slf.xb[r] < slf.lo[v] - ftol {
                        return -1.0;
                    }
                    if slf.xb[r] > slf.up[v] + ftol {
                        return 1.0;
                    }
                }
                0.0
            };
            let y = self.duals_for(|v| phase1_cost(self, v));
            let bland = stall >= BLAND_STALL;
            let Some((enter, dir)) = self.price(&y, |v| phase1_cost(self, v), bland) else {
                // infeasibility is minimal and still positive
                return self.outcome(LpStatus::Infeasible);
            };
            if !self.primal_step(enter, dir, ftol, bland, true) {
                return self.outcome(LpStatus::Infeasible);
            }
            let inf = self.infeasibility();
            if inf < best_inf - 1e-12 {
                best_inf = inf;
                stall = 0;
            } else {
                stall += 1;
            }
        }

        // phase 2
        let mut stall = 0usize;
        let mut best_obj = f64::INFINITY;
        loop {
            if self.total_pivots >= limits.max_pivots {
                return self.outcome(LpStatus::IterationLimit);
            }
            if self.total_pivots % 20000 == 19999 && std::env::var_os("ULTRACLUST_TRACE").is_some() {
                eprintln!("[p2] pivots={} obj={:.6} stall={stall}", self.total_pivots, self.objective_value());
            }
            let y = self.duals_for(|v| self.obj[v]);
            let bland = stall >= BLAND_STALL;
            let Some((enter, dir)) = self.price(&y, |v| self.obj[v], bland) else {
                return self.outcome(LpStatus::Optimal);
            };
            if !self.primal_step(enter, dir, ftol, bland, false) {
                return self.outcome(LpStatus::Unbounded);
            }
            let obj = self.objective_value();
            if obj < best_obj - 1e-12 * (1.0 + best_obj.abs()) {
                best_obj = obj;
                stall = 0;
            } else {
                stall += 1;
            }
        }
    }

    /// Entering variable and its movement direction, or None at optimality.
    fn price(
        &self,
        y: &[f64],
        cost: impl Fn(usize) -> f64,
        bland: bool,
    ) -> Option<(usize, f64)> {
        let mut best: Option<(usize, f64, f64)> = None; // (var, dir, score)
        for v in 0..self.nvars {
            let (dir, eligible) = match self.var_state[v] {
                VarState::Basic(_) => continue,
                VarState::AtLower => (1.0, self.up[v] > self.lo[v]),
                VarState::AtUpper => (-1.0, self.up[v] > self.lo[v]),
                VarState::Free => (0.0, true),
            };
            if !eligible {
                continue;
            }
            let d = self.reduced_cost(y, v, &cost);
            let (dir, score) = if dir == 0.0 {
                (if d > 0.0 { -1.0 } else { 1.0 }, d.abs())
            } else if dir > 0.0 {
                (1.0, -d)
            } else {
                (-1.0, d)
            };
            if score > DUAL_TOL {
                if bland {
                    return Some((v, dir));
                }
                if best.map_or(true, |(_, _, s)| score > s) {
                    best = Some((v, dir, score));
                }
            }
        }
        best.map(|(v, d, _)| (v, d))
    }

    /// Moves `enter` in direction `dir`. Returns false when the step is
    /// unbounded (phase 2) or cannot be blocked (phase 1).
    fn primal_step(
        &mut self,
        enter: usize,
        dir: f64,
        ftol: f64,
        bland: bool,
        phase1: bool,
    ) -> bool {
        let m = self.m;
        let mut w = vec![0.0; m];
        self.dense_column(enter, &mut w);
        self.ftran(&mut w);

        // entering variable's own range
        let own_limit = if self.lo[enter].is_finite() && self.up[enter].is_finite() {
            self.up[enter] - self.lo[enter]
        } else {
            f64::INFINITY
        };

        let mut theta = own_limit;
        let mut leave: Option<(usize, f64)> = None; // (row, bound at which it leaves)
        for r in 0..m {
            let delta = -dir * w[r]; // rate of change of basic r
            if delta.abs() <= PIVOT_TOL {
                continue;
            }
            let k = self.basic[r];
            let v = self.xb[r];
            let (blocks_at, ratio) = if phase1 && v < self.lo[k] - ftol {
                if delta > 0.0 {
                    (self.lo[k], (self.lo[k] - v) / delta)
                } else {
                    continue; // moving deeper below; no block
                }
            } else if phase1 && v > self.up[k] + ftol {
                if delta < 0.0 {
                    (self.up[k], (self.up[k] - v) / delta)
                } else {
                    continue;
                }
            } else if delta > 0.0 {
                if !self.up[k].is_finite() {
                    continue;
                }
                (self.up[k], ((self.up[k] - v) / delta).max(0.0))
            } else {
                if !self.lo[k].is_finite() {
                    continue;
                }
                (self.lo[k], ((self.lo[k] - v) / delta).max(0.0))
            };
            let better = match leave {
                None => ratio < theta,
                Some((cur, _)) => {
                    ratio < theta - PIVOT_TOL
                        || (ratio < theta + PIVOT_TOL
                            && if bland {
                                self.basic[r] < self.basic[cur]
                            } else {
                                w[r].abs() > w[cur].abs()
                            })
                }
            };
            if better {
                theta = ratio.max(0.0);
                leave = Some((r, blocks_at));
            }
        }

        match leave {
            None => {
                if own_limit.is_finite() {
                    // bound flip: entering crosses to its other bound
                    self.apply_step(enter, dir, own_limit, &w);
                    self.var_state[enter] = match self.var_state[enter] {
                        VarState::AtLower => VarState::AtUpper,
                        VarState::AtUpper => VarState::AtLower,
                        s => s,
                    };
                    self.total_pivots += 1;
                    true
                } else {
                    false // unbounded direction
                }
            }
            Some((r, bound)) => {
                if own_limit < theta {
                    self.apply_step(enter, dir, own_limit, &w);
                    self.var_state[enter] = match self.var_state[enter] {
                        VarState::AtLower => VarState::AtUpper,
                        VarState::AtUpper => VarState::AtLower,
                        s => s,
                    };
                    self.total_pivots += 1;
                    return true;
                }
                let leaving = self.basic[r];
                let enter_val = self.nonbasic_value(enter) + dir * theta;
                self.apply_step(enter, dir, theta, &w);
                self.var_state[leaving] = if bound == self.lo[leaving] {
                    VarState::AtLower
                } else {
                    VarState::AtUpper
                };
                self.basic[r] = enter;
                self.var_state[enter] = VarState::Basic(r);
                self.xb[r] = enter_val;
                self.push_eta(r, w);
                true
            }
        }
    }

    /// Advances the entering variable by `theta`, updating basic values.
    fn apply_step(&mut self, _enter: usize, dir: f64, theta: f64, w: &[f64]) {
        if theta != 0.0 {
            for r in 0..self.m {
                self.xb[r] -= dir * theta * w[r];
            }
        }
    }

    fn push_eta(&mut self, row: usize, w: Vec<f64>) {
        self.total_pivots += 1;
        self.pivots_since_refactor += 1;
        let diag = w[row];
        let sparse: Vec<(usize, f64)> = w
            .iter()
            .enumerate()
            .filter(|&(i, &v)| i != row && v != 0.0)
            .map(|(i, &v)| (i, v))
            .collect();
        self.eta_nnz += sparse.len() + 1;
        self.etas.push(Eta {
            row,
            diag,
            w: sparse,
        });
        // cap both the pivot count and the accumulated eta mass, whichever
        // makes transformed solves expensive first
        if self.pivots_since_refactor >= REFACTOR_EVERY
            || self.eta_nnz > 4 * (self.lu.nnz() + self.m)
        {
            self.refactorize();
        }
    }

    // ---- dual simplex ----

    fn run_dual(&mut self, limits: &SolveLimits) -> LpOutcome {
        let ftol = limits.tol;
        let mut stall = 0usize;
        let mut best_inf = f64::INFINITY;
        loop {
            if self.total_pivots >= limits.max_pivots {
                return self.outcome(LpStatus::IterationLimit);
            }
            // leaving: most violated basic
            let mut leave: Option<(usize, f64, bool)> = None; // (row, violation, below)
            for r in 0..self.m {
                let k = self.basic[r];
                let v = self.xb[r];
                if v < self.lo[k] - ftol {
                    let viol = self.lo[k] - v;
                    if leave.map_or(true, |(_, best, _)| viol > best) {
                        leave = Some((r, viol, true));
                    }
                } else if v > self.up[k] + ftol {
                    let viol = v - self.up[k];
                    if leave.map_or(true, |(_, best, _)| viol > best) {
                        leave = Some((r, viol, false));
                    }
                }
            }
            let Some((r, inf, below)) = leave else {
                return self.outcome(LpStatus::Optimal);
            };
            if self.total_pivots % 20000 == 19999 && std::env::var_os("ULTRACLUST_TRACE").is_some() {
                eprintln!("[dual] pivots={} inf={inf:.3e} obj={:.6} stall={stall}", self.total_pivots, self.objective_value());
            }
            let bland = stall >= BLAND_STALL;
            if !self.dual_step(r, below, bland) {
                return self.outcome(LpStatus::Infeasible);
            }
            if inf < best_inf - 1e-12 {
                best_inf = inf;
                stall = 0;
            } else {
                stall += 1;
            }
        }
    }

    fn dual_step(&mut self, r: usize, below: bool, bland: bool) -> bool {
        let m = self.m;
        // row r of B⁻¹
        let mut rho = vec![0.0; m];
        rho[r] = 1.0;
        self.btran(&mut rho);

        let y = self.duals_for(|v| self.obj[v]);

        // eligible entering candidates: moving them must push the leaving
        // basic toward its violated bound
        let mut candidates: Vec<(usize, f64, f64)> = Vec::new(); // (var, alpha, ratio)
        for v in 0..self.nvars {
            let movable_up = match self.var_state[v] {
                VarState::Basic(_) => continue,
                VarState::AtLower => true,
                VarState::AtUpper => false,
                VarState::Free => true,
            };
            if self.up[v] <= self.lo[v] {
                continue; // fixed variable cannot enter
            }
            let mut alpha = 0.0;
            if v < self.lp.ncols {
                for &(rr, coef) in &self.cols[v] {
                    alpha += rho[rr] * coef;
                }
            } else {
                alpha = rho[v - self.lp.ncols];
            }
            // pivoting on a tiny alpha wrecks the basis conditioning
            if alpha.abs() <= 1e-7 {
                continue;
            }
            // x_B[r] changes by -alpha * Δv
            let eligible = if below {
                (movable_up && alpha < 0.0) || (!movable_up && alpha > 0.0)
            } else {
                (movable_up && alpha > 0.0) || (!movable_up && alpha < 0.0)
            };
            let free_both_ways = matches!(self.var_state[v], VarState::Free);
            if !eligible && !free_both_ways {
                continue;
            }
            let d = self.reduced_cost(&y, v, |u| self.obj[u]);
            candidates.push((v, alpha, (d / alpha).abs()));
        }
        // two-pass ratio test: find the strict minimum ratio, then allow a
        // small dual slack and take the most stable pivot in that window
        let Some(min_ratio) = candidates
            .iter()
            .map(|&(_, _, r)| r)
            .min_by(f64::total_cmp)
        else {
            return false; // no entering candidate: primal infeasible
        };
        let (enter, alpha) = candidates
            .iter()
            .filter(|&&(_, a, r)| r * a.abs() <= min_ratio * a.abs() + 1e-7)
            .map(|&(v, a, _)| (v, a))
            .max_by(|&(va, aa), &(vb, ab)| {
                if bland {
                    vb.cmp(&va) // smallest index wins under Bland
                } else {
                    aa.abs().total_cmp(&ab.abs())
                }
            })
            .expect("window contains the minimum");

        let k = self.basic[r];
        let target = if below { self.lo[k] } else { self.up[k] };
        let delta_enter = (self.xb[r] - target) / alpha;

        let mut w = vec![0.0; m];
        self.dense_column(enter, &mut w);
        self.ftran(&mut w);

        let enter_val = self.nonbasic_value(enter) + delta_enter;
        for i in 0..m {
            self.xb[i] -= delta_enter * w[i];
        }
        self.var_state[k] = if below {
            VarState::AtLower
        } else {
            VarState::AtUpper
        };
        self.basic[r] = enter;
        self.var_state[enter] = VarState::Basic(r);
        self.xb[r] = enter_val;
        self.push_eta(r, w);
        true
    }
}

/// Sparse LU factorization with partial pivoting, left-looking with a
/// depth-first reach computation per column (Gilbert–Peierls).
///
/// `l_cols[k]` holds the below-pivot multipliers of column `k` keyed by
/// original row; `u_cols[k]` holds the above-diagonal entries keyed by pivot
/// column. Bases here are slack-heavy and very sparse, so the factors stay
/// close to the input size.
struct SparseLu {
    m: usize,
    l_cols: Vec<Vec<(usize, f64)>>,
    u_cols: Vec<Vec<(usize, f64)>>,
    u_diag: Vec<f64>,
    /// pivot column k -> original row hosting it
    pivot_row: Vec<usize>,
    /// original row -> pivot column
    row_pivot: Vec<usize>,
    /// processing position k -> original basis column
    col_order: Vec<usize>,
}

impl SparseLu {
    fn nnz(&self) -> usize {
        let l: usize = self.l_cols.iter().map(|c| c.len()).sum();
        let u: usize = self.u_cols.iter().map(|c| c.len()).sum();
        l + u + self.m
    }

    fn identity(m: usize) -> Self {
        SparseLu {
            m,
            l_cols: vec![Vec::new(); m],
            u_cols: vec![Vec::new(); m],
            u_diag: vec![1.0; m],
            pivot_row: (0..m).collect(),
            row_pivot: (0..m).collect(),
            col_order: (0..m).collect(),
        }
    }

    /// Processing order that fights fill-in: repeatedly peel columns with a
    /// single nonzero in still-open rows (unit slack columns all qualify, at
    /// zero fill), then the remaining kernel by ascending nonzero count.
    fn peeling_order(m: usize, columns: &[Vec<(usize, f64)>]) -> Vec<usize> {
        let mut row_cols: Vec<Vec<usize>> = vec![Vec::new(); m];
        for (k, col) in columns.iter().enumerate() {
            for &(r, _) in col {
                row_cols[r].push(k);
            }
        }
        let mut live_nnz: Vec<usize> = columns.iter().map(|c| c.len()).collect();
        let mut row_open = vec![true; m];
        let mut col_done = vec![false; m];
        let mut order = Vec::with_capacity(m);
        let mut queue: Vec<usize> = (0..m).filter(|&k| live_nnz[k] == 1).collect();
        while let Some(k) = queue.pop() {
            if col_done[k] || live_nnz[k] != 1 {
                continue;
            }
            let Some(&(r, _)) = columns[k].iter().find(|&&(r, _)| row_open[r]) else {
                continue;
            };
            col_done[k] = true;
            order.push(k);
            row_open[r] = false;
            for &c in &row_cols[r] {
                if !col_done[c] {
                    live_nnz[c] -= 1;
                    if live_nnz[c] == 1 {
                        queue.push(c);
                    }
                }
            }
        }
        let mut kernel: Vec<usize> = (0..m).filter(|&k| !col_done[k]).collect();
        kernel.sort_by_key(|&k| (live_nnz[k], k));
        order.extend(kernel);
        order
    }

    fn factorize(m: usize, columns: &[Vec<(usize, f64)>]) -> Self {
        let col_order = Self::peeling_order(m, columns);
        let mut lu = SparseLu {
            m,
            l_cols: vec![Vec::new(); m],
            u_cols: vec![Vec::new(); m],
            u_diag: vec![0.0; m],
            pivot_row: vec![usize::MAX; m],
            row_pivot: vec![usize::MAX; m],
            col_order,
        };
        let mut work = vec![0.0f64; m];
        let mut in_work = vec![false; m];
        let mut visited = vec![false; m];
        let mut touched: Vec<usize> = Vec::with_capacity(64);
        let mut order: Vec<usize> = Vec::with_capacity(64);
        let mut dfs: Vec<(usize, usize)> = Vec::new();

        for k in 0..m {
            for &(r, v) in &columns[lu.col_order[k]] {
                if !in_work[r] {
                    in_work[r] = true;
                    touched.push(r);
                }
                work[r] += v;
            }
            // pivot columns whose elimination can touch this column, in an
            // order where dependencies come first
            order.clear();
            let mut ti = 0;
            while ti < touched.len() {
                let j0 = lu.row_pivot[touched[ti]];
                ti += 1;
                if j0 == usize::MAX || visited[j0] {
                    continue;
                }
                visited[j0] = true;
                dfs.push((j0, 0));
                while let Some((j, mut next)) = dfs.pop() {
                    let mut descended = false;
                    while next < lu.l_cols[j].len() {
                        let (r, _) = lu.l_cols[j][next];
                        next += 1;
                        if !in_work[r] {
                            in_work[r] = true;
                            touched.push(r);
                        }
                        let c = lu.row_pivot[r];
                        if c != usize::MAX && !visited[c] {
                            visited[c] = true;
                            dfs.push((j, next));
                            dfs.push((c, 0));
                            descended = true;
                            break;
                        }
                    }
                    if !descended {
                        order.push(j); // postorder
                    }
                }
            }
            order.reverse();
            for &j in &order {
                visited[j] = false;
                let vj = work[lu.pivot_row[j]];
                if vj != 0.0 {
                    lu.u_cols[k].push((j, vj));
                    for &(r, lv) in &lu.l_cols[j] {
                        debug_assert!(in_work[r], "reach must cover fill");
                        work[r] -= lv * vj;
                    }
                }
            }
            // partial pivoting among rows not hosting a pivot yet
            let mut best_row = usize::MAX;
            let mut best = 0.0f64;
            for &r in &touched {
                if lu.row_pivot[r] == usize::MAX && work[r].abs() > best {
                    best = work[r].abs();
                    best_row = r;
                }
            }
            let (pr, diag) = if best_row == usize::MAX || best < 1e-12 {
                // singular at this column; park the pivot on a free row with
                // a tiny value so solves stay finite
                let free = (0..m)
                    .find(|&r| lu.row_pivot[r] == usize::MAX)
                    .expect("m pivots for m columns");
                let sign = if work[free] < 0.0 { -1.0 } else { 1.0 };
                (free, sign * 1e-12)
            } else {
                (best_row, work[best_row])
            };
            lu.pivot_row[k] = pr;
            lu.row_pivot[pr] = k;
            lu.u_diag[k] = diag;
            for &r in &touched {
                if lu.row_pivot[r] == usize::MAX && work[r] != 0.0 {
                    lu.l_cols[k].push((r, work[r] / diag));
                }
            }
            for &r in &touched {
                work[r] = 0.0;
                in_work[r] = false;
            }
            touched.clear();
        }
        lu
    }

    /// Solves `B x = b` in place; on return `b[k]` is the coefficient of
    /// basis column `k`.
    fn solve(&self, b: &mut [f64]) {
        let m = self.m;
        if m == 0 {
            return;
        }
        for k in 0..m {
            let yk = b[self.pivot_row[k]];
            if yk != 0.0 {
                for &(r, lv) in &self.l_cols[k] {
                    b[r] -= lv * yk;
                }
            }
        }
        let mut x = vec![0.0f64; m];
        for k in 0..m {
            x[k] = b[self.pivot_row[k]];
        }
        for k in (0..m).rev() {
            let xk = x[k] / self.u_diag[k];
            x[k] = xk;
            if xk != 0.0 {
                for &(j, uv) in &self.u_cols[k] {
                    x[j] -= uv * xk;
                }
            }
        }
        for k in 0..m {
            b[self.col_order[k]] = x[k];
        }
    }

    /// Solves `Bᵀ y = c` in place; `c` indexed by basis column, `y` by row.
    fn solve_transposed(&self, b: &mut [f64]) {
        let m = self.m;
        if m == 0 {
            return;
        }
        // Uᵀ w = c, forward (c permuted into processing order)
        let mut w = vec![0.0f64; m];
        for k in 0..m {
            let mut s = b[self.col_order[k]];
            for &(j, uv) in &self.u_cols[k] {
                s -= uv * w[j];
            }
            w[k] = s / self.u_diag[k];
        }
        // Lᵀ z = w, backward; rows in l_cols[k] host pivots later than k
        for k in (0..m).rev() {
            let mut s = w[k];
            for &(r, lv) in &self.l_cols[k] {
                s -= lv * w[self.row_pivot[r]];
            }
            w[k] = s;
        }
        for k in 0..m {
            b[self.pivot_row[k]] = w[k];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn limits() -> SolveLimits {
        SolveLimits::default()
    }

    #[test]
    fn maximize_single_variable_under_cap() {
        // min −x, x <= 0.5, x in [0,1] → x = 0.5
        let mut lp = LinearProgram::new(vec![-1.0], vec![(0.0, 1.0)]);
        lp.push_row(Row::new(vec![(0, 1.0)], Sense::Le, 0.5));
        let out = solve(&lp, &limits());
        assert_eq!(out.status, LpStatus::Optimal);
        assert!((out.x[0] - 0.5).abs() < 1e-9);
        assert!((out.obj + 0.5).abs() < 1e-9);
    }

    #[test]
    fn covering_pair_costs_one() {
        // min x0+x1 s.t. x0+x1 >= 1, x in [0,1]²
        let mut lp = LinearProgram::new(vec![1.0, 1.0], vec![(0.0, 1.0); 2]);
        lp.push_row(Row::new(vec![(0, 1.0), (1, 1.0)], Sense::Ge, 1.0));
        let out = solve(&lp, &limits());
        assert_eq!(out.status, LpStatus::Optimal);
        assert!((out.obj - 1.0).abs() < 1e-9);
    }

    #[test]
    fn detects_infeasible_bounds_vs_row() {
        // x >= 2 with x in [0,1]
        let mut lp = LinearProgram::new(vec![0.0], vec![(0.0, 1.0)]);
        lp.push_row(Row::new(vec![(0, 1.0)], Sense::Ge, 2.0));
        let out = solve(&lp, &limits());
        assert_eq!(out.status, LpStatus::Infeasible);
    }

    #[test]
    fn detects_unbounded() {
        let lp = LinearProgram::new(vec![-1.0], vec![(0.0, f64::INFINITY)]);
        let out = solve(&lp, &limits());
        assert_eq!(out.status, LpStatus::Unbounded);
    }

    #[test]
    fn equality_row_is_honored() {
        // min x0 s.t. x0 + x1 = 1, x in [0,1]²
        let mut lp = LinearProgram::new(vec![1.0, 0.0], vec![(0.0, 1.0); 2]);
        lp.push_row(Row::new(vec![(0, 1.0), (1, 1.0)], Sense::Eq, 1.0));
        let out = solve(&lp, &limits());
        assert_eq!(out.status, LpStatus::Optimal);
        assert!(out.obj.abs() < 1e-9);
        assert!((out.x[1] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn resolve_with_satisfied_row_keeps_solution() {
        let mut lp = LinearProgram::new(vec![-1.0], vec![(0.0, 1.0)]);
        lp.push_row(Row::new(vec![(0, 1.0)], Sense::Le, 0.5));
        let out = solve(&lp, &limits());
        lp.push_row(Row::new(vec![(0, 1.0)], Sense::Le, 0.9));
        let warm = resolve_with_rows(&out, &lp, 1, &limits());
        assert_eq!(warm.status, LpStatus::Optimal);
        assert!((warm.obj - out.obj).abs() < 1e-9);
        assert_eq!(warm.pivots, 0, "no pivots for a satisfied row");
    }

    #[test]
    fn resolve_with_violated_row_worsens_objective() {
        let mut lp = LinearProgram::new(vec![-1.0, -1.0], vec![(0.0, 1.0); 2]);
        lp.push_row(Row::new(vec![(0, 1.0), (1, 1.0)], Sense::Le, 1.5));
        let out = solve(&lp, &limits());
        assert!((out.obj + 1.5).abs() < 1e-9);
        lp.push_row(Row::new(vec![(0, 1.0), (1, 2.0)], Sense::Le, 1.0));
        let warm = resolve_with_rows(&out, &lp, 1, &limits());
        assert_eq!(warm.status, LpStatus::Optimal);
        assert!(warm.obj >= out.obj - 1e-9, "feasible region only shrank");
        let cold = solve(&lp, &limits());
        assert!((warm.obj - cold.obj).abs() < 1e-7);
    }

    #[test]
    fn duals_certify_optimality() {
        let mut lp = LinearProgram::new(vec![1.0, 2.0, -0.5], vec![(0.0, 2.0); 3]);
        lp.push_row(Row::new(vec![(0, 1.0), (1, 1.0), (2, 1.0)], Sense::Ge, 1.0));
        lp.push_row(Row::new(vec![(0, 1.0), (2, 2.0)], Sense::Le, 2.5));
        let out = solve(&lp, &limits());
        assert_eq!(out.status, LpStatus::Optimal);
        // reduced costs: at lower >= -tol, at upper <= tol
        for j in 0..lp.ncols {
            let mut d = lp.objective[j];
            for (r, row) in lp.rows.iter().enumerate() {
                for &(c, v) in &row.coeffs {
                    if c == j {
                        d -= out.duals[r] * v;
                    }
                }
            }
            let x = out.x[j];
            if (x - lp.bounds[j].0).abs() < 1e-7 {
                assert!(d >= -1e-7, "var {j} at lower with d = {d}");
            } else if (x - lp.bounds[j].1).abs() < 1e-7 {
                assert!(d <= 1e-7, "var {j} at upper with d = {d}");
            } else {
                assert!(d.abs() <= 1e-7, "basic var {j} with d = {d}");
            }
        }
    }

    #[test]
    fn text_format_round_trips() {
        let mut lp = LinearProgram::new(vec![1.0, -2.5], vec![(0.0, 1.0), (-1.0, f64::INFINITY)]);
        lp.push_row(Row::new(vec![(0, 1.25), (1, -1.0)], Sense::Ge, 0.5));
        lp.push_row(Row::new(vec![(1, 3.0)], Sense::Eq, 1.5));
        let text = lp.to_text();
        let back = LinearProgram::from_text(&text).unwrap();
        assert_eq!(back.to_text(), text);
        let a = solve(&lp, &limits());
        let b = solve(&back, &limits());
        assert!((a.obj - b.obj).abs() < 1e-9);
    }

    #[test]
    fn text_format_reports_parse_errors() {
        let err = LinearProgram::from_text("vars 1\nrow ?? 1 0:1\n");
        assert!(matches!(err, Err(LpFormatError::Parse { line: 2, .. })));
    }

    #[test]
    fn sparse_lu_solves_match_dense_elimination() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..200 {
            let m = rng.gen_range(1..=12);
            // random sparse matrix, diagonally nudged to stay invertible
            let mut cols: Vec<Vec<(usize, f64)>> = (0..m)
                .map(|k| {
                    let mut c: Vec<(usize, f64)> = Vec::new();
                    for r in 0..m {
                        if rng.gen_bool(0.3) {
                            c.push((r, rng.gen_range(-2.0..2.0f64)));
                        }
                    }
                    c.retain(|&(_, v)| v != 0.0);
                    c.push((k, rng.gen_range(1.0..3.0)));
                    c
                })
                .collect();
            for c in &mut cols {
                c.sort_by_key(|&(r, _)| r);
                c.dedup_by_key(|&mut (r, _)| r);
            }
            let mut dense = vec![vec![0.0f64; m]; m];
            for (k, c) in cols.iter().enumerate() {
                for &(r, v) in c {
                    dense[r][k] = v;
                }
            }
            let lu = SparseLu::factorize(m, &cols);
            let b: Vec<f64> = (0..m).map(|_| rng.gen_range(-1.0..1.0)).collect();

            let mut x = b.clone();
            lu.solve(&mut x);
            for r in 0..m {
                let got: f64 = (0..m).map(|k| dense[r][k] * x[k]).sum();
                assert!((got - b[r]).abs() < 1e-8, "solve residual {}", got - b[r]);
            }

            let mut y = b.clone();
            lu.solve_transposed(&mut y);
            for k in 0..m {
                let got: f64 = (0..m).map(|r| dense[r][k] * y[r]).sum();
                assert!((got - b[k]).abs() < 1e-8, "transposed residual {}", got - b[k]);
            }
        }
    }

    #[test]
    fn warm_equals_cold_on_small_random_lps() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);
        for trial in 0..300 {
            let ncols = rng.gen_range(1..=8);
            let base_rows = rng.gen_range(0..=10);
            let mut lp = LinearProgram::new(
                (0..ncols).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                (0..ncols)
                    .map(|_| {
                        let lo = rng.gen_range(-1.0..0.5);
                        (lo, lo + rng.gen_range(0.1..2.0))
                    })
                    .collect(),
            );
            let random_row = |rng: &mut rand_chacha::ChaCha8Rng| {
                let nnz = rng.gen_range(1..=ncols);
                let mut cols: Vec<usize> = (0..ncols).collect();
                for i in (1..cols.len()).rev() {
                    cols.swap(i, rng.gen_range(0..=i));
                }
                let coeffs = cols[..nnz]
                    .iter()
                    .map(|&c| (c, rng.gen_range(-1.0..1.0f64)))
                    .collect();
                let sense = match rng.gen_range(0..3) {
                    0 => Sense::Le,
                    1 => Sense::Ge,
                    _ => Sense::Eq,
                };
                Row::new(coeffs, sense, rng.gen_range(-1.0..1.0))
            };
            for _ in 0..base_rows {
                lp.push_row(random_row(&mut rng));
            }
            let out = solve(&lp, &limits());
            if out.status != LpStatus::Optimal {
                continue;
            }
            let extra = rng.gen_range(1..=3);
            for _ in 0..extra {
                lp.push_row(random_row(&mut rng));
            }
            let warm = resolve_with_rows(&out, &lp, extra, &limits());
            let cold = solve(&lp, &limits());
            assert_eq!(warm.status, cold.status, "trial {trial}");
            if warm.status == LpStatus::Optimal {
                assert!(
                    (warm.obj - cold.obj).abs() <= 1e-7 * (1.0 + cold.obj.abs()),
                    "trial {trial}: warm {} vs cold {}",
                    warm.obj,
                    cold.obj
                );
            }
        }
    }
}
