//! Dense two-phase simplex for small standard-form linear programs.
//!
//! Problems are `maximize c'x` subject to `a'x {<=,=,>=} b` and `x >= 0`.
//! The CE programs this crate generates have at most a few hundred variables
//! and about a hundred constraints, well inside dense-tableau territory.
//!
//! Pivoting uses Dantzig's rule until a degenerate streak is detected, then
//! falls back to Bland's rule, which cannot cycle.

use crate::error::CoverageError;

/// Feasibility tolerance for returned solutions.
pub const EPS_FEAS: f64 = 1e-7;
/// Optimality tolerance.
pub const EPS_OPT: f64 = 1e-7;
/// Entries smaller than this are treated as zero.
const PIVOT_TOL: f64 = 1e-9;
/// Minimum magnitude for a ratio-test pivot; smaller pivots amplify
/// roundoff catastrophically.
const RATIO_PIVOT_TOL: f64 = 1e-7;
/// Reduced-cost tolerance for entering-variable selection.
const COST_TOL: f64 = 1e-9;
/// Consecutive non-improving pivots before switching to Bland's rule.
const DEGENERATE_STREAK: usize = 30;
const MAX_PIVOTS: usize = 50_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Relation {
    Le,
    Eq,
    Ge,
}

#[derive(Debug, Clone)]
pub struct Constraint {
    pub coeffs: Vec<f64>,
    pub relation: Relation,
    pub rhs: f64,
}

impl Constraint {
    pub fn le(coeffs: Vec<f64>, rhs: f64) -> Self {
        Self { coeffs, relation: Relation::Le, rhs }
    }

    pub fn eq(coeffs: Vec<f64>, rhs: f64) -> Self {
        Self { coeffs, relation: Relation::Eq, rhs }
    }

    pub fn ge(coeffs: Vec<f64>, rhs: f64) -> Self {
        Self { coeffs, relation: Relation::Ge, rhs }
    }
}

/// `maximize objective . x` over `x >= 0` subject to `constraints`.
#[derive(Debug, Clone)]
pub struct LpProblem {
    pub objective: Vec<f64>,
    pub constraints: Vec<Constraint>,
}

impl LpProblem {
    pub fn num_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn validate(&self) -> Result<(), CoverageError> {
        let n = self.num_vars();
        if self.objective.iter().any(|v| !v.is_finite()) {
            return Err(CoverageError::LpNonFinite);
        }
        for (i, c) in self.constraints.iter().enumerate() {
            if c.coeffs.len() != n {
                return Err(CoverageError::LpDimension(format!(
                    "constraint {i} has {} coefficients, expected {n}",
                    c.coeffs.len()
                )));
            }
            if c.coeffs.iter().any(|v| !v.is_finite()) || !c.rhs.is_finite() {
                return Err(CoverageError::LpNonFinite);
            }
        }
        Ok(())
    }

    /// Re-evaluate every constraint at `x`. Independent of the solve path;
    /// used by tests to verify returned optima.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let mut worst = 0.0f64;
        for v in x {
            worst = worst.max(-v);
        }
        for c in &self.constraints {
            let lhs: f64 = c.coeffs.iter().zip(x).map(|(a, xi)| a * xi).sum();
            let viol = match c.relation {
                Relation::Le => lhs - c.rhs,
                Relation::Ge => c.rhs - lhs,
                Relation::Eq => (lhs - c.rhs).abs(),
            };
            worst = worst.max(viol);
        }
        worst
    }

    pub fn objective_at(&self, x: &[f64]) -> f64 {
        self.objective.iter().zip(x).map(|(c, xi)| c * xi).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

#[derive(Debug, Clone)]
pub struct LpSolution {
    pub status: LpStatus,
    /// Present iff status is Optimal.
    pub x: Option<Vec<f64>>,
    /// Present iff status is Optimal.
    pub objective_value: Option<f64>,
}

impl LpSolution {
    fn infeasible() -> Self {
        Self { status: LpStatus::Infeasible, x: None, objective_value: None }
    }

    fn unbounded() -> Self {
        Self { status: LpStatus::Unbounded, x: None, objective_value: None }
    }
}

struct Tableau {
    rows: Vec<Vec<f64>>, // constraint rows, rhs in last column
    obj: Vec<f64>,       // reduced-cost row for the current (minimization) cost
    obj_val: f64,
    basis: Vec<usize>,
    eligible: Vec<bool>, // columns allowed to enter the basis
    pivots: usize,
}

enum PhaseOutcome {
    Optimal,
    Unbounded,
}

impl Tableau {
    fn num_cols(&self) -> usize {
        self.obj.len()
    }

    fn pivot(&mut self, row: usize, col: usize) {
        let piv = self.rows[row][col];
        let inv = 1.0 / piv;
        for v in self.rows[row].iter_mut() {
            *v *= inv;
        }
        let pivot_row = self.rows[row].clone();
        for (r, current) in self.rows.iter_mut().enumerate() {
            if r == row {
                continue;
            }
            let factor = current[col];
            if factor != 0.0 {
                for (v, p) in current.iter_mut().zip(&pivot_row) {
                    *v -= factor * p;
                }
                current[col] = 0.0; // exact zero, not roundoff
            }
        }
        let factor = self.obj[col];
        if factor != 0.0 {
            let ncols = self.num_cols();
            for j in 0..ncols {
                self.obj[j] -= factor * pivot_row[j];
            }
            self.obj[col] = 0.0;
            self.obj_val -= factor * pivot_row[ncols];
        }
        self.basis[row] = col;
        self.pivots += 1;
    }

    /// Reset the reduced-cost row for minimization cost vector `d`
    /// (length = num_cols) given the current basis.
    fn set_cost(&mut self, d: &[f64]) {
        let ncols = self.num_cols();
        self.obj[..ncols].copy_from_slice(d);
        self.obj_val = 0.0;
        for (r, &b) in self.basis.iter().enumerate() {
            let cost = d[b];
            if cost != 0.0 {
                for j in 0..ncols {
                    self.obj[j] -= cost * self.rows[r][j];
                }
                self.obj_val -= cost * self.rows[r][ncols];
            }
        }
        // Basic columns must read exactly zero.
        for &b in &self.basis {
            self.obj[b] = 0.0;
        }
    }

    fn rhs(&self, row: usize) -> f64 {
        let ncols = self.num_cols();
        self.rows[row][ncols]
    }

    /// Run simplex to optimality on the current cost row (minimizing).
    ///
    /// `bounded_below` marks phases whose objective provably cannot be
    /// unbounded (phase 1): an entering column without any positive entry is
    /// then reduced-cost noise and gets banned rather than reported.
    fn run(&mut self, bounded_below: bool) -> Result<PhaseOutcome, CoverageError> {
        let ncols = self.num_cols();
        let mut banned = vec![false; ncols];
        // Switch to Bland's rule permanently once Dantzig stops making
        // objective progress; Bland cannot cycle.
        let mut bland = false;
        let mut since_progress = 0usize;
        let mut best_obj = self.obj_val;
        loop {
            if self.pivots > MAX_PIVOTS {
                return Err(CoverageError::LpIterationLimit(self.pivots));
            }
            if !bland {
                if self.obj_val > best_obj + 1e-12 * (1.0 + best_obj.abs()) {
                    best_obj = self.obj_val;
                    since_progress = 0;
                } else {
                    since_progress += 1;
                    if since_progress >= DEGENERATE_STREAK {
                        bland = true;
                    }
                }
            }
            // Entering column.
            let mut entering = None;
            if bland {
                for j in 0..ncols {
                    if self.eligible[j] && !banned[j] && self.obj[j] < -COST_TOL {
                        entering = Some(j);
                        break;
                    }
                }
            } else {
                let mut best = -COST_TOL;
                for j in 0..ncols {
                    if self.eligible[j] && !banned[j] && self.obj[j] < best {
                        best = self.obj[j];
                        entering = Some(j);
                    }
                }
            }
            let Some(col) = entering else {
                return Ok(PhaseOutcome::Optimal);
            };
            // Leaving row by minimum ratio. Ties go to the smallest basis
            // index under Bland (termination) and to the largest pivot
            // magnitude otherwise (stability). Pivots below RATIO_PIVOT_TOL
            // amplify roundoff, so they are only considered when no sound
            // pivot exists at all.
            let mut leaving: Option<(usize, f64)> = None;
            for min_pivot in [RATIO_PIVOT_TOL, PIVOT_TOL] {
                for r in 0..self.rows.len() {
                    let a = self.rows[r][col];
                    if a > min_pivot {
                        let ratio = self.rhs(r) / a;
                        match leaving {
                            None => leaving = Some((r, ratio)),
                            Some((lr, lratio)) => {
                                let tied =
                                    (ratio - lratio).abs() <= 1e-12 * (1.0 + lratio.abs());
                                let better = if tied {
                                    if bland {
                                        self.basis[r] < self.basis[lr]
                                    } else {
                                        a.abs() > self.rows[lr][col].abs()
                                    }
                                } else {
                                    ratio < lratio
                                };
                                if better {
                                    leaving = Some((r, ratio));
                                }
                            }
                        }
                    }
                }
                if leaving.is_some() {
                    break;
                }
            }
            let Some((row, _)) = leaving else {
                if bounded_below {
                    banned[col] = true;
                    continue;
                }
                return Ok(PhaseOutcome::Unbounded);
            };
            self.pivot(row, col);
        }
    }
}

/// Distinct per-row inequality relaxation. Degenerate programs (many
/// zero-rhs rows, as in the CE LP) cycle and accumulate roundoff without
/// it; the relaxed optimum stays within EPS_FEAS of the original.
const PERTURB: f64 = 5e-10;

/// Solve with the two-phase simplex method.
pub fn solve(problem: &LpProblem) -> Result<LpSolution, CoverageError> {
    problem.validate()?;
    let n = problem.num_vars();
    let m = problem.constraints.len();

    // Relax inequality r outward by (r+1) * PERTURB, normalize rows to
    // nonnegative rhs, then lay out columns as
    // [original | slacks/surpluses | artificials].
    let normalized: Vec<(Vec<f64>, Relation, f64)> = problem
        .constraints
        .iter()
        .enumerate()
        .map(|(r, c0)| {
            let eps = (r + 1) as f64 * PERTURB;
            let rhs = match c0.relation {
                Relation::Le => c0.rhs + eps,
                Relation::Ge => c0.rhs - eps,
                Relation::Eq => c0.rhs,
            };
            let c = Constraint { coeffs: c0.coeffs.clone(), relation: c0.relation, rhs };
            if c.rhs < 0.0 {
                let coeffs = c.coeffs.iter().map(|a| -a).collect();
                let relation = match c.relation {
                    Relation::Le => Relation::Ge,
                    Relation::Ge => Relation::Le,
                    Relation::Eq => Relation::Eq,
                };
                (coeffs, relation, -c.rhs)
            } else {
                (c.coeffs.clone(), c.relation, c.rhs)
            }
        })
        .collect();
    let num_slack = normalized.iter().filter(|(_, rel, _)| *rel != Relation::Eq).count();
    // >= rows keep a surplus but still need an artificial; = rows need one too.
    let num_art = normalized.iter().filter(|(_, rel, _)| *rel != Relation::Le).count();
    let used = n + num_slack + num_art;

    let mut rows = Vec::with_capacity(m);
    let mut basis = vec![usize::MAX; m];
    let mut is_artificial = vec![false; used];
    let mut slack_at = n;
    let mut art_at = n + num_slack;

    for (r, (coeffs, relation, rhs)) in normalized.iter().enumerate() {
        let mut row = vec![0.0; used + 1];
        row[..n].copy_from_slice(coeffs);
        row[used] = *rhs;
        match relation {
            Relation::Le => {
                row[slack_at] = 1.0;
                basis[r] = slack_at;
                slack_at += 1;
            }
            Relation::Ge => {
                row[slack_at] = -1.0;
                slack_at += 1;
                row[art_at] = 1.0;
                is_artificial[art_at] = true;
                basis[r] = art_at;
                art_at += 1;
            }
            Relation::Eq => {
                row[art_at] = 1.0;
                is_artificial[art_at] = true;
                basis[r] = art_at;
                art_at += 1;
            }
        }
        rows.push(row);
    }

    let mut tab = Tableau {
        rows,
        obj: vec![0.0; used],
        obj_val: 0.0,
        basis,
        eligible: vec![true; used],
        pivots: 0,
    };

    // Phase 1: minimize the sum of artificials.
    if num_art > 0 {
        let d: Vec<f64> = is_artificial.iter().map(|&a| if a { 1.0 } else { 0.0 }).collect();
        tab.set_cost(&d);
        match tab.run(true)? {
            PhaseOutcome::Optimal => {}
            PhaseOutcome::Unbounded => {
                // The phase-1 objective is bounded below by zero.
                return Err(CoverageError::CeSolve("phase-1 unbounded (internal error)".into()));
            }
        }
        // obj_val tracks the negated cost; phase-1 infeasibility means the
        // artificial sum could not be driven to zero.
        if -tab.obj_val > 1e-7 {
            return Ok(LpSolution::infeasible());
        }
        // Pivot remaining artificials out of the basis where possible.
        for r in 0..tab.rows.len() {
            if is_artificial[tab.basis[r]] {
                let mut pivoted = false;
                for j in 0..used {
                    if !is_artificial[j] && tab.rows[r][j].abs() > RATIO_PIVOT_TOL {
                        tab.pivot(r, j);
                        pivoted = true;
                        break;
                    }
                }
                // A row with no eligible pivot is redundant; its artificial
                // stays basic at value zero and is barred from re-entering.
                let _ = pivoted;
            }
        }
        for j in 0..used {
            if is_artificial[j] {
                tab.eligible[j] = false;
            }
        }
    }

    // Phase 2: minimize -c (i.e. maximize c).
    let mut d = vec![0.0; used];
    for j in 0..n {
        d[j] = -problem.objective[j];
    }
    tab.set_cost(&d);
    match tab.run(false)? {
        PhaseOutcome::Unbounded => Ok(LpSolution::unbounded()),
        PhaseOutcome::Optimal => {
            let mut x = vec![0.0; n];
            for (r, &b) in tab.basis.iter().enumerate() {
                if b < n {
                    x[b] = tab.rhs(r).max(0.0);
                }
            }
            // Numerically corrupted bases must never be reported as Optimal.
            let violation = problem.max_violation(&x);
            if violation > EPS_FEAS {
                return Err(CoverageError::CeSolve(format!(
                    "simplex result violates constraints by {violation:.3e}"
                )));
            }
            let obj = problem.objective_at(&x);
            Ok(LpSolution { status: LpStatus::Optimal, x: Some(x), objective_value: Some(obj) })
        }
    }
}


/// Brute-force LP oracle: enumerate basic solutions of the slack-augmented
/// equality system. Test-only, independent of the simplex path.
#[cfg(any(test, feature = "oracles"))]
pub mod oracle {
    use super::*;

    pub enum OracleResult {
        Optimal(f64),
        Infeasible,
        Unbounded,
    }

    /// Solve the square system `a x = b` by Gaussian elimination with
    /// partial pivoting. Returns None if singular.
    fn solve_square(a: &mut [Vec<f64>], b: &mut [f64]) -> Option<Vec<f64>> {
        let n = b.len();
        for col in 0..n {
            let mut best = col;
            for r in col + 1..n {
                if a[r][col].abs() > a[best][col].abs() {
                    best = r;
                }
            }
            if a[best][col].abs() < 1e-10 {
                return None;
            }
            a.swap(col, best);
            b.swap(col, best);
            for r in 0..n {
                if r != col {
                    let f = a[r][col] / a[col][col];
                    if f != 0.0 {
                        for j in col..n {
                            a[r][j] -= f * a[col][j];
                        }
                        b[r] -= f * b[col];
                    }
                }
            }
        }
        Some((0..n).map(|i| b[i] / a[i][i]).collect())
    }

    /// Equality form: columns of [A | aux], rhs b, with x >= 0 on all columns.
    struct EqForm {
        cols: Vec<Vec<f64>>, // column-major, m entries each
        rhs: Vec<f64>,
        n_orig: usize,
    }

    fn to_equality_form(p: &LpProblem) -> EqForm {
        let n = p.num_vars();
        let m = p.constraints.len();
        let mut cols: Vec<Vec<f64>> = (0..n)
            .map(|j| p.constraints.iter().map(|c| c.coeffs[j]).collect())
            .collect();
        for (r, c) in p.constraints.iter().enumerate() {
            match c.relation {
                Relation::Le => {
                    let mut col = vec![0.0; m];
                    col[r] = 1.0;
                    cols.push(col);
                }
                Relation::Ge => {
                    let mut col = vec![0.0; m];
                    col[r] = -1.0;
                    cols.push(col);
                }
                Relation::Eq => {}
            }
        }
        EqForm { cols, rhs: p.constraints.iter().map(|c| c.rhs).collect(), n_orig: n }
    }

    /// Max of `obj . x` over all basic feasible solutions; None if none exist.
    fn max_over_bfs(form: &EqForm, obj: &[f64]) -> Option<f64> {
        let m = form.rhs.len();
        let total = form.cols.len();
        if m == 0 {
            // No constraints: origin is the only BFS.
            return Some(0.0);
        }
        if total < m {
            return None;
        }
        let mut best: Option<f64> = None;
        let mut subset: Vec<usize> = (0..m).collect();
        loop {
            // Evaluate the basis `subset`.
            let mut a: Vec<Vec<f64>> =
                (0..m).map(|r| subset.iter().map(|&j| form.cols[j][r]).collect()).collect();
            let mut b = form.rhs.clone();
            if let Some(xb) = solve_square(&mut a, &mut b) {
                if xb.iter().all(|&v| v >= -1e-8) {
                    let val: f64 = subset
                        .iter()
                        .zip(&xb)
                        .filter(|(&j, _)| j < form.n_orig)
                        .map(|(&j, &v)| obj[j] * v)
                        .sum();
                    best = Some(match best {
                        None => val,
                        Some(b) => b.max(val),
                    });
                }
            }
            // Next m-combination of 0..total in lexicographic order.
            let mut i = m;
            loop {
                if i == 0 {
                    return best;
                }
                i -= 1;
                if subset[i] != i + total - m {
                    subset[i] += 1;
                    for k in i + 1..m {
                        subset[k] = subset[k - 1] + 1;
                    }
                    break;
                }
            }
        }
    }

    /// Independent reference solve by full basis enumeration.
    pub fn solve_by_enumeration(p: &LpProblem) -> OracleResult {
        let form = to_equality_form(p);
        let Some(best) = max_over_bfs(&form, &p.objective) else {
            return OracleResult::Infeasible;
        };
        // Unboundedness: a recession direction d >= 0 with positive objective
        // gain. Normalize with sum(d) = 1; the maximum of c.d over that
        // polytope is attained at one of its basic feasible solutions.
        let n = p.num_vars();
        let mut dir = LpProblem {
            objective: p.objective.clone(),
            constraints: p
                .constraints
                .iter()
                .map(|c| {
                    let relation = match c.relation {
                        Relation::Le => Relation::Le,
                        Relation::Ge => Relation::Ge,
                        Relation::Eq => Relation::Eq,
                    };
                    Constraint { coeffs: c.coeffs.clone(), relation, rhs: 0.0 }
                })
                .collect(),
        };
        dir.constraints.push(Constraint::eq(vec![1.0; n], 1.0));
        let dir_form = to_equality_form(&dir);
        if let Some(gain) = max_over_bfs(&dir_form, &p.objective) {
            if gain > 1e-7 {
                return OracleResult::Unbounded;
            }
        }
        OracleResult::Optimal(best)
    }
}
