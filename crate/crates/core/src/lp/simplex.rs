//! Two-phase bounded-variable primal simplex on a dense tableau.
//!
//! Every row gets a slack column so the constraint set becomes
//! `A x + s = b` with bounds on both `x` and `s` (`<=` rows have `s >= 0`,
//! `>=` rows `s <= 0`, equalities `s = 0`). Rows whose slack cannot absorb
//! the starting residual get an artificial column; phase 1 drives those to
//! zero. Nonbasic variables sit at a finite bound, or at zero when free.

use log::trace;

use super::{LpError, LpProblem, LpSolution, LpStatus, TOL_FEAS};

#[derive(Debug, Clone, Copy)]
pub struct SolverOptions {
    /// Pivot (and bound flip) budget across both phases.
    pub max_pivots: usize,
    /// Consecutive degenerate pivots tolerated under Dantzig pricing before
    /// switching to Bland's rule.
    pub degenerate_limit: usize,
    pub pivot_tol: f64,
    pub optimality_tol: f64,
    /// Pivots between recomputations of the basic solution from `B^-1`.
    pub refresh_interval: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            max_pivots: 10_000,
            degenerate_limit: 500,
            pivot_tol: 1e-9,
            optimality_tol: 1e-9,
            refresh_interval: 100,
        }
    }
}

/// Residual above which a finished solve is reported as numerical trouble.
const ACCEPT_RESIDUAL: f64 = 1e-6;
/// Sum of artificial values above which phase 1 declares infeasibility.
const PHASE1_TOL: f64 = 1e-7;
const RATIO_TIE: f64 = 1e-12;
const DROP_TOL: f64 = 1e-13;

pub fn solve_lp(problem: &LpProblem) -> Result<LpSolution, LpError> {
    solve_lp_with(problem, &SolverOptions::default())
}

pub fn solve_lp_with(problem: &LpProblem, opts: &SolverOptions) -> Result<LpSolution, LpError> {
    problem.validate()?;
    let mut tab = Tableau::build(problem);
    let mut ctx = PivotCounter::new(opts);

    if tab.n_art > 0 {
        let mut cost = vec![0.0; tab.width];
        for c in cost.iter_mut().skip(tab.n + tab.m) {
            *c = 1.0;
        }
        tab.set_costs(cost);
        let outcome = tab.run(problem, opts, &mut ctx)?;
        debug_assert!(outcome != PhaseOutcome::Unbounded);
        tab.refresh_basics(problem);
        let infeasibility: f64 = (tab.n + tab.m..tab.width).map(|j| tab.x[j].max(0.0)).sum();
        if infeasibility > PHASE1_TOL {
            trace!("phase 1 ended with infeasibility {infeasibility:e}");
            return Ok(LpSolution {
                status: LpStatus::Infeasible,
                x: tab.x[..tab.n].to_vec(),
                objective_value: f64::NAN,
                pivots: ctx.pivots,
            });
        }
        tab.retire_artificials(opts);
        tab.refresh_basics(problem);
    }

    let mut cost = vec![0.0; tab.width];
    cost[..tab.n].copy_from_slice(&problem.objective);
    tab.set_costs(cost);
    let outcome = tab.run(problem, opts, &mut ctx)?;
    tab.refresh_basics(problem);
    let x = tab.x[..tab.n].to_vec();
    if outcome == PhaseOutcome::Unbounded {
        return Ok(LpSolution {
            status: LpStatus::Unbounded,
            x,
            objective_value: f64::NEG_INFINITY,
            pivots: ctx.pivots,
        });
    }
    let residual = problem.max_violation(&x);
    if residual > ACCEPT_RESIDUAL {
        return Err(LpError::Numerical { residual });
    }
    if residual > TOL_FEAS {
        trace!("solution residual {residual:e} above nominal tolerance");
    }
    Ok(LpSolution {
        status: LpStatus::Optimal,
        objective_value: problem.objective_value(&x),
        x,
        pivots: ctx.pivots,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum PhaseOutcome {
    Optimal,
    Unbounded,
}

struct PivotCounter {
    pivots: usize,
    degenerate_run: usize,
    bland: bool,
    since_refresh: usize,
    max: usize,
}

impl PivotCounter {
    fn new(opts: &SolverOptions) -> Self {
        Self {
            pivots: 0,
            degenerate_run: 0,
            bland: false,
            since_refresh: 0,
            max: opts.max_pivots,
        }
    }

    fn record(&mut self, step: f64, limit: usize) {
        self.pivots += 1;
        self.since_refresh += 1;
        if step <= RATIO_TIE {
            self.degenerate_run += 1;
            if self.degenerate_run > limit {
                self.bland = true;
            }
        } else {
            self.degenerate_run = 0;
            self.bland = false;
        }
    }
}

const NONBASIC: usize = usize::MAX;

struct Tableau {
    n: usize,
    m: usize,
    n_art: usize,
    width: usize,
    /// Row-major `m x width`, holds `B^-1 [A | I | art]`.
    t: Vec<f64>,
    basis: Vec<usize>,
    /// Row of each basic column, `NONBASIC` otherwise.
    row_of: Vec<usize>,
    x: Vec<f64>,
    lo: Vec<f64>,
    hi: Vec<f64>,
    cost: Vec<f64>,
    d: Vec<f64>,
    /// Row and sign of every artificial column, in column order.
    art_rows: Vec<(usize, f64)>,
    rhs: Vec<f64>,
}

impl Tableau {
    fn build(p: &LpProblem) -> Self {
        let n = p.n_vars();
        let m = p.rows.len();

        let mut x_struct = Vec::with_capacity(n);
        for &(lo, hi) in &p.bounds {
            x_struct.push(if lo.is_finite() {
                lo
            } else if hi.is_finite() {
                hi
            } else {
                0.0
            });
        }

        let mut slack_bounds = Vec::with_capacity(m);
        let mut residual = Vec::with_capacity(m);
        let mut art_rows = Vec::new();
        for (i, row) in p.rows.iter().enumerate() {
            let (sl, su) = match row.relation {
                super::Relation::Le => (0.0, f64::INFINITY),
                super::Relation::Ge => (f64::NEG_INFINITY, 0.0),
                super::Relation::Eq => (0.0, 0.0),
            };
            slack_bounds.push((sl, su));
            let r = row.rhs - row.activity(&x_struct);
            residual.push(r);
            if r < sl || r > su {
                let sb = r.clamp(sl, su);
                art_rows.push((i, if r - sb > 0.0 { 1.0 } else { -1.0 }));
            }
        }
        let n_art = art_rows.len();
        let width = n + m + n_art;

        let mut t = vec![0.0; m * width];
        for (i, row) in p.rows.iter().enumerate() {
            let base = i * width;
            for &(j, a) in &row.coeffs {
                t[base + j] += a;
            }
            t[base + n + i] = 1.0;
        }

        let mut lo = Vec::with_capacity(width);
        let mut hi = Vec::with_capacity(width);
        for &(l, h) in &p.bounds {
            lo.push(l);
            hi.push(h);
        }
        for &(sl, su) in &slack_bounds {
            lo.push(sl);
            hi.push(su);
        }
        lo.extend(std::iter::repeat_n(0.0, n_art));
        hi.extend(std::iter::repeat_n(f64::INFINITY, n_art));

        let mut x = vec![0.0; width];
        x[..n].copy_from_slice(&x_struct);
        let mut basis = vec![0; m];
        let mut row_of = vec![NONBASIC; width];
        let mut art_iter = art_rows.iter().enumerate().peekable();
        for i in 0..m {
            let r = residual[i];
            match art_iter.peek() {
                Some(&(a, &(row, sign))) if row == i => {
                    art_iter.next();
                    let col = n + m + a;
                    let (sl, su) = slack_bounds[i];
                    let sb = r.clamp(sl, su);
                    x[n + i] = sb;
                    x[col] = (r - sb).abs();
                    let base = i * width;
                    t[base + col] = sign;
                    // Normalise so the basic artificial has a unit column.
                    if sign < 0.0 {
                        for v in &mut t[base..base + width] {
                            *v = -*v;
                        }
                    }
                    basis[i] = col;
                    row_of[col] = i;
                }
                _ => {
                    x[n + i] = r;
                    basis[i] = n + i;
                    row_of[n + i] = i;
                }
            }
        }

        Self {
            n,
            m,
            n_art,
            width,
            t,
            basis,
            row_of,
            x,
            lo,
            hi,
            cost: vec![0.0; width],
            d: vec![0.0; width],
            art_rows,
            rhs: p.rows.iter().map(|r| r.rhs).collect(),
        }
    }

    fn set_costs(&mut self, cost: Vec<f64>) {
        self.d.copy_from_slice(&cost);
        for i in 0..self.m {
            let cb = cost[self.basis[i]];
            if cb != 0.0 {
                let row = &self.t[i * self.width..(i + 1) * self.width];
                for (dj, &tij) in self.d.iter_mut().zip(row) {
                    *dj -= cb * tij;
                }
            }
        }
        for &b in &self.basis {
            self.d[b] = 0.0;
        }
        self.cost = cost;
    }

    fn choose_entering(&self, bland: bool, tol: f64) -> Option<(usize, f64)> {
        let mut best: Option<(usize, f64)> = None;
        let mut best_score = 0.0;
        for j in 0..self.width {
            if self.row_of[j] != NONBASIC || self.hi[j] - self.lo[j] <= 0.0 {
                continue;
            }
            let dj = self.d[j];
            let dir = if dj < -tol && self.x[j] < self.hi[j] {
                1.0
            } else if dj > tol && self.x[j] > self.lo[j] {
                -1.0
            } else {
                continue;
            };
            if bland {
                return Some((j, dir));
            }
            let score = dj.abs();
            if score > best_score {
                best_score = score;
                best = Some((j, dir));
            }
        }
        best
    }

    /// Returns the step length and the leaving row (`None` for a bound flip,
    /// infinite step for an unbounded ray).
    fn ratio_test(&self, q: usize, dir: f64, pivot_tol: f64) -> (f64, Option<usize>) {
        let mut best_t = f64::INFINITY;
        let mut best_row: Option<usize> = None;
        for i in 0..self.m {
            let a = self.t[i * self.width + q];
            if a.abs() <= pivot_tol {
                continue;
            }
            let delta = -a * dir;
            let b = self.basis[i];
            let ratio = if delta < 0.0 {
                if self.lo[b] == f64::NEG_INFINITY {
                    continue;
                }
                (self.x[b] - self.lo[b]).max(0.0) / -delta
            } else {
                if self.hi[b] == f64::INFINITY {
                    continue;
                }
                (self.hi[b] - self.x[b]).max(0.0) / delta
            };
            let better = match best_row {
                None => true,
                Some(r) => ratio < best_t - RATIO_TIE || (ratio <= best_t + RATIO_TIE && b < self.basis[r]),
            };
            if better {
                best_t = ratio;
                best_row = Some(i);
            }
        }
        let span = self.hi[q] - self.lo[q];
        if span <= best_t {
            return (span, None);
        }
        (best_t, best_row)
    }

    fn run(&mut self, p: &LpProblem, opts: &SolverOptions, ctx: &mut PivotCounter) -> Result<PhaseOutcome, LpError> {
        loop {
            let Some((q, dir)) = self.choose_entering(ctx.bland, opts.optimality_tol) else {
                return Ok(PhaseOutcome::Optimal);
            };
            if ctx.pivots >= ctx.max {
                return Err(LpError::MaxIterationsExceeded(ctx.max));
            }
            let (step, leave) = self.ratio_test(q, dir, opts.pivot_tol);
            if step == f64::INFINITY {
                return Ok(PhaseOutcome::Unbounded);
            }
            for i in 0..self.m {
                let a = self.t[i * self.width + q];
                if a != 0.0 {
                    self.x[self.basis[i]] -= a * dir * step;
                }
            }
            match leave {
                None => {
                    self.x[q] = if dir > 0.0 { self.hi[q] } else { self.lo[q] };
                }
                Some(r) => {
                    self.x[q] += dir * step;
                    let b = self.basis[r];
                    let a = self.t[r * self.width + q];
                    self.x[b] = if -a * dir < 0.0 { self.lo[b] } else { self.hi[b] };
                    self.pivot(r, q);
                }
            }
            ctx.record(step, opts.degenerate_limit);
            if ctx.since_refresh >= opts.refresh_interval {
                ctx.since_refresh = 0;
                self.refresh_basics(p);
            }
        }
    }

    fn pivot(&mut self, r: usize, q: usize) {
        let w = self.width;
        let piv = self.t[r * w + q];
        let inv = 1.0 / piv;
        let mut nz = Vec::new();
        {
            let row = &mut self.t[r * w..(r + 1) * w];
            for (k, v) in row.iter_mut().enumerate() {
                if *v != 0.0 {
                    *v *= inv;
                    if v.abs() < DROP_TOL {
                        *v = 0.0;
                    } else {
                        nz.push(k);
                    }
                }
            }
            row[q] = 1.0;
        }
        let (before, rest) = self.t.split_at_mut(r * w);
        let (prow, after) = rest.split_at_mut(w);
        let eliminate = |row: &mut [f64]| {
            let f = row[q];
            if f != 0.0 {
                for &k in &nz {
                    let v = row[k] - f * prow[k];
                    row[k] = if v.abs() < DROP_TOL { 0.0 } else { v };
                }
                row[q] = 0.0;
            }
        };
        before.chunks_exact_mut(w).for_each(eliminate);
        after.chunks_exact_mut(w).for_each(eliminate);
        let f = self.d[q];
        if f != 0.0 {
            for &k in &nz {
                self.d[k] -= f * prow[k];
            }
            self.d[q] = 0.0;
        }
        let old = self.basis[r];
        self.row_of[old] = NONBASIC;
        self.basis[r] = q;
        self.row_of[q] = r;
    }

    /// Recompute the basic values from the nonbasic ones using the slack
    /// columns of the tableau, which hold `B^-1`.
    fn refresh_basics(&mut self, p: &LpProblem) {
        let n = self.n;
        let m = self.m;
        let mut r = self.rhs.clone();
        for (i, row) in p.rows.iter().enumerate() {
            let mut acc = 0.0;
            for &(j, a) in &row.coeffs {
                if self.row_of[j] == NONBASIC {
                    acc += a * self.x[j];
                }
            }
            if self.row_of[n + i] == NONBASIC {
                acc += self.x[n + i];
            }
            r[i] -= acc;
        }
        for (a, &(row, sign)) in self.art_rows.iter().enumerate() {
            let col = n + m + a;
            if self.row_of[col] == NONBASIC {
                r[row] -= sign * self.x[col];
            }
        }
        for i in 0..m {
            let trow = &self.t[i * self.width + n..i * self.width + n + m];
            let v: f64 = trow.iter().zip(&r).map(|(b, rk)| b * rk).sum();
            self.x[self.basis[i]] = v;
        }
    }

    /// Fix artificials at zero and pivot any still-basic ones out of the
    /// basis where a usable pivot exists.
    fn retire_artificials(&mut self, opts: &SolverOptions) {
        let first_art = self.n + self.m;
        for j in first_art..self.width {
            self.hi[j] = 0.0;
            if self.row_of[j] == NONBASIC {
                self.x[j] = 0.0;
            }
        }
        for r in 0..self.m {
            let b = self.basis[r];
            if b < first_art {
                continue;
            }
            let row = &self.t[r * self.width..(r + 1) * self.width];
            let mut best: Option<(usize, f64)> = None;
            for (j, &a) in row.iter().enumerate().take(first_art) {
                if self.row_of[j] != NONBASIC || self.hi[j] - self.lo[j] <= 0.0 {
                    continue;
                }
                if a.abs() > opts.pivot_tol.max(1e-7) && best.is_none_or(|(_, v)| a.abs() > v) {
                    best = Some((j, a.abs()));
                }
            }
            if let Some((j, _)) = best {
                self.x[b] = 0.0;
                self.pivot(r, j);
            }
        }
    }
}
