//! Linear programs and a self-contained bounded-variable simplex solver.
//!
//! Problems are stated as `minimize c·x` subject to sparse rows
//! `a·x {<=, =, >=} b` and per-variable bounds `lower <= x <= upper`, where
//! either bound may be infinite.

mod mps;
mod simplex;

use std::fmt;

use thiserror::Error;

pub use mps::write_mps;
pub use simplex::{solve_lp, solve_lp_with, SolverOptions};

/// Primal feasibility tolerance for rows and bounds of an optimal solution.
pub const TOL_FEAS: f64 = 1e-8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LpError {
    #[error("simplex exceeded {0} pivots")]
    MaxIterationsExceeded(usize),
    #[error("malformed problem: {0}")]
    Malformed(String),
    #[error("numerical trouble: residual {residual:e} after solve")]
    Numerical { residual: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Relation {
    Le,
    Eq,
    Ge,
}

impl fmt::Display for Relation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Relation::Le => "<=",
            Relation::Eq => "=",
            Relation::Ge => ">=",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub coeffs: Vec<(usize, f64)>,
    pub relation: Relation,
    pub rhs: f64,
}

impl Row {
    pub fn activity(&self, x: &[f64]) -> f64 {
        self.coeffs.iter().map(|&(j, a)| a * x[j]).sum()
    }

    /// Amount by which `x` violates this row (0 when satisfied).
    pub fn violation(&self, x: &[f64]) -> f64 {
        let act = self.activity(x);
        match self.relation {
            Relation::Le => (act - self.rhs).max(0.0),
            Relation::Ge => (self.rhs - act).max(0.0),
            Relation::Eq => (act - self.rhs).abs(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LpProblem {
    pub objective: Vec<f64>,
    pub rows: Vec<Row>,
    pub bounds: Vec<(f64, f64)>,
    /// Optional column names, used only by the MPS dump.
    pub names: Vec<String>,
}

impl LpProblem {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn n_vars(&self) -> usize {
        self.objective.len()
    }

    /// Append a variable and return its index.
    pub fn add_var(&mut self, cost: f64, lower: f64, upper: f64) -> usize {
        let j = self.objective.len();
        self.objective.push(cost);
        self.bounds.push((lower, upper));
        self.names.push(format!("x{j}"));
        j
    }

    pub fn add_named_var(&mut self, name: impl Into<String>, cost: f64, lower: f64, upper: f64) -> usize {
        let j = self.add_var(cost, lower, upper);
        self.names[j] = name.into();
        j
    }

    pub fn add_row(&mut self, coeffs: Vec<(usize, f64)>, relation: Relation, rhs: f64) -> usize {
        self.rows.push(Row { coeffs, relation, rhs });
        self.rows.len() - 1
    }

    pub fn add_cost(&mut self, j: usize, cost: f64) {
        self.objective[j] += cost;
    }

    pub fn validate(&self) -> Result<(), LpError> {
        let n = self.n_vars();
        if self.bounds.len() != n {
            return Err(LpError::Malformed(format!(
                "{} bounds for {n} variables",
                self.bounds.len()
            )));
        }
        for (j, &c) in self.objective.iter().enumerate() {
            if !c.is_finite() {
                return Err(LpError::Malformed(format!("cost of x{j} is {c}")));
            }
        }
        for (j, &(lo, hi)) in self.bounds.iter().enumerate() {
            if lo.is_nan() || hi.is_nan() || lo > hi || lo == f64::INFINITY || hi == f64::NEG_INFINITY {
                return Err(LpError::Malformed(format!("bad bounds [{lo}, {hi}] on x{j}")));
            }
        }
        for (i, row) in self.rows.iter().enumerate() {
            if !row.rhs.is_finite() {
                return Err(LpError::Malformed(format!("rhs of row {i} is {}", row.rhs)));
            }
            for &(j, a) in &row.coeffs {
                if j >= n {
                    return Err(LpError::Malformed(format!(
                        "row {i} references x{j} but only {n} variables exist"
                    )));
                }
                if !a.is_finite() {
                    return Err(LpError::Malformed(format!("row {i} coefficient on x{j} is {a}")));
                }
            }
        }
        Ok(())
    }

    pub fn objective_value(&self, x: &[f64]) -> f64 {
        self.objective.iter().zip(x).map(|(c, v)| c * v).sum()
    }

    /// Largest row or bound violation of `x`.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let rows = self.rows.iter().map(|r| r.violation(x)).fold(0.0, f64::max);
        let bounds = self
            .bounds
            .iter()
            .zip(x)
            .map(|(&(lo, hi), &v)| (lo - v).max(v - hi).max(0.0))
            .fold(0.0, f64::max);
        rows.max(bounds)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    pub status: LpStatus,
    pub x: Vec<f64>,
    pub objective_value: f64,
    pub pivots: usize,
}

impl LpSolution {
    pub fn is_optimal(&self) -> bool {
        self.status == LpStatus::Optimal
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validate_rejects_bad_index() {
        let mut p = LpProblem::new();
        p.add_var(1.0, 0.0, 1.0);
        p.add_row(vec![(3, 1.0)], Relation::Le, 1.0);
        assert!(matches!(p.validate(), Err(LpError::Malformed(_))));
    }

    #[test]
    fn validate_rejects_crossed_bounds() {
        let mut p = LpProblem::new();
        p.add_var(1.0, 2.0, 1.0);
        assert!(p.validate().is_err());
    }

    #[test]
    fn row_violation() {
        let r = Row {
            coeffs: vec![(0, 1.0), (1, 2.0)],
            relation: Relation::Ge,
            rhs: 5.0,
        };
        assert_eq!(r.violation(&[1.0, 1.0]), 2.0);
        assert_eq!(r.violation(&[1.0, 3.0]), 0.0);
    }
}
