//! Fixed-column MPS export, for cross-checking a problem in external solvers.

use std::fmt::Write as _;

use super::{LpProblem, Relation};

/// Render `problem` as fixed-format MPS text.
///
/// Row names are `R<i>`; column names come from [`LpProblem::names`] and are
/// truncated to the 8-character MPS field. Infinite bounds become `FR`/`MI`/`PL`.
pub fn write_mps(problem: &LpProblem, name: &str) -> String {
    let mut out = String::new();
    let col = |j: usize| -> String {
        let n = problem.names.get(j).cloned().unwrap_or_else(|| format!("x{j}"));
        if n.len() > 8 {
            format!("C{j}")
        } else {
            n
        }
    };
    let _ = writeln!(out, "NAME          {name}");
    out.push_str("ROWS\n");
    out.push_str(" N  COST\n");
    for (i, row) in problem.rows.iter().enumerate() {
        let kind = match row.relation {
            Relation::Le => 'L',
            Relation::Ge => 'G',
            Relation::Eq => 'E',
        };
        let _ = writeln!(out, " {kind}  R{i}");
    }

    let mut by_col: Vec<Vec<(usize, f64)>> = vec![Vec::new(); problem.n_vars()];
    for (i, row) in problem.rows.iter().enumerate() {
        for &(j, a) in &row.coeffs {
            by_col[j].push((i, a));
        }
    }
    out.push_str("COLUMNS\n");
    for (j, entries) in by_col.iter().enumerate() {
        let c = problem.objective[j];
        if c != 0.0 {
            let _ = writeln!(out, "    {:<8}  {:<8}  {:>12}", col(j), "COST", num(c));
        }
        for &(i, a) in entries {
            let _ = writeln!(out, "    {:<8}  {:<8}  {:>12}", col(j), format!("R{i}"), num(a));
        }
        if c == 0.0 && entries.is_empty() {
            let _ = writeln!(out, "    {:<8}  {:<8}  {:>12}", col(j), "COST", "0");
        }
    }
    out.push_str("RHS\n");
    for (i, row) in problem.rows.iter().enumerate() {
        if row.rhs != 0.0 {
            let _ = writeln!(out, "    {:<8}  {:<8}  {:>12}", "RHS", format!("R{i}"), num(row.rhs));
        }
    }
    out.push_str("BOUNDS\n");
    for (j, &(lo, hi)) in problem.bounds.iter().enumerate() {
        let c = col(j);
        match (lo.is_finite(), hi.is_finite()) {
            (false, false) => {
                let _ = writeln!(out, " FR BND       {c:<8}");
            }
            (true, true) if lo == hi => {
                let _ = writeln!(out, " FX BND       {c:<8}  {:>12}", num(lo));
            }
            (lo_f, hi_f) => {
                if !lo_f {
                    let _ = writeln!(out, " MI BND       {c:<8}");
                } else if lo != 0.0 {
                    let _ = writeln!(out, " LO BND       {c:<8}  {:>12}", num(lo));
                }
                if hi_f {
                    let _ = writeln!(out, " UP BND       {c:<8}  {:>12}", num(hi));
                } else if !lo_f {
                    let _ = writeln!(out, " PL BND       {c:<8}");
                }
            }
        }
    }
    out.push_str("ENDATA\n");
    out
}

fn num(v: f64) -> String {
    let s = format!("{v}");
    if s.len() <= 12 {
        s
    } else {
        format!("{v:.6e}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_problem_layout() {
        let mut p = LpProblem::new();
        let x = p.add_named_var("x", -1.0, 0.0, 1.0);
        let y = p.add_named_var("y", -1.0, f64::NEG_INFINITY, f64::INFINITY);
        p.add_row(vec![(x, 1.0), (y, 1.0)], Relation::Le, 1.0);
        let text = write_mps(&p, "demo");
        assert!(text.starts_with("NAME          demo\nROWS\n N  COST\n L  R0\n"));
        assert!(text.contains("    x         R0                   1\n"));
        assert!(text.contains(" UP BND       x                    1\n"));
        assert!(text.contains(" FR BND       y"));
        assert!(text.ends_with("ENDATA\n"));
    }
}
