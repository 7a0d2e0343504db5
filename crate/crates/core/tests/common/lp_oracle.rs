#![allow(dead_code)]

//! Brute-force LP oracle: enumerate every intersection of `n` constraint
//! hyperplanes (rows or finite bounds), keep the feasible ones and take the
//! cheapest. Only valid for box-bounded problems, where a non-empty feasible
//! set always has a vertex.

use gridweave::lp::{LpProblem, Relation};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OracleResult {
    Infeasible,
    Optimal(f64),
}

pub fn vertex_oracle(p: &LpProblem) -> OracleResult {
    let n = p.n_vars();
    let mut planes: Vec<(Vec<f64>, f64)> = Vec::new();
    for row in &p.rows {
        let mut a = vec![0.0; n];
        for &(j, v) in &row.coeffs {
            a[j] += v;
        }
        planes.push((a, row.rhs));
    }
    for (j, &(lo, hi)) in p.bounds.iter().enumerate() {
        assert!(lo.is_finite() && hi.is_finite(), "oracle needs finite bounds");
        let mut e = vec![0.0; n];
        e[j] = 1.0;
        planes.push((e.clone(), lo));
        planes.push((e, hi));
    }
    let mut best: Option<f64> = None;
    let mut idx: Vec<usize> = (0..n).collect();
    if n == 0 {
        return if p.rows.iter().all(|r| r.violation(&[]) <= 1e-9) {
            OracleResult::Optimal(0.0)
        } else {
            OracleResult::Infeasible
        };
    }
    loop {
        if let Some(x) = solve_square(&planes, &idx) {
            if p.max_violation(&x) <= 1e-9 {
                let obj = p.objective_value(&x);
                best = Some(best.map_or(obj, |b: f64| b.min(obj)));
            }
        }
        if !next_combination(&mut idx, planes.len()) {
            break;
        }
    }
    best.map_or(OracleResult::Infeasible, OracleResult::Optimal)
}

fn solve_square(planes: &[(Vec<f64>, f64)], idx: &[usize]) -> Option<Vec<f64>> {
    let n = idx.len();
    let mut m: Vec<Vec<f64>> = idx
        .iter()
        .map(|&i| {
            let mut r = planes[i].0.clone();
            r.push(planes[i].1);
            r
        })
        .collect();
    for c in 0..n {
        let piv = (c..n).max_by(|&a, &b| m[a][c].abs().total_cmp(&m[b][c].abs()))?;
        if m[piv][c].abs() < 1e-10 {
            return None;
        }
        m.swap(c, piv);
        for r in 0..n {
            if r != c {
                let f = m[r][c] / m[c][c];
                for k in c..=n {
                    m[r][k] -= f * m[c][k];
                }
            }
        }
    }
    Some((0..n).map(|i| m[i][n] / m[i][i]).collect())
}

fn next_combination(idx: &mut [usize], total: usize) -> bool {
    let k = idx.len();
    let mut i = k;
    while i > 0 {
        i -= 1;
        if idx[i] < total - k + i {
            idx[i] += 1;
            for j in i + 1..k {
                idx[j] = idx[j - 1] + 1;
            }
            return true;
        }
    }
    false
}

/// Random dense LP with at most `max_vars` box-bounded variables and
/// `max_rows` rows. Coefficients are quantised to quarters so exact ties and
/// degenerate vertices show up regularly.
pub fn random_lp(rng: &mut ChaCha8Rng, max_vars: usize, max_rows: usize) -> LpProblem {
    let n = rng.gen_range(1..=max_vars);
    let m = rng.gen_range(0..=max_rows);
    let q = |rng: &mut ChaCha8Rng, lo: i32, hi: i32| rng.gen_range(lo..=hi) as f64 / 4.0;
    let mut p = LpProblem::new();
    for _ in 0..n {
        let lo = q(rng, -20, 4);
        let width = if rng.gen_bool(0.1) { 0.0 } else { q(rng, 1, 32) };
        let cost = q(rng, -12, 12);
        p.add_var(cost, lo, lo + width);
    }
    for _ in 0..m {
        let coeffs = (0..n)
            .filter_map(|j| {
                let a = q(rng, -12, 12);
                (a != 0.0).then_some((j, a))
            })
            .collect();
        let relation = match rng.gen_range(0..5) {
            0 => Relation::Eq,
            1 | 2 => Relation::Le,
            _ => Relation::Ge,
        };
        p.add_row(coeffs, relation, q(rng, -24, 24));
    }
    p
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
