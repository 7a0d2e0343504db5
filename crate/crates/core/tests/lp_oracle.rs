mod common;

use common::lp_oracle::{random_lp, rng, vertex_oracle, OracleResult};
use gridweave::lp::{solve_lp, LpStatus, TOL_FEAS};
use proptest::prelude::*;

fn check(seed: u64) -> Result<(), TestCaseError> {
    let p = random_lp(&mut rng(seed), 4, 6);
    let sol = solve_lp(&p).expect("solver error");
    match vertex_oracle(&p) {
        OracleResult::Infeasible => prop_assert_eq!(sol.status, LpStatus::Infeasible),
        OracleResult::Optimal(obj) => {
            prop_assert_eq!(sol.status, LpStatus::Optimal);
            prop_assert!(
                (sol.objective_value - obj).abs() <= 1e-6,
                "seed {}: simplex {} vs oracle {}",
                seed,
                sol.objective_value,
                obj
            );
            prop_assert!(p.max_violation(&sol.x) < TOL_FEAS);
        }
    }
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn simplex_matches_vertex_enumeration(seed in any::<u64>()) {
        check(seed)?;
    }
}

#[test]
fn larger_random_instances_are_feasible_when_optimal() {
    for seed in 0..200 {
        let p = random_lp(&mut rng(seed), 12, 16);
        let sol = solve_lp(&p).unwrap();
        if sol.status == LpStatus::Optimal {
            assert!(p.max_violation(&sol.x) < TOL_FEAS, "seed {seed}");
        }
    }
}
