mod common;

use common::random_problem;
use proptest::prelude::*;
use wbc_core::qp::{solve_qp, QpStatus, SolverOptions};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn agrees_with_active_set_enumeration(seed in any::<u64>()) {
        let p = random_problem(seed);
        let s = solve_qp(&p, &SolverOptions::default()).unwrap();
        prop_assert_eq!(s.status, QpStatus::Optimal);
        let oracle = common::enumerate_qp(&p.hessian, &p.gradient, &p.a_eq, &p.b_eq, &p.a_in, &p.b_in).unwrap();
        prop_assert!((&s.x - &oracle).amax() < 1e-6, "x {} oracle {}", s.x, oracle);
    }

    #[test]
    fn optimal_points_satisfy_kkt(seed in any::<u64>()) {
        let p = random_problem(seed);
        let s = solve_qp(&p, &SolverOptions::default()).unwrap();
        prop_assert_eq!(s.status, QpStatus::Optimal);
        if !p.b_eq.is_empty() {
            prop_assert!((&p.a_eq * &s.x - &p.b_eq).amax() <= 1e-8);
        }
        let slack = &p.a_in * &s.x - &p.b_in;
        for i in 0..p.b_in.len() {
            prop_assert!(slack[i] <= 1e-8);
            prop_assert!(s.multipliers_in[i] >= -1e-8);
            prop_assert!((s.multipliers_in[i] * slack[i]).abs() <= 1e-8);
        }
        let stationarity = &p.hessian * &s.x + &p.gradient + p.a_in.tr_mul(&s.multipliers_in) + p.a_eq.tr_mul(&s.multipliers_eq);
        prop_assert!(stationarity.amax() <= 1e-8, "stationarity {}", stationarity.amax());
    }

    #[test]
    fn identical_inputs_identical_outputs(seed in any::<u64>()) {
        let p = random_problem(seed);
        let a = solve_qp(&p, &SolverOptions::default()).unwrap();
        let b = solve_qp(&p, &SolverOptions::default()).unwrap();
        prop_assert_eq!(a.x, b.x);
        prop_assert_eq!(a.active_set, b.active_set);
    }
}
