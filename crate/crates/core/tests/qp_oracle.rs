mod common;

use nalgebra::{dmatrix, dvector, DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wiphwbc::qp::{solve_qp, QpProblem, QpStatus};

#[test]
fn agrees_with_enumeration_on_random_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for case in 0..500 {
        let p = common::random_qp(&mut rng);
        let sol = solve_qp(&p).unwrap();
        let oracle = common::enumerate_qp(&p).expect("instances are feasible by construction");
        assert_eq!(sol.status, QpStatus::Optimal, "case {case}");
        assert!(sol.kkt_residual < 1e-8, "case {case}: kkt {}", sol.kkt_residual);
        assert!((&sol.x - &oracle).amax() < 1e-8, "case {case}: {} vs {}", sol.x, oracle);
    }
}

#[test]
fn equality_only_matches_kkt_solve() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..50 {
        let m = 5;
        let e = 2;
        let a = DMatrix::from_fn(m, m, |_, _| rng.random_range(-1.0..1.0));
        let g = a.transpose() * a + DMatrix::identity(m, m);
        let grad = DVector::from_fn(m, |_, _| rng.random_range(-1.0..1.0));
        let ce = DMatrix::from_fn(e, m, |_, _| rng.random_range(-1.0..1.0));
        let cev = DVector::from_fn(e, |_, _| rng.random_range(-1.0..1.0));
        let mut kkt = DMatrix::zeros(m + e, m + e);
        kkt.view_mut((0, 0), (m, m)).copy_from(&g);
        kkt.view_mut((m, 0), (e, m)).copy_from(&ce);
        kkt.view_mut((0, m), (m, e)).copy_from(&ce.transpose());
        let mut rhs = DVector::zeros(m + e);
        rhs.rows_mut(0, m).copy_from(&(-&grad));
        rhs.rows_mut(m, e).copy_from(&(-&cev));
        let direct = kkt.lu().solve(&rhs).unwrap();
        let sol = solve_qp(&QpProblem::new(g, grad).with_equalities(ce, cev)).unwrap();
        assert!((sol.x - direct.rows(0, m)).amax() < 1e-10);
        assert!((sol.eq_multipliers - direct.rows(m, e)).amax() < 1e-10);
    }
}

#[test]
fn box_with_equality() {
    // min ½‖x‖² − 2x₁ − 2x₂ on x₁ + x₂ = 1, x₁ ≤ 0.2
    let p = QpProblem::new(DMatrix::identity(2, 2), dvector![-2.0, -2.0])
        .with_equalities(dmatrix![1.0, 1.0], dvector![-1.0])
        .with_inequalities(dmatrix![1.0, 0.0], dvector![-0.2]);
    let sol = solve_qp(&p).unwrap();
    assert_eq!(sol.status, QpStatus::Optimal);
    assert!((sol.x - dvector![0.2, 0.8]).amax() < 1e-12);
    assert_eq!(sol.active_set, vec![0]);
}

#[test]
fn deterministic_across_calls() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let p = common::random_qp(&mut rng);
    let a = solve_qp(&p).unwrap();
    let b = solve_qp(&p).unwrap();
    assert_eq!(a.x, b.x);
    assert_eq!(a.active_set, b.active_set);
}

proptest! {
    #[test]
    fn minimizer_is_scale_invariant(seed in any::<u64>(), c in 1e-3f64..1e3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = common::random_qp(&mut rng);
        let base = solve_qp(&p).unwrap();
        let mut scaled = p.clone();
        scaled.hessian *= c;
        scaled.gradient *= c;
        let other = solve_qp(&scaled).unwrap();
        prop_assert_eq!(base.status, other.status);
        prop_assert!((base.x - other.x).amax() < 1e-9);
    }

    #[test]
    fn optimal_results_are_kkt_points(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = common::random_qp(&mut rng);
        let sol = solve_qp(&p).unwrap();
        prop_assert_eq!(sol.status, QpStatus::Optimal);
        prop_assert!(sol.kkt_residual < 1e-8);
        if !p.ineq_vector.is_empty() {
            prop_assert!((&p.ineq_matrix * &sol.x + &p.ineq_vector).max() <= 1e-8);
        }
        if !p.eq_vector.is_empty() {
            prop_assert!((&p.eq_matrix * &sol.x + &p.eq_vector).amax() <= 1e-8);
        }
    }
}
