//! Test-only oracles shared by integration targets.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use wiphwbc::qp::QpProblem;

/// Brute-force QP oracle: enumerate every active subset, solve its KKT
/// system and keep the feasible, dual-feasible point with the least cost.
pub fn enumerate_qp(p: &QpProblem) -> Option<DVector<f64>> {
    let m = p.gradient.len();
    let e = p.eq_vector.len();
    let k = p.ineq_vector.len();
    let g = (&p.hessian + p.hessian.transpose()) * 0.5;
    let mut best: Option<(f64, DVector<f64>)> = None;
    for mask in 0u32..(1 << k) {
        let subset: Vec<usize> = (0..k).filter(|i| mask & (1 << i) != 0).collect();
        let rows = e + subset.len();
        if rows > m {
            continue;
        }
        let dim = m + rows;
        let mut kkt = DMatrix::zeros(dim, dim);
        let mut rhs = DVector::zeros(dim);
        kkt.view_mut((0, 0), (m, m)).copy_from(&g);
        for j in 0..m {
            rhs[j] = -p.gradient[j];
        }
        for r in 0..rows {
            let (row, c) = if r < e {
                (p.eq_matrix.row(r).into_owned(), p.eq_vector[r])
            } else {
                let i = subset[r - e];
                (p.ineq_matrix.row(i).into_owned(), p.ineq_vector[i])
            };
            for j in 0..m {
                kkt[(m + r, j)] = row[j];
                kkt[(j, m + r)] = row[j];
            }
            rhs[m + r] = -c;
        }
        let lu = kkt.full_piv_lu();
        if lu.determinant().abs() < 1e-12 {
            continue;
        }
        let Some(sol) = lu.solve(&rhs) else { continue };
        let x = sol.rows(0, m).into_owned();
        let primal_ok = k == 0 || (&p.ineq_matrix * &x + &p.ineq_vector).max() <= 1e-9;
        let dual_ok = (e..rows).all(|r| sol[m + r] >= -1e-9);
        if primal_ok && dual_ok {
            let cost = 0.5 * x.dot(&(&g * &x)) + p.gradient.dot(&x);
            if best.as_ref().is_none_or(|(b, _)| cost < *b) {
                best = Some((cost, x));
            }
        }
    }
    best.map(|(_, x)| x)
}

/// Random strictly convex instance with a known feasible point, `m ≤ 4`, `k ≤ 6`.
pub fn random_qp(rng: &mut impl Rng) -> QpProblem {
    let m = rng.random_range(1..=4);
    let k = rng.random_range(0..=6);
    let e = if m > 1 { rng.random_range(0..=1) } else { 0 };
    let a = DMatrix::from_fn(m, m, |_, _| rng.random_range(-1.0..1.0));
    let g = a.transpose() * a + DMatrix::identity(m, m) * 0.2;
    let grad = DVector::from_fn(m, |_, _| rng.random_range(-3.0..3.0));
    let x0 = DVector::from_fn(m, |_, _| rng.random_range(-1.0..1.0));
    let ce = DMatrix::from_fn(e, m, |_, _| rng.random_range(-1.0..1.0));
    let cev = -(&ce * &x0);
    let ci = DMatrix::from_fn(k, m, |_, _| rng.random_range(-1.0..1.0));
    let slack = DVector::from_fn(k, |_, _| rng.random_range(0.0..1.0));
    let civ = -(&ci * &x0) - slack;
    QpProblem::new(g, grad).with_equalities(ce, cev).with_inequalities(ci, civ)
}
