//! Invariant battery behind the `check` command. Each check reports the
//! measured worst case next to its tolerance.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::dynamics::{
    bias_terms, forward_dynamics, full_zero_dynamics_residual, mass_matrix, mass_matrix_partials, total_energy,
};
use crate::error::Result;
use crate::isolation::isolate;
use crate::kinematics::{com_state, end_effector};
use crate::model::{RobotDescription, RobotState};
use crate::qp::{solve_qp, QpProblem, QpStatus};
use crate::sim::integrate_step;
use crate::wipm::{extract, f_c, step, step_jacobians, wheel_torque, WipmState};

#[derive(Clone, Debug, Serialize)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub measured: f64,
    pub tolerance: f64,
    pub detail: String,
}

impl fmt::Display for CheckResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {:<24} measured {:.3e}  tol {:.1e}  {}",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.measured,
            self.tolerance,
            self.detail
        )
    }
}

fn result(name: &'static str, measured: f64, tolerance: f64, detail: impl Into<String>) -> CheckResult {
    CheckResult {
        name,
        passed: measured.is_finite() && measured < tolerance,
        measured,
        tolerance,
        detail: detail.into(),
    }
}

#[derive(Clone, Copy, Debug)]
pub struct CheckOptions {
    pub seed: u64,
    pub samples: usize,
    pub energy_duration: f64,
    pub energy_dt: f64,
}

impl Default for CheckOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            samples: 200,
            energy_duration: 1.0,
            energy_dt: 1e-4,
        }
    }
}

/// Random state with joint angles inside the limits (capped at ±1.2 rad).
pub fn random_state(desc: &RobotDescription, rng: &mut impl Rng) -> RobotState {
    let n = desc.n();
    let q = DVector::from_fn(n, |i, _| {
        let l = &desc.links[i];
        let lo = l.angle_min.max(-1.2);
        let hi = l.angle_max.min(1.2);
        rng.random_range(lo..hi)
    });
    let qdot = DVector::from_fn(n, |_, _| rng.random_range(-2.0..2.0));
    RobotState::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), q, qdot)
}

pub fn run_checks(desc: &RobotDescription, opts: &CheckOptions) -> Result<Vec<CheckResult>> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let states: Vec<RobotState> = (0..opts.samples).map(|_| random_state(desc, &mut rng)).collect();
    Ok(vec![
        mass_matrix_check(desc, &states),
        skew_check(desc, &states),
        energy_check(desc, opts)?,
        isolation_check(desc, &states, &mut rng)?,
        wipm_check(desc)?,
        jacobian_check(desc, &states[..states.len().min(50)])?,
        qp_check(&mut rng, opts.samples)?,
    ])
}

fn mass_matrix_check(desc: &RobotDescription, states: &[RobotState]) -> CheckResult {
    let mut asym: f64 = 0.0;
    let mut min_eig = f64::INFINITY;
    for s in states {
        let a = mass_matrix(desc, s);
        asym = asym.max((&a - a.transpose()).amax() / a.amax());
        min_eig = min_eig.min(a.symmetric_eigenvalues().min());
    }
    let mut r = result("mass_matrix_sym_pd", asym, 1e-12, format!("min eigenvalue {min_eig:.3e}"));
    r.passed &= min_eig > 0.0;
    r
}

fn skew_check(desc: &RobotDescription, states: &[RobotState]) -> CheckResult {
    let mut worst: f64 = 0.0;
    for s in states {
        let v = s.velocities();
        let parts = mass_matrix_partials(desc, s);
        let mut adot = DMatrix::zeros(v.len(), v.len());
        for (k, p) in parts.iter().enumerate() {
            adot += p * s.qdot[k];
        }
        let c = bias_terms(desc, s).coriolis;
        let n = &adot - &c * 2.0;
        worst = worst.max(v.dot(&(&n * &v)).abs());
    }
    result("skew_symmetry", worst, 1e-8, "max |q̇ᵀ(Ȧ−2C)q̇|")
}

/// Unforced rollout. Without damping the total energy is conserved; with
/// damping the drop must match the dissipated work `∫ q̇ᵀ D q̇ dt`.
fn energy_check(desc: &RobotDescription, opts: &CheckOptions) -> Result<CheckResult> {
    let n = desc.n();
    let q = DVector::from_fn(n, |i, _| if i == 0 { 0.3 } else { 0.2 * (i as f64).cos() });
    let mut s = RobotState::new(0.0, 0.2, q, DVector::from_element(n, 0.5));
    let damping = desc.damping();
    let dissipation = |st: &RobotState| st.qdot.component_mul(&damping).dot(&st.qdot);
    let e0 = total_energy(desc, &s).total();
    let zero = DVector::zeros(n);
    let steps = (opts.energy_duration / opts.energy_dt).round() as usize;
    let mut dissipated = 0.0;
    for _ in 0..steps {
        let next = integrate_step(desc, &s, &zero, opts.energy_dt)?;
        dissipated += 0.5 * opts.energy_dt * (dissipation(&s) + dissipation(&next));
        s = next;
    }
    let e1 = total_energy(desc, &s).total();
    let damped = damping.amax() > 0.0;
    let drift = (e1 - e0 + dissipated).abs() / e0.abs().max(1.0);
    let form = if damped { "power balance" } else { "conservation" };
    Ok(result(
        "energy",
        drift,
        1e-6,
        format!("{form}, {:.2} s at dt {:.0e}", opts.energy_duration, opts.energy_dt),
    ))
}

fn isolation_check(desc: &RobotDescription, states: &[RobotState], rng: &mut impl Rng) -> Result<CheckResult> {
    let n = desc.n();
    let mut worst: f64 = 0.0;
    let mut zero_dyn: f64 = 0.0;
    for s in states {
        let terms = crate::dynamics::dynamics_terms(desc, s)?;
        let iso = isolate(&terms, &terms.bias, desc.wheel.radius)?;
        let qdd = DVector::from_fn(n, |_, _| rng.random_range(-5.0..5.0));
        let tau = iso.inverse_dynamics(&qdd);
        let acc = forward_dynamics(desc, s, &tau)?;
        worst = worst.max((&acc.qddot - &qdd).amax());
        zero_dyn = zero_dyn.max(full_zero_dynamics_residual(desc, s, &acc)?.abs());
    }
    Ok(result(
        "isolation_round_trip",
        worst.max(zero_dyn),
        1e-9,
        format!("zero-dynamics residual {zero_dyn:.2e}"),
    ))
}

/// Collapses the robot to its base link and compares the full model with the
/// WIPM under the same wheel-torque policy.
fn wipm_check(desc: &RobotDescription) -> Result<CheckResult> {
    let one = RobotDescription::new(desc.wheel.clone(), vec![desc.links[0].clone()], desc.gravity)?.frictionless();
    let s0 = RobotState::new(0.0, 0.0, DVector::from_element(1, 0.1), DVector::zeros(1));
    let params = extract(&one, &s0)?.params;
    let policy = |x: &WipmState, t: f64| -25.0 * x.theta - 8.0 * x.thetadot + 0.5 * (3.0 * t).sin();
    let dt = 1e-3;
    let mut full = s0.clone();
    let mut simple = WipmState::new(0.1, 0.0, 0.0, 0.0);
    let mut worst: f64 = 0.0;
    for k in 0..2000 {
        let t = k as f64 * dt;
        let xf = WipmState::new(full.q[0], full.qdot[0], full.x, full.xdot);
        let tau = wheel_torque(&xf, policy(&xf, t), &params)?;
        full = integrate_step(&one, &full, &DVector::from_element(1, tau), dt)?;
        // RK4 on the WIPM with the same zero-order-hold torque
        let u_of = |x: &WipmState| crate::wipm::control_for_wheel_torque(x, tau, &params);
        let k1 = f_c(&simple, u_of(&simple)?, &params)?;
        let x2 = WipmState::from_vector(&(simple.to_vector() + k1 * (dt / 2.0)));
        let k2 = f_c(&x2, u_of(&x2)?, &params)?;
        let x3 = WipmState::from_vector(&(simple.to_vector() + k2 * (dt / 2.0)));
        let k3 = f_c(&x3, u_of(&x3)?, &params)?;
        let x4 = WipmState::from_vector(&(simple.to_vector() + k3 * dt));
        let k4 = f_c(&x4, u_of(&x4)?, &params)?;
        simple = WipmState::from_vector(&(simple.to_vector() + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0)));
        let xf = WipmState::new(full.q[0], full.qdot[0], full.x, full.xdot);
        worst = worst.max((xf.to_vector() - simple.to_vector()).amax());
    }
    Ok(result("wipm_single_link", worst, 1e-6, "matched wheel torque, 2 s"))
}

fn jacobian_check(desc: &RobotDescription, states: &[RobotState]) -> Result<CheckResult> {
    let n = desc.n();
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for s in states {
        // end-effector position Jacobian
        let ee = end_effector(desc, s);
        for j in 0..n {
            let mut sp = s.clone();
            let mut sm = s.clone();
            sp.q[j] += h;
            sm.q[j] -= h;
            let fd = (end_effector(desc, &sp).position - end_effector(desc, &sm).position) / (2.0 * h);
            let col = ee.jacobian.column(j);
            worst = worst.max((fd.x - col[0]).abs().max((fd.y - col[1]).abs()) / col.amax().max(1.0));
        }
        // CoM-angle rate against a numerical derivative along q̇
        if let Ok(com) = com_state(desc, s) {
            let mut sp = s.clone();
            let mut sm = s.clone();
            sp.q += &s.qdot * h;
            sm.q -= &s.qdot * h;
            if let (Ok(a), Ok(b)) = (com_state(desc, &sp), com_state(desc, &sm)) {
                let fd = (a.theta - b.theta) / (2.0 * h);
                worst = worst.max((fd - com.thetadot).abs() / com.thetadot.abs().max(1.0));
            }
            // WIPM step Jacobians
            if let Ok(ext) = extract(desc, s) {
                let u = 0.3;
                let jac = step_jacobians(&ext.state, u, &ext.params, 0.01)?;
                for c in 0..4 {
                    let mut up = ext.state.to_vector();
                    let mut dn = up;
                    up[c] += h;
                    dn[c] -= h;
                    let fp = step(&WipmState::from_vector(&up), u, &ext.params, 0.01)?.to_vector();
                    let fm = step(&WipmState::from_vector(&dn), u, &ext.params, 0.01)?.to_vector();
                    let fd = (fp - fm) / (2.0 * h);
                    worst = worst.max((fd - jac.fx.column(c)).amax() / jac.fx.column(c).amax().max(1.0));
                }
            }
        }
    }
    Ok(result("jacobians_fd", worst, 1e-6, "end effector, CoM angle, WIPM step"))
}

fn qp_check(rng: &mut impl Rng, count: usize) -> Result<CheckResult> {
    let mut worst_kkt: f64 = 0.0;
    let mut worst_oracle: f64 = 0.0;
    let mut failures = 0;
    for _ in 0..count {
        let m = rng.random_range(1..=4);
        let k = rng.random_range(0..=6);
        let a = DMatrix::from_fn(m, m, |_, _| rng.random_range(-1.0..1.0));
        let g = a.transpose() * a + DMatrix::identity(m, m) * 0.1;
        let grad = DVector::from_fn(m, |_, _| rng.random_range(-2.0..2.0));
        let x0 = DVector::from_fn(m, |_, _| rng.random_range(-1.0..1.0));
        let c = DMatrix::from_fn(k, m, |_, _| rng.random_range(-1.0..1.0));
        let d = -(&c * &x0) - DVector::from_fn(k, |_, _| rng.random_range(0.0..1.0));
        let p = QpProblem::new(g, grad).with_inequalities(c, d);
        let sol = solve_qp(&p)?;
        if sol.status != QpStatus::Optimal {
            failures += 1;
            continue;
        }
        worst_kkt = worst_kkt.max(sol.kkt_residual);
        if let Some(x) = enumerate(&p) {
            worst_oracle = worst_oracle.max((&sol.x - x).amax());
        } else {
            failures += 1;
        }
    }
    let mut r = result(
        "qp_kkt_oracle",
        worst_kkt.max(worst_oracle),
        1e-8,
        format!("{count} instances, oracle gap {worst_oracle:.2e}, non-optimal {failures}"),
    );
    r.passed &= failures == 0;
    Ok(r)
}

/// Inequality-only active-subset enumeration.
fn enumerate(p: &QpProblem) -> Option<DVector<f64>> {
    let m = p.dim();
    let k = p.ineq_vector.len();
    let mut best: Option<(f64, DVector<f64>)> = None;
    for mask in 0u32..(1 << k) {
        let act: Vec<usize> = (0..k).filter(|i| mask >> i & 1 == 1).collect();
        if act.len() > m {
            continue;
        }
        let dim = m + act.len();
        let mut kkt = DMatrix::zeros(dim, dim);
        let mut rhs = DVector::zeros(dim);
        kkt.view_mut((0, 0), (m, m)).copy_from(&p.hessian);
        rhs.rows_mut(0, m).copy_from(&(-&p.gradient));
        for (r, &i) in act.iter().enumerate() {
            for j in 0..m {
                kkt[(m + r, j)] = p.ineq_matrix[(i, j)];
                kkt[(j, m + r)] = p.ineq_matrix[(i, j)];
            }
            rhs[m + r] = -p.ineq_vector[i];
        }
        let Some(sol) = kkt.lu().solve(&rhs) else { continue };
        let x = sol.rows(0, m).into_owned();
        let feasible = k == 0 || (&p.ineq_matrix * &x + &p.ineq_vector).max() <= 1e-9;
        if feasible && sol.rows(m, act.len()).iter().all(|&l| l >= -1e-9) {
            let f = 0.5 * x.dot(&(&p.hessian * &x)) + p.gradient.dot(&x);
            if best.as_ref().is_none_or(|(b, _)| f < *b) {
                best = Some((f, x));
            }
        }
    }
    best.map(|(_, x)| x)
}
