//! Elimination of the wheel heading dynamics from the full model, leaving the
//! manipulator ODE `𝒜 q̈ + P(C𝐪̇ + Q − Γ_fric) = Γ`.
//!
//! Every matrix is assembled from blocks of `A`; the full mass matrix is never inverted.

use log::debug;
use nalgebra::{DMatrix, DVector};

use crate::dynamics::DynamicsTerms;
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct IsolatedDynamics {
    /// `𝒜 = (I − βB) A*_qq`, generally asymmetric.
    pub acal: DMatrix<f64>,
    /// n×(n+1) bias projection `(I − βB)[−a_xq/a_xx | I]`.
    pub p: DMatrix<f64>,
    pub alpha: f64,
    pub beta: f64,
    /// `[a_xq/(R a_xx) | 0]`.
    pub b: DMatrix<f64>,
    /// `P · bias_full`.
    pub bias: DVector<f64>,
}

pub fn isolate(terms: &DynamicsTerms, bias_full: &DVector<f64>, radius: f64) -> Result<IsolatedDynamics> {
    let blocks = &terms.blocks;
    let n = blocks.a_xq.len();
    let a_xx = blocks.a_xx;
    if a_xx <= 0.0 || bias_full.len() != n + 1 {
        return Err(Error::Precondition(format!(
            "isolation needs a_xx > 0 and a bias of length {}",
            n + 1
        )));
    }
    let coupling = &blocks.a_xq / (radius * a_xx);
    let alpha = coupling[0];
    if (1.0 + alpha).abs() < 1e-12 {
        return Err(Error::Singular(format!("1 + α vanishes (α = {alpha})")));
    }
    let beta = 1.0 / (1.0 + alpha);

    let mut b = DMatrix::zeros(n, n);
    b.set_column(0, &coupling);
    let left = DMatrix::identity(n, n) - &b * beta;

    let a_star = &blocks.a_qq - &blocks.a_xq * blocks.a_xq.transpose() / a_xx;
    let acal = &left * &a_star;

    let mut elim = DMatrix::zeros(n, n + 1);
    elim.set_column(0, &(-&blocks.a_xq / a_xx));
    elim.view_mut((0, 1), (n, n)).fill_with_identity();
    let p = &left * elim;
    let bias = &p * bias_full;

    // (I + B)^{-1} = I − βB, so (I + B)𝒜 must reproduce A*_qq
    debug_assert!({
        let back = (DMatrix::identity(n, n) + &b) * &acal;
        (back - &a_star).amax() <= 1e-9 * (1.0 + a_star.amax())
    });

    Ok(IsolatedDynamics {
        acal,
        p,
        alpha,
        beta,
        b,
        bias,
    })
}

impl IsolatedDynamics {
    pub fn n(&self) -> usize {
        self.bias.len()
    }

    /// Joint torques realizing `qddot`; `Γ[0]` is the combined wheel torque `τ_1`.
    pub fn inverse_dynamics(&self, qddot: &DVector<f64>) -> DVector<f64> {
        &self.acal * qddot + &self.bias
    }

    /// Solves `𝒜 q̈ = Γ − bias` by LU with partial pivoting.
    pub fn forward_map(&self, torques: &DVector<f64>) -> Result<DVector<f64>> {
        if log::log_enabled!(log::Level::Debug) {
            let sv = self.acal.clone().singular_values();
            let cond = sv.max() / sv.min();
            if cond > 1e8 {
                debug!("isolated inertia poorly conditioned: cond = {cond:.3e}");
            }
        }
        self.acal
            .clone()
            .lu()
            .solve(&(torques - &self.bias))
            .ok_or_else(|| Error::Singular("isolated inertia 𝒜 is singular".into()))
    }

    /// Encodes `−limits ≤ 𝒜 q̈ + bias ≤ limits` as `C q̈ + c ≤ 0`; the first
    /// `n` rows are upper bounds, the next `n` lower bounds.
    pub fn torque_constraint_rows(&self, limits: &DVector<f64>) -> (DMatrix<f64>, DVector<f64>) {
        let n = self.n();
        let mut c = DMatrix::zeros(2 * n, n);
        let mut d = DVector::zeros(2 * n);
        c.view_mut((0, 0), (n, n)).copy_from(&self.acal);
        c.view_mut((n, 0), (n, n)).copy_from(&(-&self.acal));
        d.rows_mut(0, n).copy_from(&(&self.bias - limits));
        d.rows_mut(n, n).copy_from(&(-&self.bias - limits));
        (c, d)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{dynamics_terms, forward_dynamics, Blocks};
    use crate::model::{RobotDescription, RobotState};
    use nalgebra::dvector;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn iso_at(d: &RobotDescription, s: &RobotState) -> IsolatedDynamics {
        let t = dynamics_terms(d, s).unwrap();
        isolate(&t, &t.bias, d.wheel.radius).unwrap()
    }

    #[test]
    fn one_link_upright() {
        let d = RobotDescription::desk_scale(1).unwrap();
        let iso = iso_at(&d, &RobotState::upright(1));
        let l = &d.links[0];
        let a_xx = d.wheel_effective_mass() + l.mass;
        let a_xq = l.mass * l.com_offset;
        let alpha = a_xq / (d.wheel.radius * a_xx);
        assert!((iso.alpha - alpha).abs() < 1e-14);
        assert!((iso.beta - 1.0 / (1.0 + alpha)).abs() < 1e-14);
        let a_qq = l.mass * l.com_offset.powi(2) + l.inertia_com;
        let expected = (1.0 - alpha / (1.0 + alpha)) * (a_qq - a_xq * a_xq / a_xx);
        assert!((iso.acal[(0, 0)] - expected).abs() < 1e-14);
        assert!(iso.acal[(0, 0)] > 0.0);
        // balanced at rest: no torque needed
        assert!(iso.inverse_dynamics(&dvector![0.0])[0].abs() < 1e-14);
    }

    #[test]
    fn decoupled_limit() {
        let d = RobotDescription::desk_scale(3).unwrap();
        let mut t = dynamics_terms(&d, &RobotState::at_rest(0.0, dvector![0.1, 0.2, 0.3])).unwrap();
        t.blocks = Blocks {
            a_xq: DVector::zeros(3),
            ..t.blocks.clone()
        };
        let iso = isolate(&t, &t.bias, d.wheel.radius).unwrap();
        assert_eq!(iso.alpha, 0.0);
        assert_eq!(iso.beta, 1.0);
        assert_eq!(iso.b, DMatrix::zeros(3, 3));
        assert_eq!(iso.acal, t.blocks.a_qq);
        let mut p = DMatrix::zeros(3, 4);
        p.view_mut((0, 1), (3, 3)).fill_with_identity();
        assert_eq!(iso.p, p);
    }

    #[test]
    fn round_trip_through_full_model() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for n in [1, 3, 7] {
            let d = RobotDescription::desk_scale(n).unwrap();
            for _ in 0..30 {
                let s = RobotState::new(
                    0.0,
                    rng.random_range(-1.0..1.0),
                    DVector::from_fn(n, |_, _| rng.random_range(-0.8..0.8)),
                    DVector::from_fn(n, |_, _| rng.random_range(-2.0..2.0)),
                );
                let qdd = DVector::from_fn(n, |_, _| rng.random_range(-5.0..5.0));
                let iso = iso_at(&d, &s);
                let tau = iso.inverse_dynamics(&qdd);
                let acc = forward_dynamics(&d, &s, &tau).unwrap();
                assert!((acc.qddot - &qdd).amax() < 1e-9);
                let back = iso.forward_map(&tau).unwrap();
                assert!((back - &qdd).amax() < 1e-10);
            }
        }
    }

    #[test]
    fn zero_acceleration_gives_bias() {
        let d = RobotDescription::desk_scale(3).unwrap();
        let iso = iso_at(&d, &RobotState::at_rest(0.0, dvector![0.1, 0.2, 0.3]));
        assert_eq!(iso.inverse_dynamics(&DVector::zeros(3)), iso.bias);
    }

    #[test]
    fn torque_rows_one_dimensional() {
        let iso = IsolatedDynamics {
            acal: DMatrix::from_element(1, 1, 2.0),
            p: DMatrix::zeros(1, 2),
            alpha: 0.0,
            beta: 1.0,
            b: DMatrix::zeros(1, 1),
            bias: dvector![0.0],
        };
        let (c, d) = iso.torque_constraint_rows(&dvector![1.0]);
        let feasible = |x: f64| (0..2).all(|i| c[(i, 0)] * x + d[i] <= 1e-15);
        assert!(feasible(0.5) && feasible(-0.5) && feasible(0.0));
        assert!(!feasible(0.5001) && !feasible(-0.5001));
        assert!((c[(0, 0)] * 0.5 + d[0]).abs() < 1e-15);
        assert!((c[(1, 0)] * -0.5 + d[1]).abs() < 1e-15);
    }

    #[test]
    fn torque_rows_agree_with_direct_evaluation() {
        let d = RobotDescription::desk_scale(3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let iso = iso_at(&d, &RobotState::at_rest(0.0, dvector![0.2, -0.4, 0.7]));
        let limits = d.torque_limits();
        let (c, cv) = iso.torque_constraint_rows(&limits);
        for _ in 0..100 {
            let qdd = DVector::from_fn(3, |_, _| rng.random_range(-40.0..40.0));
            let tau = iso.inverse_dynamics(&qdd);
            let direct = tau.iter().zip(limits.iter()).all(|(t, l)| t.abs() <= *l);
            let rows = (&c * &qdd + &cv).iter().all(|v| *v <= 0.0);
            assert_eq!(direct, rows);
        }
    }
}
