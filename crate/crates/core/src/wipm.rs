//! Wheeled Inverted Pendulum Model: the whole body collapsed into one link of
//! equivalent CoM and inertia, balancing on the wheel pair.
//!
//! State ordering is `X = [θ, θ̇, x, ẋ]`, control `u = θ̈`. The heading
//! acceleration follows from eliminating the wheel torque between the heading
//! and pitch equations:
//!
//! ```text
//! (α_w + cos θ) ẍ + (β_w + R cos θ) θ̈ = g sin θ + R sin θ θ̇²
//! ```
//!
//! with `α_w = R (M + 2m_w + 2I_w/R²)/(M L)` and `β_w = I/(M L)`. For a
//! one-link robot this is exact.

use nalgebra::{Matrix4, Vector4};

use crate::dynamics::mass_matrix;
use crate::error::{Error, Result};
use crate::kinematics::com_state;
use crate::model::{RobotDescription, RobotState};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WipmParams {
    /// Total body mass, kg.
    pub mass: f64,
    /// CoM distance from the axle, m.
    pub length: f64,
    /// Body inertia about the wheel axis (`a_(q1)(q1)`), kg·m².
    pub inertia: f64,
    pub radius: f64,
    /// Single-wheel mass and inertia; the model uses the pair.
    pub wheel_mass: f64,
    pub wheel_inertia: f64,
    pub alpha_w: f64,
    /// `I/(M L)`, in meters.
    pub beta_w: f64,
    pub gravity: f64,
}

impl WipmParams {
    pub fn new(mass: f64, length: f64, inertia: f64, desc: &RobotDescription) -> Result<Self> {
        if !(length > 0.0 && mass > 0.0 && inertia > 0.0) {
            return Err(Error::Precondition(format!(
                "WIPM needs positive mass, length and inertia (M={mass}, L={length}, I={inertia})"
            )));
        }
        let w = &desc.wheel;
        let r = w.radius;
        // wheel pair: 2 m_w and 2 I_w
        let alpha_w = r / (mass * length) * (mass + 2.0 * w.mass + 2.0 * w.inertia / (r * r));
        let beta_w = inertia / (mass * length);
        Ok(Self {
            mass,
            length,
            inertia,
            radius: r,
            wheel_mass: w.mass,
            wheel_inertia: w.inertia,
            alpha_w,
            beta_w,
            gravity: desc.gravity,
        })
    }

    /// `R (M + 2 m_w + 2 I_w / R²)`, the heading coefficient before division by `M L`.
    fn heading_inertia(&self) -> f64 {
        let r = self.radius;
        r * (self.mass + 2.0 * self.wheel_mass + 2.0 * self.wheel_inertia / (r * r))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct WipmState {
    pub theta: f64,
    pub thetadot: f64,
    pub x: f64,
    pub xdot: f64,
}

impl WipmState {
    pub fn new(theta: f64, thetadot: f64, x: f64, xdot: f64) -> Self {
        Self {
            theta,
            thetadot,
            x,
            xdot,
        }
    }

    /// Upright and at rest at heading position `x`.
    pub fn at(x: f64) -> Self {
        Self::new(0.0, 0.0, x, 0.0)
    }

    pub fn to_vector(self) -> Vector4<f64> {
        Vector4::new(self.theta, self.thetadot, self.x, self.xdot)
    }

    pub fn from_vector(v: &Vector4<f64>) -> Self {
        Self::new(v[0], v[1], v[2], v[3])
    }

    pub fn is_finite(&self) -> bool {
        self.to_vector().iter().all(|v| v.is_finite())
    }
}

/// The `λ(q)` snapshot pulled from the full robot.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Lambda {
    pub x_com: f64,
    pub z_com: f64,
    pub theta: f64,
    pub thetadot: f64,
    pub inertia: f64,
}

#[derive(Clone, Copy, Debug)]
pub struct Extraction {
    pub params: WipmParams,
    pub state: WipmState,
    pub lambda: Lambda,
}

/// Simplified-model parameters and state at the current full-robot state.
pub fn extract(desc: &RobotDescription, s: &RobotState) -> Result<Extraction> {
    let com = com_state(desc, s)?;
    let inertia = mass_matrix(desc, s)[(1, 1)];
    let params = WipmParams::new(com.mass, com.length(), inertia, desc)?;
    Ok(Extraction {
        params,
        state: WipmState::new(com.theta, com.thetadot, s.x, s.xdot),
        lambda: Lambda {
            x_com: com.x_com,
            z_com: com.z_com,
            theta: com.theta,
            thetadot: com.thetadot,
            inertia,
        },
    })
}

pub fn extract_params(desc: &RobotDescription, s: &RobotState) -> Result<WipmParams> {
    extract(desc, s).map(|e| e.params)
}

fn denominator(theta: f64, p: &WipmParams) -> Result<f64> {
    let den = p.alpha_w + theta.cos();
    if den.abs() <= 1e-9 {
        return Err(Error::Singular(format!("α_w + cos θ vanishes at θ = {theta}")));
    }
    Ok(den)
}

/// Heading acceleration from the zero dynamics.
pub fn heading_acceleration(x: &WipmState, u: f64, p: &WipmParams) -> Result<f64> {
    let (s, c) = x.theta.sin_cos();
    let den = denominator(x.theta, p)?;
    let r = p.radius;
    Ok((p.gravity * s + r * s * x.thetadot * x.thetadot - (p.beta_w + r * c) * u) / den)
}

/// Continuous dynamics `Ẋ = f_c(X, u)`.
pub fn f_c(x: &WipmState, u: f64, p: &WipmParams) -> Result<Vector4<f64>> {
    let xddot = heading_acceleration(x, u, p)?;
    Ok(Vector4::new(x.thetadot, u, x.xdot, xddot))
}

/// Explicit Euler step `X + dt f_c(X, u)`, the discretization used by the planners.
pub fn step(x: &WipmState, u: f64, p: &WipmParams, dt: f64) -> Result<WipmState> {
    if dt <= 0.0 {
        return Err(Error::Precondition(format!("step size must be positive, got {dt}")));
    }
    let dx = f_c(x, u, p)?;
    Ok(WipmState::from_vector(&(x.to_vector() + dx * dt)))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepJacobians {
    pub fx: Matrix4<f64>,
    pub fu: Vector4<f64>,
}

/// Analytic derivatives of [`step`] with respect to state and control.
pub fn step_jacobians(x: &WipmState, u: f64, p: &WipmParams, dt: f64) -> Result<StepJacobians> {
    let (s, c) = x.theta.sin_cos();
    let den = denominator(x.theta, p)?;
    let r = p.radius;
    let w2 = x.thetadot * x.thetadot;
    let num = p.gravity * s + r * s * w2 - (p.beta_w + r * c) * u;
    let d_theta = (p.gravity * c + r * c * w2 + r * s * u) / den + num * s / (den * den);
    let d_thetadot = 2.0 * r * s * x.thetadot / den;
    let d_u = -(p.beta_w + r * c) / den;

    let mut fx = Matrix4::identity();
    fx[(0, 1)] = dt;
    fx[(2, 3)] = dt;
    fx[(3, 0)] = dt * d_theta;
    fx[(3, 1)] = dt * d_thetadot;
    let fu = Vector4::new(0.0, dt, 0.0, dt * d_u);
    Ok(StepJacobians { fx, fu })
}

/// Zero-dynamics residual of the simplified model (before division by `M L`).
/// Zero iff `(ẍ, θ̈)` is consistent with some wheel torque.
pub fn wipm_zero_residual(x: &WipmState, xddot: f64, thetaddot: f64, p: &WipmParams) -> f64 {
    let (s, c) = x.theta.sin_cos();
    let (m, l, r) = (p.mass, p.length, p.radius);
    let x_com = l * s;
    let z_com = l * c;
    (p.heading_inertia() + m * z_com) * xddot + (r * m * z_com + p.inertia) * thetaddot
        - r * m * x_com * x.thetadot * x.thetadot
        - m * p.gravity * x_com
}

/// Combined wheel torque `τ_1 = M Z_com ẍ + I θ̈ − M X_com g` producing control `u`.
pub fn wheel_torque(x: &WipmState, u: f64, p: &WipmParams) -> Result<f64> {
    let xddot = heading_acceleration(x, u, p)?;
    let (s, c) = x.theta.sin_cos();
    Ok(p.mass * p.length * (c * xddot - s * p.gravity) + p.inertia * u)
}

/// Inverse of [`wheel_torque`]: the pitch acceleration a given wheel torque produces.
pub fn control_for_wheel_torque(x: &WipmState, tau1: f64, p: &WipmParams) -> Result<f64> {
    // τ_1 is affine in u
    let base = wheel_torque(x, 0.0, p)?;
    let slope = wheel_torque(x, 1.0, p)? - base;
    if slope.abs() < 1e-12 {
        return Err(Error::Singular("wheel torque has no authority over θ̈".into()));
    }
    Ok((tau1 - base) / slope)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{dvector, DVector};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn params() -> WipmParams {
        let d = RobotDescription::desk_scale(7).unwrap();
        let q = crate::kinematics::balanced_pose(&d, &dvector![0.0, 0.1, -0.2, 1.2, 0.6, -0.4, -0.5]).unwrap();
        extract_params(&d, &RobotState::at_rest(0.0, q)).unwrap()
    }

    #[test]
    fn one_link_extraction() {
        let d = RobotDescription::desk_scale(1).unwrap();
        let s = RobotState::new(0.4, 0.2, dvector![0.3], dvector![-0.5]);
        let e = extract(&d, &s).unwrap();
        let l = &d.links[0];
        assert!((e.params.length - l.com_offset).abs() < 1e-15);
        assert!((e.params.inertia - (l.mass * l.com_offset.powi(2) + l.inertia_com)).abs() < 1e-15);
        assert!((e.state.theta - 0.3).abs() < 1e-15);
        assert!((e.state.thetadot + 0.5).abs() < 1e-14);
        assert_eq!(e.state.x, 0.4);
        assert_eq!(e.state.xdot, 0.2);
    }

    #[test]
    fn folded_arms_balanced_about_base_axis() {
        // Fold links 2 and 3 to opposite sides of the base axis so their combined
        // CoM stays on it: m2 c2 sin a + m3 (l2 sin a + c3 sin b) = 0.
        let d = RobotDescription::desk_scale(3).unwrap();
        let (l2, l3) = (&d.links[1], &d.links[2]);
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..10 {
            let q1 = rng.random_range(-0.5..0.5);
            let a: f64 = rng.random_range(-0.2..0.2);
            let sin_b = -a.sin() * (l2.mass * l2.com_offset + l3.mass * l2.length) / (l3.mass * l3.com_offset);
            let b = sin_b.asin();
            let s = RobotState::at_rest(0.0, dvector![q1, a, b - a]);
            let e = extract(&d, &s).unwrap();
            assert!((e.state.theta - q1).abs() < 1e-12, "{} vs {q1}", e.state.theta);
        }
    }

    #[test]
    fn body_mass_constant() {
        let d = RobotDescription::desk_scale(7).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..10 {
            let q = DVector::from_fn(7, |_, _| rng.random_range(-0.3..0.3));
            let p = extract_params(&d, &RobotState::at_rest(0.0, q)).unwrap();
            assert_eq!(p.mass, d.body_mass());
        }
    }

    #[test]
    fn f_c_examples() {
        let p = params();
        let dx = f_c(&WipmState::new(0.0, 0.0, 1.0, 0.3), 0.0, &p).unwrap();
        assert_eq!(dx, Vector4::new(0.0, 0.0, 0.3, 0.0));
        let dx = f_c(&WipmState::new(0.1, 0.0, 0.0, 0.0), 0.0, &p).unwrap();
        let expected = p.gravity * 0.1f64.sin() / (p.alpha_w + 0.1f64.cos());
        assert!((dx[3] - expected).abs() < 1e-15);
        assert!(dx[3] > 0.0);
    }

    #[test]
    fn step_examples() {
        let p = params();
        let x = WipmState::new(0.0, 0.0, 0.5, 0.2);
        let next = step(&x, 0.0, &p, 0.01).unwrap();
        assert_eq!(next, WipmState::new(0.0, 0.0, 0.5 + 0.002, 0.2));

        let x = WipmState::new(0.05, 0.1, 0.0, 0.0);
        let dt = 1e-7;
        let fd = (step(&x, 0.7, &p, dt).unwrap().to_vector() - x.to_vector()) / dt;
        assert!((fd - f_c(&x, 0.7, &p).unwrap()).amax() < 1e-9);

        // holding a forward lean needs the base to keep accelerating
        let mut x = WipmState::new(0.05, 0.0, 0.0, 0.0);
        for _ in 0..100 {
            x = step(&x, 0.0, &p, 0.01).unwrap();
        }
        assert_eq!(x.theta, 0.05);
        assert!(x.xdot > 0.0 && x.x > 0.0);
        assert!(step(&x, 0.0, &p, 0.0).is_err());
    }

    #[test]
    fn jacobians_match_central_differences() {
        let p = params();
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let dt = 0.01;
        for _ in 0..100 {
            let x = WipmState::new(
                rng.random_range(-0.6..0.6),
                rng.random_range(-2.0..2.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            );
            let u = rng.random_range(-5.0..5.0);
            let jac = step_jacobians(&x, u, &p, dt).unwrap();
            let h = 1e-6;
            for j in 0..4 {
                let mut xp = x.to_vector();
                let mut xm = x.to_vector();
                xp[j] += h;
                xm[j] -= h;
                let fd = (step(&WipmState::from_vector(&xp), u, &p, dt).unwrap().to_vector()
                    - step(&WipmState::from_vector(&xm), u, &p, dt).unwrap().to_vector())
                    / (2.0 * h);
                for i in 0..4 {
                    let a = jac.fx[(i, j)];
                    assert!((fd[i] - a).abs() <= 1e-6 * a.abs().max(1.0), "({i},{j})");
                }
            }
            let fd = (step(&x, u + h, &p, dt).unwrap().to_vector() - step(&x, u - h, &p, dt).unwrap().to_vector())
                / (2.0 * h);
            assert!((fd - jac.fu).amax() < 1e-8);
            assert_eq!(jac.fx[(0, 1)], dt);
            let (_, c) = x.theta.sin_cos();
            let expected = -dt * (p.beta_w + p.radius * c) / (p.alpha_w + c);
            assert!((jac.fu[3] - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_residual_consistency() {
        let p = params();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..50 {
            let x = WipmState::new(rng.random_range(-0.5..0.5), rng.random_range(-2.0..2.0), 0.0, 0.0);
            let u = rng.random_range(-10.0..10.0);
            let xdd = heading_acceleration(&x, u, &p).unwrap();
            assert!(wipm_zero_residual(&x, xdd, u, &p).abs() < 1e-10);
            // ẍ is the unique root of the residual: solve the linear equation directly
            let r0 = wipm_zero_residual(&x, 0.0, u, &p);
            let r1 = wipm_zero_residual(&x, 1.0, u, &p);
            assert!((-r0 / (r1 - r0) - xdd).abs() < 1e-12);
        }
        assert_eq!(wipm_zero_residual(&WipmState::at(0.0), 0.0, 0.0, &p), 0.0);
        let x = WipmState::new(0.2, 0.0, 0.0, 0.0);
        let r = wipm_zero_residual(&x, 0.0, 0.0, &p);
        assert!((r + p.mass * p.gravity * p.length * 0.2f64.sin()).abs() < 1e-12);
    }

    #[test]
    fn wheel_torque_inverse() {
        let p = params();
        let x = WipmState::new(0.1, 0.4, 0.0, 0.2);
        let tau = wheel_torque(&x, 2.5, &p).unwrap();
        assert!((control_for_wheel_torque(&x, tau, &p).unwrap() - 2.5).abs() < 1e-12);
    }
}
