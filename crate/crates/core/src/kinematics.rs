//! Planar serial-chain forward kinematics.
//!
//! Positions are expressed in the axle frame (origin on the wheel axle, x
//! forward, z up) unless a function says otherwise. The absolute angle of link
//! `k` is `φ_k = q_1 + … + q_k`, measured from vertical.

use nalgebra::{DMatrix, DVector, Vector2};

use crate::error::{Error, Result};
use crate::model::{RobotDescription, RobotState};

#[derive(Clone, Debug, PartialEq)]
pub struct LinkPose {
    /// Inboard joint position, world frame.
    pub joint: Vector2<f64>,
    /// Absolute angle from vertical.
    pub angle: f64,
    /// CoM position, world frame.
    pub com: Vector2<f64>,
}

/// Per-link axial unit vectors and absolute angle rates, shared by most kinematic quantities.
pub(crate) struct Chain {
    /// `(sin φ_k, cos φ_k)`.
    pub dir: Vec<Vector2<f64>>,
    /// `∂dir/∂φ = (cos φ_k, −sin φ_k)`.
    pub perp: Vec<Vector2<f64>>,
    pub omega: Vec<f64>,
}

impl Chain {
    pub fn new(q: &DVector<f64>, qdot: &DVector<f64>) -> Self {
        let n = q.len();
        let mut dir = Vec::with_capacity(n);
        let mut perp = Vec::with_capacity(n);
        let mut omega = Vec::with_capacity(n);
        let (mut phi, mut w) = (0.0, 0.0);
        for k in 0..n {
            phi += q[k];
            w += qdot[k];
            let (s, c) = phi.sin_cos();
            dir.push(Vector2::new(s, c));
            perp.push(Vector2::new(c, -s));
            omega.push(w);
        }
        Self { dir, perp, omega }
    }
}

/// Lever arm of link `j` within the position of link `k`'s CoM.
#[inline]
pub(crate) fn lever(desc: &RobotDescription, k: usize, j: usize) -> f64 {
    if j < k {
        desc.links[j].length
    } else {
        desc.links[k].com_offset
    }
}

pub fn link_poses(desc: &RobotDescription, s: &RobotState) -> Vec<LinkPose> {
    let chain = Chain::new(&s.q, &s.qdot);
    let mut joint = Vector2::new(s.x, desc.wheel.radius);
    let mut angle = 0.0;
    let mut out = Vec::with_capacity(desc.n());
    for (k, link) in desc.links.iter().enumerate() {
        angle += s.q[k];
        let com = joint + chain.dir[k] * link.com_offset;
        out.push(LinkPose { joint, angle, com });
        joint += chain.dir[k] * link.length;
    }
    out
}

/// Axle-relative CoM of each link.
pub(crate) fn link_coms(desc: &RobotDescription, chain: &Chain) -> Vec<Vector2<f64>> {
    let mut joint = Vector2::zeros();
    let mut out = Vec::with_capacity(desc.n());
    for (k, link) in desc.links.iter().enumerate() {
        out.push(joint + chain.dir[k] * link.com_offset);
        joint += chain.dir[k] * link.length;
    }
    out
}

/// Jacobian (2×n) of link `k`'s CoM with respect to `q`.
pub(crate) fn link_com_jacobian(desc: &RobotDescription, chain: &Chain, k: usize) -> DMatrix<f64> {
    let n = desc.n();
    let mut jac = DMatrix::zeros(2, n);
    // column i sums lever arms of links i..=k
    let mut acc = Vector2::zeros();
    for i in (0..=k).rev() {
        acc += chain.perp[i] * lever(desc, k, i);
        jac[(0, i)] = acc.x;
        jac[(1, i)] = acc.y;
    }
    jac
}

/// `J̇ q̇` for link `k`'s CoM: centripetal acceleration from the angle rates.
pub(crate) fn link_com_bias(desc: &RobotDescription, chain: &Chain, k: usize) -> Vector2<f64> {
    (0..=k).fold(Vector2::zeros(), |a, j| {
        a - chain.dir[j] * (lever(desc, k, j) * chain.omega[j] * chain.omega[j])
    })
}

/// Body center-of-mass quantities relative to the wheel axle.
#[derive(Clone, Debug, PartialEq)]
pub struct ComState {
    pub x_com: f64,
    pub z_com: f64,
    /// `atan(X_com / Z_com)`.
    pub theta: f64,
    pub thetadot: f64,
    /// 2×n Jacobian of `(X_com, Z_com)` w.r.t. `q`.
    pub j_com: DMatrix<f64>,
    /// `J̇_com q̇`.
    pub jdot_qdot: Vector2<f64>,
    /// Total body mass.
    pub mass: f64,
}

impl ComState {
    pub fn length(&self) -> f64 {
        self.x_com.hypot(self.z_com)
    }

    /// Row `J_θ` with `θ̇ = J_θ q̇`.
    pub fn theta_jacobian(&self) -> DMatrix<f64> {
        let (s, c) = self.theta.sin_cos();
        let row = nalgebra::RowVector2::new(c, -s) * (c / self.z_com);
        let r = row * &self.j_com;
        DMatrix::from_iterator(1, r.len(), r.iter().copied())
    }

    /// `J̇_θ q̇`, from differentiating `θ̇ = (Z Ẋ − X Ż)/L²` along the flow.
    pub fn theta_jdot_qdot(&self, qdot: &DVector<f64>) -> f64 {
        let (x, z) = (self.x_com, self.z_com);
        let l2 = x * x + z * z;
        let v = &self.j_com * qdot;
        let b = self.jdot_qdot;
        (z * b.x - x * b.y) / l2 - 2.0 * self.thetadot * (x * v[0] + z * v[1]) / l2
    }
}

pub fn com_state(desc: &RobotDescription, s: &RobotState) -> Result<ComState> {
    s.check_dims(desc)?;
    let chain = Chain::new(&s.q, &s.qdot);
    let coms = link_coms(desc, &chain);
    let mass = desc.body_mass();
    let n = desc.n();
    let mut pos = Vector2::zeros();
    let mut j_com = DMatrix::zeros(2, n);
    let mut jdot_qdot = Vector2::zeros();
    for (k, link) in desc.links.iter().enumerate() {
        pos += coms[k] * link.mass;
        j_com += link_com_jacobian(desc, &chain, k) * link.mass;
        jdot_qdot += link_com_bias(desc, &chain, k) * link.mass;
    }
    pos /= mass;
    j_com /= mass;
    jdot_qdot /= mass;
    if pos.y <= 0.0 || !pos.y.is_finite() {
        return Err(Error::DegenerateCom { z_com: pos.y });
    }
    let theta = (pos.x / pos.y).atan();
    let (st, ct) = theta.sin_cos();
    let v = &j_com * &s.qdot;
    let thetadot = ct / pos.y * (ct * v[0] - st * v[1]);
    Ok(ComState {
        x_com: pos.x,
        z_com: pos.y,
        theta,
        thetadot,
        j_com,
        jdot_qdot,
        mass,
    })
}

/// End-effector (tip of the last link) kinematics in the axle frame.
#[derive(Clone, Debug, PartialEq)]
pub struct EndEffector {
    pub position: Vector2<f64>,
    /// Absolute orientation `Σ q_i`.
    pub angle: f64,
    pub velocity: Vector2<f64>,
    pub angle_rate: f64,
    /// 2×n position Jacobian.
    pub jacobian: DMatrix<f64>,
    pub jdot_qdot: Vector2<f64>,
}

pub fn end_effector(desc: &RobotDescription, s: &RobotState) -> EndEffector {
    let chain = Chain::new(&s.q, &s.qdot);
    let n = desc.n();
    let mut position = Vector2::zeros();
    let mut jdot_qdot = Vector2::zeros();
    let mut jacobian = DMatrix::zeros(2, n);
    let mut acc = Vector2::zeros();
    for j in (0..n).rev() {
        let l = desc.links[j].length;
        position += chain.dir[j] * l;
        jdot_qdot -= chain.dir[j] * (l * chain.omega[j] * chain.omega[j]);
        acc += chain.perp[j] * l;
        jacobian[(0, j)] = acc.x;
        jacobian[(1, j)] = acc.y;
    }
    let velocity = &jacobian * &s.qdot;
    EndEffector {
        position,
        angle: s.q.sum(),
        velocity: Vector2::new(velocity[0], velocity[1]),
        angle_rate: s.qdot.sum(),
        jacobian,
        jdot_qdot,
    }
}

/// Adjusts the base pitch `q[0]` so the body CoM sits directly above the axle,
/// keeping the other joint angles. Newton iteration on `X_com(q_1) = 0`.
pub fn balanced_pose(desc: &RobotDescription, q: &DVector<f64>) -> Result<DVector<f64>> {
    let n = desc.n();
    if q.len() != n {
        return Err(Error::Dimension { expected: n, got: q.len() });
    }
    let mut q = q.clone();
    let zero = DVector::zeros(n);
    for _ in 0..50 {
        let com = com_state(desc, &RobotState::new(0.0, 0.0, q.clone(), zero.clone()))?;
        // rotating the whole body about the axle: ∂X_com/∂q_1 = Z_com
        let step = com.x_com / com.z_com;
        q[0] -= step;
        if step.abs() < 1e-15 {
            return Ok(q);
        }
    }
    let com = com_state(desc, &RobotState::new(0.0, 0.0, q.clone(), zero))?;
    if com.x_com.abs() < 1e-12 {
        Ok(q)
    } else {
        Err(Error::Singular(format!(
            "could not balance pose, residual X_com = {:.3e}",
            com.x_com
        )))
    }
}
