//! Planar minimal-coordinate dynamics `A 𝐪̈ + C 𝐪̇ + Q = B Γ + Γ_fric`.
//!
//! Coordinates are ordered `(x, q_1, …, q_n)`. The Coriolis matrix is built
//! from Christoffel symbols of closed-form `∂A/∂q`, so `Ȧ − 2C` is exactly
//! skew-symmetric.

use nalgebra::{DMatrix, DVector, Vector2};

use crate::error::{Error, Result};
use crate::kinematics::{lever, link_coms, Chain};
use crate::model::{RobotDescription, RobotState};

/// Per-link lever sums. For link `k`, `jac[k][i] = ∂c_k/∂q_i` and
/// `curv[k][i] = −∂²c_k/∂q_i∂q_l` for any `l ≤ i`.
struct LinkSums {
    jac: Vec<Vec<Vector2<f64>>>,
    curv: Vec<Vec<Vector2<f64>>>,
}

impl LinkSums {
    fn new(desc: &RobotDescription, chain: &Chain) -> Self {
        let n = desc.n();
        let mut jac = Vec::with_capacity(n);
        let mut curv = Vec::with_capacity(n);
        for k in 0..n {
            let mut jk = vec![Vector2::zeros(); n];
            let mut ck = vec![Vector2::zeros(); n];
            let (mut pj, mut sj) = (Vector2::zeros(), Vector2::zeros());
            for i in (0..=k).rev() {
                let arm = lever(desc, k, i);
                pj += chain.perp[i] * arm;
                sj += chain.dir[i] * arm;
                jk[i] = pj;
                ck[i] = sj;
            }
            jac.push(jk);
            curv.push(ck);
        }
        Self { jac, curv }
    }

    /// `∂²c_k/∂q_i∂q_l`, zero unless both indices are ≤ k.
    #[inline]
    fn hessian(&self, k: usize, i: usize, l: usize) -> Vector2<f64> {
        if i > k || l > k {
            Vector2::zeros()
        } else {
            -self.curv[k][i.max(l)]
        }
    }
}

/// Partition of `A` used by the isolation step.
#[derive(Clone, Debug, PartialEq)]
pub struct Blocks {
    pub a_xx: f64,
    pub a_xq: DVector<f64>,
    pub a_qq: DMatrix<f64>,
}

impl Blocks {
    /// Extracts the blocks by index from the full mass matrix.
    pub fn of(mass: &DMatrix<f64>) -> Self {
        let n = mass.nrows() - 1;
        Self {
            a_xx: mass[(0, 0)],
            a_xq: mass.view((1, 0), (n, 1)).column(0).into_owned(),
            a_qq: mass.view((1, 1), (n, n)).into_owned(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct BiasTerms {
    /// Coriolis/centrifugal matrix from Christoffel symbols.
    pub coriolis: DMatrix<f64>,
    /// `∂V/∂𝐪`.
    pub gravity: DVector<f64>,
    /// Frictional generalized force `Γ_fric = −diag(0, d) 𝐪̇`; enters the right-hand side.
    pub friction: DVector<f64>,
}

/// Everything the controllers need at one state.
#[derive(Clone, Debug)]
pub struct DynamicsTerms {
    pub mass: DMatrix<f64>,
    /// `C 𝐪̇ + Q − Γ_fric`.
    pub bias: DVector<f64>,
    pub gravity: DVector<f64>,
    pub blocks: Blocks,
}

pub fn mass_matrix(desc: &RobotDescription, s: &RobotState) -> DMatrix<f64> {
    let chain = Chain::new(&s.q, &s.qdot);
    let sums = LinkSums::new(desc, &chain);
    assemble_mass(desc, &sums)
}

fn assemble_mass(desc: &RobotDescription, sums: &LinkSums) -> DMatrix<f64> {
    let n = desc.n();
    let mut a = DMatrix::zeros(n + 1, n + 1);
    a[(0, 0)] = desc.wheel_effective_mass() + desc.body_mass();
    for (k, link) in desc.links.iter().enumerate() {
        let m = link.mass;
        for i in 0..=k {
            a[(0, i + 1)] += m * sums.jac[k][i].x;
            for j in i..=k {
                a[(i + 1, j + 1)] += m * sums.jac[k][i].dot(&sums.jac[k][j]) + link.inertia_com;
            }
        }
    }
    for i in 0..=n {
        for j in 0..i {
            a[(i, j)] = a[(j, i)];
        }
    }
    a
}

/// `∂A/∂q_l` for each body coordinate `l` (A does not depend on `x`).
pub fn mass_matrix_partials(desc: &RobotDescription, s: &RobotState) -> Vec<DMatrix<f64>> {
    let chain = Chain::new(&s.q, &s.qdot);
    let sums = LinkSums::new(desc, &chain);
    partials(desc, &sums)
}

fn partials(desc: &RobotDescription, sums: &LinkSums) -> Vec<DMatrix<f64>> {
    let n = desc.n();
    let mut out = vec![DMatrix::zeros(n + 1, n + 1); n];
    for (l, da) in out.iter_mut().enumerate() {
        for (k, link) in desc.links.iter().enumerate().skip(l) {
            let m = link.mass;
            for i in 0..=k {
                let h_il = sums.hessian(k, i, l);
                da[(0, i + 1)] += m * h_il.x;
                for j in i..=k {
                    let h_jl = sums.hessian(k, j, l);
                    da[(i + 1, j + 1)] += m * (h_il.dot(&sums.jac[k][j]) + sums.jac[k][i].dot(&h_jl));
                }
            }
        }
        for i in 0..=n {
            for j in 0..i {
                da[(i, j)] = da[(j, i)];
            }
        }
    }
    out
}

fn coriolis_from_partials(partials: &[DMatrix<f64>], v: &DVector<f64>) -> DMatrix<f64> {
    let dim = v.len();
    // ∂_c A with c = 0 (heading) identically zero
    let d = |c: usize, a: usize, b: usize| if c == 0 { 0.0 } else { partials[c - 1][(a, b)] };
    let mut c = DMatrix::zeros(dim, dim);
    for a in 0..dim {
        for b in 0..dim {
            let mut sum = 0.0;
            for k in 0..dim {
                let gamma = 0.5 * (d(k, a, b) + d(b, a, k) - d(a, b, k));
                sum += gamma * v[k];
            }
            c[(a, b)] = sum;
        }
    }
    c
}

fn gravity_vector(desc: &RobotDescription, sums: &LinkSums) -> DVector<f64> {
    let n = desc.n();
    let mut g = DVector::zeros(n + 1);
    for (k, link) in desc.links.iter().enumerate() {
        for i in 0..=k {
            g[i + 1] += link.mass * desc.gravity * sums.jac[k][i].y;
        }
    }
    g
}

fn friction_vector(desc: &RobotDescription, s: &RobotState) -> DVector<f64> {
    let n = desc.n();
    let mut f = DVector::zeros(n + 1);
    for (i, link) in desc.links.iter().enumerate() {
        f[i + 1] = -link.damping * s.qdot[i];
    }
    f
}

pub fn bias_terms(desc: &RobotDescription, s: &RobotState) -> BiasTerms {
    let chain = Chain::new(&s.q, &s.qdot);
    let sums = LinkSums::new(desc, &chain);
    let parts = partials(desc, &sums);
    BiasTerms {
        coriolis: coriolis_from_partials(&parts, &s.velocities()),
        gravity: gravity_vector(desc, &sums),
        friction: friction_vector(desc, s),
    }
}

pub fn dynamics_terms(desc: &RobotDescription, s: &RobotState) -> Result<DynamicsTerms> {
    s.check_dims(desc)?;
    let chain = Chain::new(&s.q, &s.qdot);
    let sums = LinkSums::new(desc, &chain);
    let mass = assemble_mass(desc, &sums);
    let v = s.velocities();
    let coriolis = coriolis_from_partials(&partials(desc, &sums), &v);
    let gravity = gravity_vector(desc, &sums);
    let bias = &coriolis * &v + &gravity - friction_vector(desc, s);
    let blocks = Blocks::of(&mass);
    Ok(DynamicsTerms {
        mass,
        bias,
        gravity,
        blocks,
    })
}

/// Generalized force from body torques `Γ = (τ_1, …, τ_n)`: the combined wheel
/// torque `τ_1` drives the heading row with `−τ_1/R` and the base pitch with `+τ_1`.
pub fn actuation(desc: &RobotDescription, torques: &DVector<f64>) -> DVector<f64> {
    let n = desc.n();
    let mut f = DVector::zeros(n + 1);
    f[0] = -torques[0] / desc.wheel.radius;
    f.rows_mut(1, n).copy_from(torques);
    f
}

/// Per-wheel torques `(τ_L, τ_R)` realizing the combined torque `τ_1 = −(τ_L + τ_R)`.
pub fn wheel_torques(tau1: f64) -> (f64, f64) {
    (-0.5 * tau1, -0.5 * tau1)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Accelerations {
    pub xddot: f64,
    pub qddot: DVector<f64>,
}

impl Accelerations {
    pub fn from_vector(v: &DVector<f64>) -> Self {
        let n = v.len() - 1;
        Self {
            xddot: v[0],
            qddot: v.rows(1, n).into_owned(),
        }
    }

    pub fn to_vector(&self) -> DVector<f64> {
        let n = self.qddot.len();
        let mut v = DVector::zeros(n + 1);
        v[0] = self.xddot;
        v.rows_mut(1, n).copy_from(&self.qddot);
        v
    }
}

pub fn forward_dynamics(desc: &RobotDescription, s: &RobotState, torques: &DVector<f64>) -> Result<Accelerations> {
    let terms = dynamics_terms(desc, s)?;
    forward_dynamics_with(desc, &terms, torques)
}

pub fn forward_dynamics_with(
    desc: &RobotDescription,
    terms: &DynamicsTerms,
    torques: &DVector<f64>,
) -> Result<Accelerations> {
    if torques.len() != desc.n() {
        return Err(Error::Dimension {
            expected: desc.n(),
            got: torques.len(),
        });
    }
    let rhs = actuation(desc, torques) - &terms.bias;
    let chol = terms
        .mass
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Singular("mass matrix is not positive definite".into()))?;
    Ok(Accelerations::from_vector(&chol.solve(&rhs)))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Energy {
    pub kinetic: f64,
    pub potential: f64,
}

impl Energy {
    pub fn total(&self) -> f64 {
        self.kinetic + self.potential
    }
}

pub fn total_energy(desc: &RobotDescription, s: &RobotState) -> Energy {
    let chain = Chain::new(&s.q, &s.qdot);
    let sums = LinkSums::new(desc, &chain);
    let a = assemble_mass(desc, &sums);
    let v = s.velocities();
    let kinetic = 0.5 * v.dot(&(&a * &v));
    let potential = link_coms(desc, &chain)
        .iter()
        .zip(&desc.links)
        .map(|(c, l)| l.mass * desc.gravity * (desc.wheel.radius + c.y))
        .sum();
    Energy { kinetic, potential }
}

/// Left side of the full-model zero dynamics: `τ_1` eliminated between the
/// heading and base-pitch rows. Zero iff the accelerations are consistent with
/// some wheel torque.
pub fn full_zero_dynamics_residual(desc: &RobotDescription, s: &RobotState, acc: &Accelerations) -> Result<f64> {
    let terms = dynamics_terms(desc, s)?;
    let row = &terms.mass * acc.to_vector() + &terms.bias;
    Ok(desc.wheel.radius * row[0] + row[1])
}
