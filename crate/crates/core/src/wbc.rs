//! Weighted-task QP controller over joint accelerations.
//!
//! Each task contributes rows `w J` and targets `w (ẍ* − J̇q̇)` with the
//! reference law `ẍ* = ẍ^d − K_p (x − x^d) − K_d (ẋ − ẋ^d)`. The cost is
//! `½‖P q̈ − b‖²`; torque limits enter through the isolated dynamics.

use log::warn;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dynamics::dynamics_terms;
use crate::error::{Error, Result};
use crate::isolation::{isolate, IsolatedDynamics};
use crate::kinematics::{com_state, end_effector};
use crate::model::{RobotDescription, RobotState};
use crate::mpc::MpcOutput;
use crate::qp::{solve_qp_with, QpOptions, QpProblem, QpStatus};

#[derive(Clone, Debug, PartialEq)]
pub enum TaskKind {
    /// Body CoM angle `θ`; its references come from the MPC output.
    ComAngle,
    /// End-effector position in the axle frame.
    EePosition,
    /// Absolute end-effector angle `Σq`.
    EeOrientation,
    /// Hold the listed joints (0-based) at fixed angles.
    Posture { joints: Vec<usize> },
    /// Damping target `q̈ = −K_d q̇` on every joint.
    Regularization,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TaskSpec {
    pub kind: TaskKind,
    pub weight: f64,
    pub kp: f64,
    pub kd: f64,
    pub pos: DVector<f64>,
    pub vel: DVector<f64>,
    pub acc: DVector<f64>,
}

impl TaskSpec {
    pub fn new(kind: TaskKind, weight: f64, kp: f64, kd: f64, pos: DVector<f64>) -> Self {
        let d = pos.len();
        Self {
            kind,
            weight,
            kp,
            kd,
            pos,
            vel: DVector::zeros(d),
            acc: DVector::zeros(d),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v >= 0.0;
        if !(ok(self.weight) && ok(self.kp) && ok(self.kd)) {
            return Err(Error::Precondition(format!("task {:?} has invalid weight or gains", self.kind)));
        }
        Ok(())
    }
}

/// Task-space quantities at a state.
#[derive(Clone, Debug)]
pub struct TaskJacobian {
    pub j: DMatrix<f64>,
    pub jdot_qdot: DVector<f64>,
    pub pos: DVector<f64>,
    pub vel: DVector<f64>,
}

pub fn task_jacobian(desc: &RobotDescription, s: &RobotState, kind: &TaskKind) -> Result<TaskJacobian> {
    let n = desc.n();
    s.check_dims(desc)?;
    Ok(match kind {
        TaskKind::ComAngle => {
            let com = com_state(desc, s)?;
            TaskJacobian {
                j: com.theta_jacobian(),
                jdot_qdot: DVector::from_element(1, com.theta_jdot_qdot(&s.qdot)),
                pos: DVector::from_element(1, com.theta),
                vel: DVector::from_element(1, com.thetadot),
            }
        }
        TaskKind::EePosition => {
            let ee = end_effector(desc, s);
            TaskJacobian {
                j: ee.jacobian,
                jdot_qdot: DVector::from_column_slice(ee.jdot_qdot.as_slice()),
                pos: DVector::from_column_slice(ee.position.as_slice()),
                vel: DVector::from_column_slice(ee.velocity.as_slice()),
            }
        }
        TaskKind::EeOrientation => TaskJacobian {
            j: DMatrix::from_element(1, n, 1.0),
            jdot_qdot: DVector::zeros(1),
            pos: DVector::from_element(1, s.q.sum()),
            vel: DVector::from_element(1, s.qdot.sum()),
        },
        TaskKind::Posture { joints } => {
            if let Some(&bad) = joints.iter().find(|&&j| j >= n) {
                return Err(Error::Precondition(format!("posture joint {bad} out of range")));
            }
            let mut j = DMatrix::zeros(joints.len(), n);
            for (r, &c) in joints.iter().enumerate() {
                j[(r, c)] = 1.0;
            }
            TaskJacobian {
                jdot_qdot: DVector::zeros(joints.len()),
                pos: DVector::from_iterator(joints.len(), joints.iter().map(|&c| s.q[c])),
                vel: DVector::from_iterator(joints.len(), joints.iter().map(|&c| s.qdot[c])),
                j,
            }
        }
        TaskKind::Regularization => TaskJacobian {
            j: DMatrix::identity(n, n),
            jdot_qdot: DVector::zeros(n),
            pos: s.q.clone(),
            vel: s.qdot.clone(),
        },
    })
}

/// Weight and reference-law gains of one task.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Gains {
    pub weight: f64,
    pub kp: f64,
    pub kd: f64,
}

impl Gains {
    pub const fn new(weight: f64, kp: f64, kd: f64) -> Self {
        Self { weight, kp, kd }
    }
}

/// Gains for the standard task stacks. Balance dominates, the end-effector
/// tasks come next and the damping regularization is a small tie-breaker.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaskWeights {
    pub theta: Gains,
    pub ee_position: Gains,
    pub ee_orientation: Gains,
    pub posture: Gains,
    pub reg_weight: f64,
    pub reg_damping: f64,
}

impl Default for TaskWeights {
    fn default() -> Self {
        Self {
            theta: Gains::new(100.0, 100.0, 20.0),
            ee_position: Gains::new(10.0, 100.0, 20.0),
            ee_orientation: Gains::new(10.0, 100.0, 20.0),
            posture: Gains::new(10.0, 100.0, 20.0),
            reg_weight: 0.1,
            reg_damping: 10.0,
        }
    }
}

fn task(kind: TaskKind, g: Gains, pos: DVector<f64>) -> TaskSpec {
    TaskSpec::new(kind, g.weight, g.kp, g.kd, pos)
}

/// Unified stack: balance plus holding the end effector at its pose in `s`.
pub fn unified_tasks(desc: &RobotDescription, s: &RobotState, w: &TaskWeights) -> Vec<TaskSpec> {
    let n = desc.n();
    let ee = end_effector(desc, s);
    let mut tasks = vec![task(TaskKind::ComAngle, w.theta, DVector::zeros(1))];
    if n > 1 {
        let pos = DVector::from_column_slice(ee.position.as_slice());
        tasks.push(task(TaskKind::EePosition, w.ee_position, pos));
        tasks.push(task(TaskKind::EeOrientation, w.ee_orientation, DVector::from_element(1, ee.angle)));
    }
    tasks.push(regularization(n, w.reg_weight, w.reg_damping));
    tasks
}

/// Balance plus a rigid hold of joints 2..n; the upper body does not react to pitch.
pub fn decoupled_tasks(desc: &RobotDescription, s: &RobotState, w: &TaskWeights) -> Vec<TaskSpec> {
    let n = desc.n();
    let mut tasks = vec![task(TaskKind::ComAngle, w.theta, DVector::zeros(1))];
    if n > 1 {
        let joints: Vec<usize> = (1..n).collect();
        let pos = DVector::from_iterator(n - 1, joints.iter().map(|&j| s.q[j]));
        tasks.push(task(TaskKind::Posture { joints }, w.posture, pos));
    }
    tasks.push(regularization(n, w.reg_weight, w.reg_damping));
    tasks
}

pub fn regularization(n: usize, weight: f64, damping: f64) -> TaskSpec {
    TaskSpec::new(TaskKind::Regularization, weight, 0.0, damping, DVector::zeros(n))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Fallback {
    None,
    /// Joint-limit rows were dropped to regain feasibility.
    DroppedJointLimits,
    /// No feasible QP: saturated gravity compensation was applied.
    GravityCompensation,
}

#[derive(Clone, Debug)]
pub struct WbcOptions {
    /// Look-ahead for the joint-limit braking rows.
    pub limit_horizon: f64,
    pub limit_margin: f64,
    pub warm_start: Option<Vec<usize>>,
}

impl Default for WbcOptions {
    fn default() -> Self {
        Self {
            limit_horizon: 0.01,
            limit_margin: 0.02,
            warm_start: None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct WbcOutput {
    pub qddot: DVector<f64>,
    pub torques: DVector<f64>,
    /// Per task `‖x − x^d‖`.
    pub task_errors: Vec<f64>,
    pub qp_status: QpStatus,
    pub active_constraints: Vec<usize>,
    pub qp_iterations: usize,
    pub fallback: Fallback,
}

/// `(P, b)` stack for the given tasks; the θ task takes its references from `reference`.
pub fn task_stack(
    desc: &RobotDescription,
    s: &RobotState,
    tasks: &[TaskSpec],
    reference: &MpcOutput,
) -> Result<(DMatrix<f64>, DVector<f64>, Vec<f64>)> {
    let n = desc.n();
    let mut rows: Vec<(DMatrix<f64>, DVector<f64>)> = Vec::new();
    let mut errors = Vec::with_capacity(tasks.len());
    for task in tasks {
        task.validate()?;
        let tj = task_jacobian(desc, s, &task.kind)?;
        let (pos, vel, acc) = match task.kind {
            TaskKind::ComAngle => (
                DVector::from_element(1, reference.theta_ref),
                DVector::from_element(1, reference.thetadot_ref),
                DVector::from_element(1, reference.theta_ddot_ref),
            ),
            _ => (task.pos.clone(), task.vel.clone(), task.acc.clone()),
        };
        if pos.len() != tj.pos.len() || vel.len() != tj.pos.len() || acc.len() != tj.pos.len() {
            return Err(Error::Dimension {
                expected: tj.pos.len(),
                got: pos.len(),
            });
        }
        let pos_err = &tj.pos - &pos;
        errors.push(match task.kind {
            TaskKind::Regularization => tj.vel.norm(),
            _ => pos_err.norm(),
        });
        let target = &acc - pos_err * task.kp - (&tj.vel - &vel) * task.kd;
        rows.push((&tj.j * task.weight, (target - &tj.jdot_qdot) * task.weight));
    }
    let total: usize = rows.iter().map(|r| r.0.nrows()).sum();
    let mut p = DMatrix::zeros(total, n);
    let mut b = DVector::zeros(total);
    let mut r = 0;
    for (jr, br) in rows {
        let k = jr.nrows();
        p.view_mut((r, 0), (k, n)).copy_from(&jr);
        b.rows_mut(r, k).copy_from(&br);
        r += k;
    }
    Ok((p, b, errors))
}

/// One-step-ahead braking rows keeping each joint inside its limits (minus margin).
pub fn joint_limit_rows(desc: &RobotDescription, s: &RobotState, horizon: f64, margin: f64) -> (DMatrix<f64>, DVector<f64>) {
    let n = desc.n();
    let k = 2.0 / (horizon * horizon);
    let mut rows: Vec<(usize, f64, f64)> = Vec::new();
    for (j, link) in desc.links.iter().enumerate() {
        let drift = s.q[j] + horizon * s.qdot[j];
        if link.angle_min.is_finite() {
            // q̈ ≥ k (q_min + margin − q − T q̇)
            rows.push((j, -1.0, k * (link.angle_min + margin - drift)));
        }
        if link.angle_max.is_finite() {
            rows.push((j, 1.0, -k * (link.angle_max - margin - drift)));
        }
    }
    let mut c = DMatrix::zeros(rows.len(), n);
    let mut d = DVector::zeros(rows.len());
    for (r, (j, sign, v)) in rows.into_iter().enumerate() {
        c[(r, j)] = sign;
        d[r] = v;
    }
    (c, d)
}

pub fn control_step(
    desc: &RobotDescription,
    s: &RobotState,
    tasks: &[TaskSpec],
    reference: &MpcOutput,
    opts: &WbcOptions,
) -> Result<WbcOutput> {
    if tasks.is_empty() {
        return Err(Error::Precondition("no tasks".into()));
    }
    let n = desc.n();
    let terms = dynamics_terms(desc, s)?;
    let iso = isolate(&terms, &terms.bias, desc.wheel.radius)?;
    let (p, b, task_errors) = task_stack(desc, s, tasks, reference)?;
    let hessian = p.transpose() * &p;
    let gradient = -(p.transpose() * &b);
    let limits = desc.torque_limits();
    let (tc, td) = iso.torque_constraint_rows(&limits);
    let (jc, jd) = joint_limit_rows(desc, s, opts.limit_horizon, opts.limit_margin);

    let stacked = |with_limits: bool| {
        let k = tc.nrows() + if with_limits { jc.nrows() } else { 0 };
        let mut c = DMatrix::zeros(k, n);
        let mut d = DVector::zeros(k);
        c.view_mut((0, 0), (tc.nrows(), n)).copy_from(&tc);
        d.rows_mut(0, tc.nrows()).copy_from(&td);
        if with_limits {
            c.view_mut((tc.nrows(), 0), (jc.nrows(), n)).copy_from(&jc);
            d.rows_mut(tc.nrows(), jc.nrows()).copy_from(&jd);
        }
        QpProblem::new(hessian.clone(), gradient.clone()).with_inequalities(c, d)
    };

    let qp_opts = QpOptions {
        warm_start: opts.warm_start.clone(),
        ..Default::default()
    };
    let mut sol = solve_qp_with(&stacked(true), &qp_opts)?;
    let mut fallback = Fallback::None;
    if sol.status == QpStatus::Infeasible && jc.nrows() > 0 {
        sol = solve_qp_with(&stacked(false), &QpOptions::default())?;
        fallback = Fallback::DroppedJointLimits;
    }
    if sol.status == QpStatus::Infeasible {
        warn!("whole-body QP infeasible; applying saturated gravity compensation");
        return gravity_compensation(&iso, &limits, task_errors, sol.iterations);
    }
    let torques = iso.inverse_dynamics(&sol.x);
    Ok(WbcOutput {
        qddot: sol.x,
        torques,
        task_errors,
        qp_status: sol.status,
        active_constraints: sol.active_set,
        qp_iterations: sol.iterations,
        fallback,
    })
}

fn gravity_compensation(
    iso: &IsolatedDynamics,
    limits: &DVector<f64>,
    task_errors: Vec<f64>,
    iterations: usize,
) -> Result<WbcOutput> {
    let torques = iso.bias.zip_map(limits, |t, l| t.clamp(-l, l));
    let qddot = iso.forward_map(&torques)?;
    Ok(WbcOutput {
        qddot,
        torques,
        task_errors,
        qp_status: QpStatus::Infeasible,
        active_constraints: Vec::new(),
        qp_iterations: iterations,
        fallback: Fallback::GravityCompensation,
    })
}
