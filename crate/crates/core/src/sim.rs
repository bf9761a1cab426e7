//! Closed-loop simulation: RK4 plant, whole-body QP at the inner rate and
//! MPC at the sampling period, following a full-horizon DDP reference.

use std::fs;
use std::path::Path;

use log::{debug, info, warn};
use nalgebra::{DVector, Vector4};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::ddp::{CostSpec, DdpOptions, Reference, Trajectory};
use crate::dynamics::{forward_dynamics, total_energy, Energy};
use crate::error::{Error, Result};
use crate::kinematics::{balanced_pose, com_state, end_effector};
use crate::model::{RobotDescription, RobotState};
use crate::mpc::{make_reference, whole_steps, Mpc, MpcConfig, MpcOutput};
use crate::qp::QpStatus;
use crate::wbc::{control_step, decoupled_tasks, unified_tasks, Fallback, TaskSpec, TaskWeights, WbcOptions, WbcOutput};
use crate::wipm::{extract, Lambda, WipmState};

/// Divergence guard on the CoM angle.
const MAX_THETA: f64 = 1.0;
/// Goal band for the completion time.
pub const GOAL_TOLERANCE: f64 = 0.05;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub dt_physics: f64,
    pub wbc_period: f64,
    pub mpc_period: f64,
    pub duration: f64,
    pub goal: f64,
    pub x0: f64,
    /// Nominal joint angles; the base pitch is re-solved so the robot starts balanced.
    pub pose: Option<Vec<f64>>,
    pub seed: u64,
    /// Standard deviation of the initial-state perturbation (0 disables it).
    pub noise_std: f64,
    /// Record every k-th physics step.
    pub log_every: usize,
    pub decoupled: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            dt_physics: 1e-3,
            wbc_period: 1e-3,
            mpc_period: 0.01,
            duration: 20.0,
            goal: 2.0,
            x0: 0.0,
            pose: None,
            seed: 0,
            noise_std: 0.0,
            log_every: 1,
            decoupled: false,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, reason: &str| {
            Err(Error::Validation {
                field: format!("sim.{field}"),
                reason: reason.into(),
            })
        };
        let finite = [self.dt_physics, self.wbc_period, self.mpc_period, self.duration, self.goal, self.x0, self.noise_std];
        if finite.iter().any(|v| !v.is_finite()) {
            return bad("*", "must be finite");
        }
        if self.dt_physics <= 0.0 {
            return bad("dt_physics", "must be positive");
        }
        if !(self.dt_physics <= self.wbc_period && self.wbc_period <= self.mpc_period) {
            return bad("wbc_period", "need dt_physics ≤ wbc_period ≤ mpc_period");
        }
        if whole_steps(self.wbc_period, self.dt_physics).is_none() {
            return bad("wbc_period", "must be a multiple of dt_physics");
        }
        if whole_steps(self.mpc_period, self.dt_physics).is_none() {
            return bad("mpc_period", "must be a multiple of dt_physics");
        }
        if whole_steps(self.duration, self.mpc_period).is_none() {
            return bad("duration", "must be a positive multiple of mpc_period");
        }
        if self.noise_std < 0.0 {
            return bad("noise_std", "must be non-negative");
        }
        if self.log_every == 0 {
            return bad("log_every", "must be at least 1");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControllerConfig {
    pub horizon: f64,
    pub planner_dt: f64,
    pub mpc_running: [f64; 4],
    pub mpc_control: f64,
    pub mpc_terminal: [f64; 4],
    pub ddp_running: [f64; 4],
    pub ddp_control: f64,
    pub ddp_terminal: [f64; 4],
    pub ddp_max_iters: usize,
    pub warm_start: bool,
    pub tasks: TaskWeights,
    pub limit_margin: f64,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        let mpc = MpcConfig::default();
        let ddp = CostSpec::planner(WipmState::default());
        Self {
            horizon: mpc.horizon,
            planner_dt: mpc.dt,
            mpc_running: mpc.cost.running.into(),
            mpc_control: mpc.cost.control,
            mpc_terminal: mpc.cost.terminal.into(),
            ddp_running: ddp.running.into(),
            ddp_control: ddp.control,
            ddp_terminal: ddp.terminal.into(),
            ddp_max_iters: DdpOptions::default().max_iters,
            warm_start: true,
            tasks: TaskWeights::default(),
            limit_margin: WbcOptions::default().limit_margin,
        }
    }
}

impl ControllerConfig {
    pub fn mpc_config(&self, sample_period: f64) -> MpcConfig {
        MpcConfig {
            sample_period,
            horizon: self.horizon,
            dt: self.planner_dt,
            cost: CostSpec {
                running: Vector4::from(self.mpc_running),
                control: self.mpc_control,
                terminal: Vector4::from(self.mpc_terminal),
                reference: Reference::Fixed(WipmState::default()),
            },
            warm_start: self.warm_start,
            ddp: DdpOptions {
                max_iters: self.ddp_max_iters,
                ..Default::default()
            },
        }
    }

    pub fn planner_cost(&self, goal: WipmState) -> CostSpec {
        CostSpec {
            running: Vector4::from(self.ddp_running),
            control: self.ddp_control,
            terminal: Vector4::from(self.ddp_terminal),
            reference: Reference::Fixed(goal),
        }
    }
}

/// Contents of a simulation config file: `[sim]` and `[controller]` sections.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimFile {
    pub sim: SimConfig,
    pub controller: ControllerConfig,
}

impl SimFile {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let f: SimFile = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        f.sim.validate()?;
        Ok(f)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml_str(&text)
    }
}

/// Default nominal pose: a gently folded arm holding the tip level.
pub fn nominal_pose(n: usize) -> DVector<f64> {
    match n {
        1 => DVector::zeros(1),
        3 => DVector::from_row_slice(&[0.0, 0.6, -0.6]),
        7 => DVector::from_row_slice(&[0.0, 0.0, 0.0, 0.0, 0.9, 0.6, -1.5]),
        _ => DVector::from_fn(n, |i, _| match i {
            0 => 0.0,
            i if i == n - 1 => -0.5,
            _ => 0.5 / (n - 2) as f64,
        }),
    }
}

/// Balanced starting state from the config (pose, x0 and optional seeded noise).
pub fn initial_state(desc: &RobotDescription, cfg: &SimConfig) -> Result<RobotState> {
    let n = desc.n();
    let pose = match &cfg.pose {
        Some(p) if p.len() != n => {
            return Err(Error::Validation {
                field: "sim.pose".into(),
                reason: format!("expected {n} angles, got {}", p.len()),
            })
        }
        Some(p) => DVector::from_row_slice(p),
        None => nominal_pose(n),
    };
    let q = balanced_pose(desc, &pose)?;
    let mut s = RobotState::at_rest(cfg.x0, q);
    if cfg.noise_std > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let normal = Normal::new(0.0, cfg.noise_std).map_err(|e| Error::Precondition(e.to_string()))?;
        for i in 0..n {
            s.q[i] += normal.sample(&mut rng);
            s.qdot[i] += normal.sample(&mut rng);
        }
    }
    Ok(s)
}

/// Classical RK4 on the full model with the torques held constant.
pub fn integrate_step(desc: &RobotDescription, s: &RobotState, torques: &DVector<f64>, dt: f64) -> Result<RobotState> {
    if !(dt > 0.0) {
        return Err(Error::Precondition(format!("integration step must be positive, got {dt}")));
    }
    let deriv = |st: &RobotState| -> Result<(f64, DVector<f64>, f64, DVector<f64>)> {
        let a = forward_dynamics(desc, st, torques)?;
        Ok((st.xdot, st.qdot.clone(), a.xddot, a.qddot))
    };
    let offset = |k: &(f64, DVector<f64>, f64, DVector<f64>), h: f64| {
        RobotState::new(s.x + h * k.0, s.xdot + h * k.2, &s.q + &k.1 * h, &s.qdot + &k.3 * h)
    };
    let k1 = deriv(s)?;
    let k2 = deriv(&offset(&k1, dt / 2.0))?;
    let k3 = deriv(&offset(&k2, dt / 2.0))?;
    let k4 = deriv(&offset(&k3, dt))?;
    let w = dt / 6.0;
    let next = RobotState::new(
        s.x + w * (k1.0 + 2.0 * k2.0 + 2.0 * k3.0 + k4.0),
        s.xdot + w * (k1.2 + 2.0 * k2.2 + 2.0 * k3.2 + k4.2),
        &s.q + (&k1.1 + &k2.1 * 2.0 + &k3.1 * 2.0 + &k4.1) * w,
        &s.qdot + (&k1.3 + &k2.3 * 2.0 + &k3.3 * 2.0 + &k4.3) * w,
    );
    if !next.is_finite() {
        return Err(Error::NonFinite {
            context: "RK4 step".into(),
        });
    }
    Ok(next)
}

#[derive(Clone, Debug)]
pub struct SimRecord {
    pub t: f64,
    pub state: RobotState,
    /// Simplified state of the robot (NaN if extraction failed).
    pub wipm: WipmState,
    /// Reference sample at this time.
    pub traj: WipmState,
    pub lambda: Option<Lambda>,
    /// Held `θ̈` reference.
    pub u: f64,
    /// Torques applied to the plant.
    pub torques: DVector<f64>,
    /// Torques returned by the QP before saturation.
    pub commanded: DVector<f64>,
    pub task_errors: Vec<f64>,
    pub energy: Energy,
    pub ee: [f64; 3],
    pub qp_status: QpStatus,
    pub fallback: Fallback,
    pub qp_iterations: usize,
    pub mpc_iters: usize,
    pub mpc_held: bool,
    pub mpc_called: bool,
    pub wbc_called: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimSummary {
    pub goal: f64,
    pub duration: f64,
    pub final_time: f64,
    pub final_x: f64,
    pub terminal_x_error: f64,
    pub terminal_theta: f64,
    pub peak_abs_theta: f64,
    /// Largest `|φ_ee − φ_ee(0)|`, rad.
    pub peak_orientation_deviation: f64,
    pub peak_orientation_deviation_deg: f64,
    /// First time after which `|x − goal| < 0.05` holds for the rest of the run.
    pub completion_time: Option<f64>,
    pub mpc_calls: usize,
    pub wbc_calls: usize,
    pub qp_not_optimal: usize,
    pub fallbacks: usize,
    pub mpc_holds: usize,
    /// Applied torques above the limit (saturation makes this zero unless the limits are broken).
    pub torque_violations: usize,
    /// QP-optimal outputs whose torques exceeded a limit by more than 1e-8.
    pub qp_torque_violations: usize,
    pub reference_converged: bool,
    pub reference_iterations: usize,
    pub decoupled: bool,
    pub diverged: Option<String>,
}

#[derive(Clone, Debug)]
pub struct SimRun {
    pub records: Vec<SimRecord>,
    pub reference: Trajectory,
    pub summary: SimSummary,
}

impl SimRun {
    pub fn diverged(&self) -> bool {
        self.summary.diverged.is_some()
    }
}

fn limits_exceeded(t: &DVector<f64>, limits: &DVector<f64>, tol: f64) -> bool {
    t.iter().zip(limits.iter()).any(|(v, l)| v.abs() > l + tol)
}

pub fn run_closed_loop(desc: &RobotDescription, cfg: &SimConfig, ctrl: &ControllerConfig) -> Result<SimRun> {
    cfg.validate()?;
    let s0 = initial_state(desc, cfg)?;
    let mpc_cfg = ctrl.mpc_config(cfg.mpc_period);
    mpc_cfg.validate()?;

    let ext0 = extract(desc, &s0)?;
    let goal = WipmState::at(cfg.goal);
    let reference = make_reference(&ext0.params, ext0.state, goal, cfg.duration, &ctrl.planner_cost(goal), &mpc_cfg)?;
    info!(
        "reference plan: {} steps, {} iterations, converged {}",
        reference.horizon(),
        reference.iterations,
        reference.converged
    );
    run_with_reference(desc, cfg, ctrl, s0, reference)
}

/// Closed loop from `s0` tracking a precomputed reference.
pub fn run_with_reference(
    desc: &RobotDescription,
    cfg: &SimConfig,
    ctrl: &ControllerConfig,
    s0: RobotState,
    reference: Trajectory,
) -> Result<SimRun> {
    cfg.validate()?;
    let mpc_cfg = ctrl.mpc_config(cfg.mpc_period);
    let mut mpc = Mpc::new(mpc_cfg)?;
    let tasks: Vec<TaskSpec> = if cfg.decoupled {
        decoupled_tasks(desc, &s0, &ctrl.tasks)
    } else {
        unified_tasks(desc, &s0, &ctrl.tasks)
    };
    let limits = desc.torque_limits();
    let dt = cfg.dt_physics;
    let steps = whole_steps(cfg.duration, dt).ok_or_else(|| Error::Validation {
        field: "sim.duration".into(),
        reason: "must be a multiple of dt_physics".into(),
    })?;
    let mpc_every = whole_steps(cfg.mpc_period, dt).unwrap_or(1);
    let wbc_every = whole_steps(cfg.wbc_period, dt).unwrap_or(1);
    let ee0 = end_effector(desc, &s0).angle;

    let mut s = s0;
    let mut records = Vec::with_capacity(steps / cfg.log_every + 2);
    let mut mpc_out = MpcOutput::hold(reference.state_at(0));
    let mut wbc_out: Option<WbcOutput> = None;
    let mut applied = DVector::zeros(desc.n());
    let mut wbc_opts = WbcOptions {
        limit_horizon: cfg.mpc_period,
        limit_margin: ctrl.limit_margin,
        warm_start: None,
    };
    let mut counts = Counts::default();
    let mut peaks = Peaks::new(cfg.goal);
    peaks.observe(0.0, &s, extract(desc, &s).map(|e| e.state.theta).unwrap_or(f64::NAN), ee0);
    let mut diverged = None;

    for k in 0..=steps {
        let t = k as f64 * dt;
        let ref_index = ((t / reference.dt).round() as usize).min(reference.states.len() - 1);
        let last = k == steps;
        let mpc_called = !last && k % mpc_every == 0;
        let wbc_called = !last && k % wbc_every == 0;

        if mpc_called {
            counts.mpc_calls += 1;
            match mpc.step(ref_index, &s, desc, &reference) {
                Ok(out) => {
                    counts.mpc_holds += out.held as usize;
                    mpc_out = out;
                }
                Err(e) => {
                    diverged = Some(format!("MPC failed at t = {t:.3}: {e}"));
                }
            }
        }
        if diverged.is_none() && wbc_called {
            counts.wbc_calls += 1;
            match control_step(desc, &s, &tasks, &mpc_out, &wbc_opts) {
                Ok(out) => {
                    if out.qp_status != QpStatus::Optimal {
                        counts.qp_not_optimal += 1;
                    }
                    if out.fallback != Fallback::None {
                        counts.fallbacks += 1;
                        debug!("wbc fallback {:?} at t = {t:.3}", out.fallback);
                    }
                    if out.qp_status == QpStatus::Optimal && limits_exceeded(&out.torques, &limits, 1e-8) {
                        counts.qp_torque_violations += 1;
                    }
                    applied = out.torques.zip_map(&limits, |v, l| v.clamp(-l, l));
                    wbc_opts.warm_start = Some(out.active_constraints.clone());
                    wbc_out = Some(out);
                }
                Err(e) => diverged = Some(format!("WBC failed at t = {t:.3}: {e}")),
            }
        }
        if limits_exceeded(&applied, &limits, 0.0) {
            counts.torque_violations += 1;
        }

        if k % cfg.log_every == 0 || last || diverged.is_some() {
            records.push(record(desc, &s, t, &reference, ref_index, &mpc_out, wbc_out.as_ref(), &applied, mpc_called, wbc_called));
        }
        if last || diverged.is_some() {
            break;
        }
        match integrate_step(desc, &s, &applied, dt) {
            Ok(next) => s = next,
            Err(e) => {
                diverged = Some(format!("plant integration failed at t = {t:.3}: {e}"));
                break;
            }
        }
        match com_state(desc, &s) {
            Ok(c) if c.theta.abs() <= MAX_THETA => peaks.observe(t + dt, &s, c.theta, ee0),
            Ok(c) => diverged = Some(format!("fell over at t = {:.3} (θ = {:.3} rad)", t + dt, c.theta)),
            Err(e) => diverged = Some(format!("degenerate CoM at t = {:.3}: {e}", t + dt)),
        }
        if let Some(reason) = &diverged {
            warn!("{reason}");
            records.push(record(desc, &s, t + dt, &reference, ref_index, &mpc_out, wbc_out.as_ref(), &applied, false, false));
            break;
        }
    }

    let summary = summarize(cfg, &records, &peaks, &counts, &reference, diverged);
    Ok(SimRun {
        records,
        reference,
        summary,
    })
}

/// Running extremes over every physics step, independent of log decimation.
struct Peaks {
    goal: f64,
    abs_theta: f64,
    orientation: f64,
    /// Start of the current stretch inside the goal band.
    in_band_since: Option<f64>,
}

impl Peaks {
    fn new(goal: f64) -> Self {
        Self {
            goal,
            abs_theta: 0.0,
            orientation: 0.0,
            in_band_since: None,
        }
    }

    fn observe(&mut self, t: f64, s: &RobotState, theta: f64, ee0: f64) {
        self.abs_theta = self.abs_theta.max(theta.abs());
        self.orientation = self.orientation.max((s.q.sum() - ee0).abs());
        if (s.x - self.goal).abs() < GOAL_TOLERANCE {
            self.in_band_since.get_or_insert(t);
        } else {
            self.in_band_since = None;
        }
    }
}

#[derive(Default)]
struct Counts {
    mpc_calls: usize,
    wbc_calls: usize,
    qp_not_optimal: usize,
    fallbacks: usize,
    mpc_holds: usize,
    torque_violations: usize,
    qp_torque_violations: usize,
}

#[allow(clippy::too_many_arguments)]
fn record(
    desc: &RobotDescription,
    s: &RobotState,
    t: f64,
    reference: &Trajectory,
    ref_index: usize,
    mpc: &MpcOutput,
    wbc: Option<&WbcOutput>,
    applied: &DVector<f64>,
    mpc_called: bool,
    wbc_called: bool,
) -> SimRecord {
    let (wipm, lambda) = match extract(desc, s) {
        Ok(e) => (e.state, Some(e.lambda)),
        Err(_) => (WipmState::new(f64::NAN, f64::NAN, s.x, s.xdot), None),
    };
    let ee = end_effector(desc, s);
    SimRecord {
        t,
        state: s.clone(),
        wipm,
        traj: reference.state_at(ref_index),
        lambda,
        u: mpc.theta_ddot_ref,
        torques: applied.clone(),
        commanded: wbc.map(|w| w.torques.clone()).unwrap_or_else(|| applied.clone()),
        task_errors: wbc.map(|w| w.task_errors.clone()).unwrap_or_default(),
        energy: total_energy(desc, s),
        ee: [ee.position.x, ee.position.y, ee.angle],
        qp_status: wbc.map(|w| w.qp_status).unwrap_or(QpStatus::Optimal),
        fallback: wbc.map(|w| w.fallback).unwrap_or(Fallback::None),
        qp_iterations: wbc.map(|w| w.qp_iterations).unwrap_or(0),
        mpc_iters: mpc.iterations,
        mpc_held: mpc.held,
        mpc_called,
        wbc_called,
    }
}

fn summarize(
    cfg: &SimConfig,
    records: &[SimRecord],
    peaks: &Peaks,
    counts: &Counts,
    reference: &Trajectory,
    diverged: Option<String>,
) -> SimSummary {
    let last = records.last().expect("at least one record");
    SimSummary {
        goal: cfg.goal,
        duration: cfg.duration,
        final_time: last.t,
        final_x: last.state.x,
        terminal_x_error: last.state.x - cfg.goal,
        terminal_theta: last.wipm.theta,
        peak_abs_theta: peaks.abs_theta,
        peak_orientation_deviation: peaks.orientation,
        peak_orientation_deviation_deg: peaks.orientation.to_degrees(),
        completion_time: if diverged.is_some() { None } else { peaks.in_band_since },
        mpc_calls: counts.mpc_calls,
        wbc_calls: counts.wbc_calls,
        qp_not_optimal: counts.qp_not_optimal,
        fallbacks: counts.fallbacks,
        mpc_holds: counts.mpc_holds,
        torque_violations: counts.torque_violations,
        qp_torque_violations: counts.qp_torque_violations,
        reference_converged: reference.converged,
        reference_iterations: reference.iterations,
        decoupled: cfg.decoupled,
        diverged,
    }
}

/// First logged time after which the heading stays inside the goal band.
pub fn completion_time(records: &[SimRecord], goal: f64) -> Option<f64> {
    let mut first = None;
    for r in records.iter().rev() {
        if (r.state.x - goal).abs() < GOAL_TOLERANCE {
            first = Some(r.t);
        } else {
            break;
        }
    }
    first
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dvector;

    #[test]
    fn upright_rest_is_an_equilibrium() {
        let d = RobotDescription::desk_scale(3).unwrap().frictionless();
        let s = RobotState::upright(3);
        let bias = {
            let t = crate::dynamics::dynamics_terms(&d, &s).unwrap();
            crate::isolation::isolate(&t, &t.bias, d.wheel.radius).unwrap().bias
        };
        assert!(bias.amax() < 1e-12);
        let next = integrate_step(&d, &s, &DVector::zeros(3), 1e-3).unwrap();
        assert_eq!(next, s);
    }

    #[test]
    fn rk4_is_fourth_order() {
        let d = RobotDescription::desk_scale(3).unwrap().frictionless();
        let s0 = RobotState::new(0.0, 0.2, dvector![0.1, 0.3, -0.2], dvector![0.5, -0.3, 0.2]);
        let tau = dvector![0.2, -0.5, 0.1];
        let run = |dt: f64| {
            let n = (0.2 / dt).round() as usize;
            let mut s = s0.clone();
            for _ in 0..n {
                s = integrate_step(&d, &s, &tau, dt).unwrap();
            }
            s
        };
        let fine = run(0.001);
        let err = |s: &RobotState| (&s.q - &fine.q).amax().max((&s.qdot - &fine.qdot).amax());
        let e1 = err(&run(0.02));
        let e2 = err(&run(0.01));
        let ratio = e1 / e2;
        assert!((8.0..=32.0).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn config_rules() {
        let mut c = SimConfig::default();
        assert!(c.validate().is_ok());
        c.wbc_period = 0.02;
        assert!(c.validate().is_err());
        let mut c = SimConfig::default();
        c.mpc_period = 0.0105;
        assert!(c.validate().is_err());
        let mut c = SimConfig::default();
        c.log_every = 0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn sim_file_parses_with_defaults() {
        let f = SimFile::from_toml_str("[sim]\ngoal = 1.0\nduration = 5.0\n[controller.tasks]\nreg_weight = 0.2\n").unwrap();
        assert_eq!(f.sim.goal, 1.0);
        assert_eq!(f.sim.dt_physics, 1e-3);
        assert_eq!(f.controller.tasks.reg_weight, 0.2);
        assert!(SimFile::from_toml_str("[sim]\nbogus = 1\n").is_err());
    }

    #[test]
    fn noise_is_seeded() {
        let d = RobotDescription::desk_scale(3).unwrap();
        let cfg = SimConfig {
            noise_std: 1e-3,
            seed: 9,
            ..Default::default()
        };
        let a = initial_state(&d, &cfg).unwrap();
        let b = initial_state(&d, &cfg).unwrap();
        assert_eq!(a, b);
        let quiet = initial_state(&d, &SimConfig::default()).unwrap();
        assert_ne!(a, quiet);
    }

    #[test]
    fn completion_needs_to_stay_in_band() {
        let d = RobotDescription::desk_scale(1).unwrap();
        let s = RobotState::upright(1);
        let reference = Trajectory {
            states: vec![WipmState::default()],
            controls: vec![],
            gains: vec![],
            cost: 0.0,
            converged: true,
            iterations: 0,
            cost_history: vec![0.0],
            dt: 0.01,
        };
        let mk = |t: f64, x: f64| {
            let mut st = s.clone();
            st.x = x;
            record(&d, &st, t, &reference, 0, &MpcOutput::hold(WipmState::default()), None, &DVector::zeros(1), false, false)
        };
        let recs = vec![mk(0.0, 0.0), mk(1.0, 1.99), mk(2.0, 1.9), mk(3.0, 1.98), mk(4.0, 2.0)];
        assert_eq!(completion_time(&recs, 2.0), Some(3.0));
        assert_eq!(completion_time(&recs[..3], 2.0), None);
    }
}
