//! Receding-horizon tracking of the full-horizon DDP reference.
//!
//! Every sample the WIPM parameters are re-extracted from the full robot, a
//! short DDP problem is solved against the reference window, and the first
//! control becomes the `θ̈` target of the whole-body controller.

use log::warn;
use nalgebra::Vector4;

use crate::ddp::{solve_from, CostSpec, DdpOptions, Reference, Trajectory};
use crate::error::{Error, Result};
use crate::model::{RobotDescription, RobotState};
use crate::wipm::{extract, Lambda, WipmParams, WipmState};

#[derive(Clone, Debug)]
pub struct MpcConfig {
    /// Control period `T_s`.
    pub sample_period: f64,
    pub horizon: f64,
    /// Planner step.
    pub dt: f64,
    /// Weights for the tracking cost; the reference field is replaced per solve.
    pub cost: CostSpec,
    pub warm_start: bool,
    pub ddp: DdpOptions,
}

impl Default for MpcConfig {
    fn default() -> Self {
        let running = Vector4::new(100.0, 1.0, 100.0, 1.0);
        Self {
            sample_period: 0.01,
            horizon: 1.0,
            dt: 0.01,
            cost: CostSpec {
                running,
                control: 0.05,
                terminal: running * 1e3,
                reference: Reference::Fixed(WipmState::default()),
            },
            warm_start: true,
            ddp: DdpOptions::default(),
        }
    }
}

/// Number of whole steps of `step` in `span`, or `None` when it does not divide.
pub(crate) fn whole_steps(span: f64, step: f64) -> Option<usize> {
    let r = span / step;
    let n = r.round();
    ((r - n).abs() < 1e-9 * r.max(1.0) && n >= 1.0).then_some(n as usize)
}

impl MpcConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |reason: &str| Err(Error::Validation {
            field: "mpc".into(),
            reason: reason.into(),
        });
        if !(self.sample_period > 0.0 && self.dt > 0.0 && self.horizon > 0.0) {
            return bad("periods and horizon must be positive");
        }
        if self.horizon < self.sample_period {
            return bad("horizon shorter than the sample period");
        }
        if whole_steps(self.horizon, self.dt).is_none() {
            return bad("planner step must divide the horizon");
        }
        self.cost.validate()
    }

    pub fn steps(&self) -> usize {
        whole_steps(self.horizon, self.dt).unwrap_or(1)
    }
}

#[derive(Clone, Debug)]
pub struct MpcOutput {
    pub theta_ddot_ref: f64,
    pub theta_ref: f64,
    pub thetadot_ref: f64,
    pub horizon_cost: f64,
    pub solve_converged: bool,
    pub iterations: usize,
    /// Simplified state of the robot at solve time.
    pub state: WipmState,
    /// Reference sample at the current index.
    pub reference: WipmState,
    pub lambda: Option<Lambda>,
    /// Set when extraction failed and the previous output was reused.
    pub held: bool,
}

impl MpcOutput {
    /// Output that regulates toward a fixed reference with zero feedforward.
    pub fn hold(reference: WipmState) -> Self {
        Self {
            theta_ddot_ref: 0.0,
            theta_ref: reference.theta,
            thetadot_ref: reference.thetadot,
            horizon_cost: 0.0,
            solve_converged: true,
            iterations: 0,
            state: reference,
            reference,
            lambda: None,
            held: false,
        }
    }
}

/// Full-horizon plan from the initial state; `tf` must cover at least one MPC horizon.
pub fn make_reference(
    p0: &WipmParams,
    x0: WipmState,
    goal: WipmState,
    tf: f64,
    cost: &CostSpec,
    cfg: &MpcConfig,
) -> Result<Trajectory> {
    if !(tf >= cfg.horizon) {
        return Err(Error::Precondition(format!(
            "final time {tf} s is shorter than the MPC horizon {} s",
            cfg.horizon
        )));
    }
    let n = whole_steps(tf, cfg.dt)
        .ok_or_else(|| Error::Precondition(format!("planner step {} does not divide t_f = {tf}", cfg.dt)))?;
    let mut cost = cost.clone();
    cost.reference = Reference::Fixed(goal);
    let traj = solve_from(p0, x0, &cost, vec![0.0; n], cfg.dt, &cfg.ddp)?;
    if !traj.converged {
        warn!("reference plan did not converge after {} iterations", traj.iterations);
    }
    Ok(traj)
}

/// MPC instance owning its warm-start buffer.
#[derive(Clone, Debug)]
pub struct Mpc {
    pub cfg: MpcConfig,
    warm: Option<Vec<f64>>,
    last: Option<MpcOutput>,
}

impl Mpc {
    pub fn new(cfg: MpcConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            cfg,
            warm: None,
            last: None,
        })
    }

    /// Reference window `[i, i + N]`, holding the final state past the end.
    pub fn window(reference: &Trajectory, i: usize, n: usize) -> Vec<WipmState> {
        (i..=i + n).map(|k| reference.state_at(k)).collect()
    }

    fn initial_controls(&self, reference: &Trajectory, i: usize, n: usize) -> Vec<f64> {
        match (&self.warm, self.cfg.warm_start) {
            (Some(prev), true) if prev.len() == n => {
                let mut u: Vec<f64> = prev[1..].to_vec();
                u.push(*prev.last().unwrap_or(&0.0));
                u
            }
            _ => (i..i + n).map(|k| reference.control_at(k)).collect(),
        }
    }

    /// One receding-horizon solve at reference index `i`.
    pub fn step(&mut self, i: usize, s: &RobotState, desc: &RobotDescription, reference: &Trajectory) -> Result<MpcOutput> {
        if i >= reference.states.len() {
            return Err(Error::Precondition(format!(
                "MPC index {i} beyond reference of {} samples",
                reference.states.len()
            )));
        }
        let ext = match extract(desc, s) {
            Ok(e) => e,
            Err(e) => {
                let Some(prev) = &self.last else { return Err(e) };
                warn!("λ extraction failed at index {i} ({e}); holding previous MPC output");
                let mut out = prev.clone();
                out.held = true;
                return Ok(out);
            }
        };
        let n = self.cfg.steps();
        let window = Self::window(reference, i, n);
        let mut cost = self.cfg.cost.clone();
        cost.reference = Reference::Sequence(window);
        let init = self.initial_controls(reference, i, n);
        let sol = solve_from(&ext.params, ext.state, &cost, init, self.cfg.dt, &self.cfg.ddp)?;
        let here = reference.state_at(i);
        let out = MpcOutput {
            theta_ddot_ref: sol.controls[0],
            theta_ref: here.theta,
            thetadot_ref: here.thetadot,
            horizon_cost: sol.cost,
            solve_converged: sol.converged,
            iterations: sol.iterations,
            state: ext.state,
            reference: here,
            lambda: Some(ext.lambda),
            held: false,
        };
        if !out.theta_ddot_ref.is_finite() {
            return Err(Error::NonFinite {
                context: format!("MPC control at index {i}"),
            });
        }
        self.warm = Some(sol.controls);
        self.last = Some(out.clone());
        Ok(out)
    }

    pub fn reset(&mut self) {
        self.warm = None;
        self.last = None;
    }
}
