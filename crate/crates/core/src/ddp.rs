//! iLQR trajectory optimization over the WIPM.
//!
//! Cost per step is `(X − r)ᵀG(X − r) + g u²` with a terminal
//! `(X_N − r_N)ᵀG_T(X_N − r_N)`. The same solver produces the full-horizon
//! reference and the short receding-horizon solves.

use log::{debug, trace};
use nalgebra::{Matrix4, RowVector4, Vector4};

use crate::error::{Error, Result};
use crate::wipm::{step, step_jacobians, WipmParams, WipmState};

#[derive(Clone, Debug, PartialEq)]
pub enum Reference {
    Fixed(WipmState),
    /// Time-indexed; indices past the end hold the last sample.
    Sequence(Vec<WipmState>),
}

impl Reference {
    pub fn at(&self, i: usize) -> Vector4<f64> {
        match self {
            Reference::Fixed(s) => s.to_vector(),
            Reference::Sequence(v) => v[i.min(v.len() - 1)].to_vector(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CostSpec {
    /// Diagonal of the running state weight.
    pub running: Vector4<f64>,
    pub control: f64,
    /// Diagonal of the terminal weight.
    pub terminal: Vector4<f64>,
    pub reference: Reference,
}

impl CostSpec {
    /// Weights for the full-horizon reference plan; θ carries the largest running weight.
    pub fn planner(goal: WipmState) -> Self {
        Self {
            running: Vector4::new(50.0, 1.0, 10.0, 1.0),
            control: 0.1,
            terminal: Vector4::new(100.0, 10.0, 100.0, 10.0) * 1e4,
            reference: Reference::Fixed(goal),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v >= 0.0;
        if !(self.running.iter().all(|&v| ok(v)) && self.terminal.iter().all(|&v| ok(v)) && ok(self.control)) {
            return Err(Error::Precondition("cost weights must be finite and non-negative".into()));
        }
        match &self.reference {
            Reference::Fixed(s) if !s.is_finite() => Err(Error::Precondition("reference is not finite".into())),
            Reference::Sequence(v) if v.is_empty() => Err(Error::Precondition("empty reference sequence".into())),
            Reference::Sequence(v) if v.iter().any(|s| !s.is_finite()) => {
                Err(Error::Precondition("reference is not finite".into()))
            }
            _ => Ok(()),
        }
    }

    pub fn running_cost(&self, i: usize, x: &WipmState, u: f64) -> f64 {
        let e = x.to_vector() - self.reference.at(i);
        e.component_mul(&self.running).dot(&e) + self.control * u * u
    }

    pub fn terminal_cost(&self, n: usize, x: &WipmState) -> f64 {
        let e = x.to_vector() - self.reference.at(n);
        e.component_mul(&self.terminal).dot(&e)
    }

    pub fn total(&self, states: &[WipmState], controls: &[f64]) -> f64 {
        let n = controls.len();
        let run: f64 = controls
            .iter()
            .enumerate()
            .map(|(i, &u)| self.running_cost(i, &states[i], u))
            .sum();
        run + self.terminal_cost(n, &states[n])
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Gain {
    pub feedforward: f64,
    pub feedback: RowVector4<f64>,
}

#[derive(Clone, Debug)]
pub struct Trajectory {
    pub states: Vec<WipmState>,
    pub controls: Vec<f64>,
    pub gains: Vec<Gain>,
    pub cost: f64,
    pub converged: bool,
    pub iterations: usize,
    /// Cost of the initial rollout followed by every accepted iterate.
    pub cost_history: Vec<f64>,
    pub dt: f64,
}

impl Trajectory {
    pub fn horizon(&self) -> usize {
        self.controls.len()
    }

    /// State at index `i`, holding the final state past the end.
    pub fn state_at(&self, i: usize) -> WipmState {
        self.states[i.min(self.states.len() - 1)]
    }

    /// Control at index `i`, zero past the end.
    pub fn control_at(&self, i: usize) -> f64 {
        self.controls.get(i).copied().unwrap_or(0.0)
    }

    /// Replays the gains from another start: `u_i = ū_i + K_i (x_i − x̄_i)`.
    pub fn closed_loop_replay(&self, p: &WipmParams, x0: WipmState) -> Result<(Vec<WipmState>, Vec<f64>)> {
        let mut states = vec![x0];
        let mut controls = Vec::with_capacity(self.horizon());
        for i in 0..self.horizon() {
            let dx = states[i].to_vector() - self.states[i].to_vector();
            let u = self.controls[i] + (self.gains[i].feedback * dx)[0];
            controls.push(u);
            states.push(step(&states[i], u, p, self.dt)?);
        }
        Ok((states, controls))
    }
}

#[derive(Clone, Copy, Debug)]
pub struct DdpOptions {
    pub max_iters: usize,
    /// Convergence when `|ΔJ| < tol_rel · max(1, |J|)`.
    pub tol_rel: f64,
    pub reg_init: f64,
    pub reg_min: f64,
    pub reg_max: f64,
}

impl Default for DdpOptions {
    fn default() -> Self {
        Self {
            max_iters: 200,
            tol_rel: 1e-9,
            reg_init: 1e-6,
            reg_min: 1e-9,
            reg_max: 1e10,
        }
    }
}

pub fn rollout(p: &WipmParams, x0: WipmState, controls: &[f64], dt: f64) -> Result<Vec<WipmState>> {
    let mut states = Vec::with_capacity(controls.len() + 1);
    states.push(x0);
    for (i, &u) in controls.iter().enumerate() {
        let next = step(&states[i], u, p, dt)?;
        states.push(next);
    }
    Ok(states)
}

/// Solves from a zero initial control sequence of length `n`.
pub fn solve(
    p: &WipmParams,
    x0: WipmState,
    cost: &CostSpec,
    n: usize,
    dt: f64,
    opts: &DdpOptions,
) -> Result<Trajectory> {
    solve_from(p, x0, cost, vec![0.0; n], dt, opts)
}

pub fn solve_from(
    p: &WipmParams,
    x0: WipmState,
    cost: &CostSpec,
    initial_controls: Vec<f64>,
    dt: f64,
    opts: &DdpOptions,
) -> Result<Trajectory> {
    let n = initial_controls.len();
    if n == 0 {
        return Err(Error::Precondition("DDP horizon must be at least one step".into()));
    }
    if !x0.is_finite() {
        return Err(Error::Precondition("DDP start state is not finite".into()));
    }
    if !(dt > 0.0) {
        return Err(Error::Precondition(format!("DDP step must be positive, got {dt}")));
    }
    cost.validate()?;

    let mut controls = initial_controls;
    let mut states = rollout(p, x0, &controls, dt).map_err(|e| Error::Planner {
        iteration: 0,
        reason: format!("initial rollout failed: {e}"),
    })?;
    let mut j = cost.total(&states, &controls);
    if !j.is_finite() {
        return Err(Error::Planner {
            iteration: 0,
            reason: "initial rollout cost is not finite".into(),
        });
    }
    let mut history = vec![j];
    let mut reg = opts.reg_init.clamp(opts.reg_min, opts.reg_max);
    let mut gains = vec![
        Gain {
            feedforward: 0.0,
            feedback: RowVector4::zeros()
        };
        n
    ];
    let mut converged = false;
    let mut iterations = 0;

    while iterations < opts.max_iters {
        iterations += 1;
        let tol = opts.tol_rel * j.abs().max(1.0);
        let Some((new_gains, expected)) = backward_pass(p, cost, &states, &controls, dt, reg)? else {
            reg *= 10.0;
            if reg > opts.reg_max {
                debug!("ddp: regularization exhausted at iteration {iterations}");
                break;
            }
            continue;
        };
        gains = new_gains;

        // expected reduction at α: −(α ΔV1 + α² ΔV2)
        let negligible = -(expected.0 + expected.1) < tol;
        let alphas: &[f64] = if negligible { &[1.0] } else { &LINE_SEARCH };
        let mut accepted = None;
        for &alpha in alphas {
            if let Some((s, u, jn)) = forward_pass(p, cost, &states, &controls, &gains, alpha, dt) {
                let better = if negligible { jn <= j } else { jn < j };
                if better {
                    accepted = Some((s, u, jn, alpha));
                    break;
                }
            }
        }

        match accepted {
            Some((s, u, jn, alpha)) => {
                let dj = j - jn;
                trace!("ddp iter {iterations}: J = {jn:.6e}, α = {alpha}, λ = {reg:.1e}");
                states = s;
                controls = u;
                j = jn;
                history.push(j);
                reg = (reg / 5.0).max(opts.reg_min);
                if negligible || dj < tol {
                    converged = true;
                    break;
                }
            }
            None if negligible => {
                converged = true;
                break;
            }
            None => {
                reg *= 10.0;
                if reg > opts.reg_max {
                    debug!("ddp: line search failed with maximal regularization");
                    break;
                }
            }
        }
    }

    Ok(Trajectory {
        states,
        controls,
        gains,
        cost: j,
        converged,
        iterations,
        cost_history: history,
        dt,
    })
}

const LINE_SEARCH: [f64; 11] = [
    1.0,
    0.5,
    0.25,
    0.125,
    0.0625,
    0.03125,
    0.015625,
    0.0078125,
    0.00390625,
    0.001953125,
    0.0009765625,
];

type Expected = (f64, f64);

/// Riccati-like sweep; `None` when the regularized `Q_uu` is not positive.
fn backward_pass(
    p: &WipmParams,
    cost: &CostSpec,
    states: &[WipmState],
    controls: &[f64],
    dt: f64,
    reg: f64,
) -> Result<Option<(Vec<Gain>, Expected)>> {
    let n = controls.len();
    let g_run = Matrix4::from_diagonal(&cost.running);
    let mut v_x = 2.0 * cost.terminal.component_mul(&(states[n].to_vector() - cost.reference.at(n)));
    let mut v_xx = Matrix4::from_diagonal(&cost.terminal) * 2.0;
    let mut gains = vec![
        Gain {
            feedforward: 0.0,
            feedback: RowVector4::zeros()
        };
        n
    ];
    let mut dv = (0.0, 0.0);

    for i in (0..n).rev() {
        let u = controls[i];
        let jac = step_jacobians(&states[i], u, p, dt)?;
        let (fx, fu) = (jac.fx, jac.fu);
        let l_x = 2.0 * cost.running.component_mul(&(states[i].to_vector() - cost.reference.at(i)));
        let q_x = l_x + fx.transpose() * v_x;
        let q_u = 2.0 * cost.control * u + fu.dot(&v_x);
        let vfx = v_xx * fx;
        let q_xx = g_run * 2.0 + fx.transpose() * vfx;
        let q_ux = fu.transpose() * vfx;
        let q_uu = 2.0 * cost.control + fu.dot(&(v_xx * fu));
        let q_uu_reg = q_uu + reg;
        if !(q_uu_reg > 0.0) || !q_uu_reg.is_finite() {
            return Ok(None);
        }
        let k = -q_u / q_uu_reg;
        let big_k = -q_ux / q_uu_reg;
        dv.0 += k * q_u;
        dv.1 += 0.5 * k * k * q_uu;

        v_x = q_x + big_k.transpose() * (q_uu * k) + big_k.transpose() * q_u + q_ux.transpose() * k;
        v_xx = q_xx + big_k.transpose() * q_uu * big_k + big_k.transpose() * q_ux + q_ux.transpose() * big_k;
        v_xx = (v_xx + v_xx.transpose()) * 0.5;
        gains[i] = Gain {
            feedforward: k,
            feedback: big_k,
        };
    }
    Ok(Some((gains, dv)))
}

type Candidate = (Vec<WipmState>, Vec<f64>, f64);

fn forward_pass(
    p: &WipmParams,
    cost: &CostSpec,
    states: &[WipmState],
    controls: &[f64],
    gains: &[Gain],
    alpha: f64,
    dt: f64,
) -> Option<Candidate> {
    let n = controls.len();
    let mut xs = Vec::with_capacity(n + 1);
    let mut us = Vec::with_capacity(n);
    xs.push(states[0]);
    for i in 0..n {
        let dx = xs[i].to_vector() - states[i].to_vector();
        let u = controls[i] + alpha * gains[i].feedforward + (gains[i].feedback * dx)[0];
        let next = step(&xs[i], u, p, dt).ok()?;
        if !next.is_finite() {
            return None;
        }
        us.push(u);
        xs.push(next);
    }
    let j = cost.total(&xs, &us);
    j.is_finite().then_some((xs, us, j))
}

/// Exact gradient of the total cost with respect to the control sequence,
/// by an adjoint sweep through the step Jacobians.
pub fn cost_gradient(p: &WipmParams, x0: WipmState, cost: &CostSpec, controls: &[f64], dt: f64) -> Result<Vec<f64>> {
    let n = controls.len();
    let states = rollout(p, x0, controls, dt)?;
    let mut adj = 2.0 * cost.terminal.component_mul(&(states[n].to_vector() - cost.reference.at(n)));
    let mut grad = vec![0.0; n];
    for i in (0..n).rev() {
        let jac = step_jacobians(&states[i], controls[i], p, dt)?;
        grad[i] = 2.0 * cost.control * controls[i] + jac.fu.dot(&adj);
        adj = 2.0 * cost.running.component_mul(&(states[i].to_vector() - cost.reference.at(i))) + jac.fx.transpose() * adj;
    }
    Ok(grad)
}
