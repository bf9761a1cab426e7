use std::path::PathBuf;

use nalgebra::DVector;
use proptest::prelude::*;
use wiphwbc::dynamics::{forward_dynamics, total_energy};
use wiphwbc::kinematics::{balanced_pose, com_state};
use wiphwbc::model::{LinkParams, WheelParams};
use wiphwbc::sim::{integrate_step, run_closed_loop, SimFile};
use wiphwbc::{load_description, RobotDescription, RobotState};

fn configs() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

#[test]
fn shipped_robot_files_match_builtin_fixtures() {
    for n in [1, 3, 7] {
        let loaded = load_description(configs().join(format!("robot_n{n}.toml"))).unwrap();
        assert_eq!(loaded, RobotDescription::desk_scale(n).unwrap(), "n={n}");
    }
}

#[test]
fn shipped_sim_files_parse() {
    for name in ["sim_goal.toml", "sim_regulation.toml"] {
        SimFile::load(configs().join(name)).unwrap_or_else(|e| panic!("{name}: {e}"));
    }
}

#[test]
fn regulation_holds_position() {
    let d = load_description(configs().join("robot_n3.toml")).unwrap();
    let f = SimFile::load(configs().join("sim_regulation.toml")).unwrap();
    let run = run_closed_loop(&d, &f.sim, &f.controller).unwrap();
    assert!(run.summary.diverged.is_none());
    for r in &run.records {
        assert!(r.wipm.theta.abs() < 0.01, "t={} θ={}", r.t, r.wipm.theta);
        assert!(r.state.x.abs() < 0.01, "t={} x={}", r.t, r.state.x);
    }
    assert_eq!(run.summary.completion_time, Some(0.0));
}

#[test]
fn closed_loop_is_deterministic() {
    let d = RobotDescription::desk_scale(3).unwrap();
    let mut f = SimFile::default();
    f.sim.duration = 2.0;
    f.sim.goal = 0.3;
    f.sim.noise_std = 1e-3;
    f.sim.seed = 11;
    let a = run_closed_loop(&d, &f.sim, &f.controller).unwrap();
    let b = run_closed_loop(&d, &f.sim, &f.controller).unwrap();
    assert_eq!(a.summary, b.summary);
    assert_eq!(a.records.last().unwrap().state, b.records.last().unwrap().state);
}

#[test]
fn controller_rates_follow_config() {
    let d = RobotDescription::desk_scale(1).unwrap();
    let mut f = SimFile::default();
    f.sim.duration = 1.0;
    f.sim.goal = 0.0;
    let run = run_closed_loop(&d, &f.sim, &f.controller).unwrap();
    assert_eq!(run.summary.mpc_calls, 100);
    assert_eq!(run.summary.wbc_calls, 1000);
    assert_eq!(run.records.len(), 1001);
}

fn link_strategy() -> impl Strategy<Value = LinkParams> {
    (0.1..5.0f64, 0.05..0.8f64, 0.1..0.9f64, 1e-4..0.1f64, 0.0..0.2f64, 1.0..100.0f64, 0.3..3.0f64).prop_map(
        |(mass, length, frac, inertia_com, damping, torque_limit, limit)| LinkParams {
            mass,
            length,
            com_offset: frac * length,
            inertia_com,
            damping,
            torque_limit,
            angle_min: -limit,
            angle_max: limit,
        },
    )
}

fn robot_strategy() -> impl Strategy<Value = RobotDescription> {
    (0.05..0.3f64, 0.1..2.0f64, 1e-4..0.05f64, prop::collection::vec(link_strategy(), 1..6)).prop_map(
        |(radius, mass, inertia, links)| RobotDescription::new(WheelParams { radius, mass, inertia }, links, 9.81).unwrap(),
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn robot_toml_round_trips(d in robot_strategy()) {
        let back = RobotDescription::from_toml_str(&d.to_toml_string()).unwrap();
        prop_assert_eq!(back, d);
    }

    #[test]
    fn balanced_pose_zeroes_com_offset(d in robot_strategy(), seed in prop::collection::vec(-0.5..0.5f64, 6)) {
        let q = DVector::from_fn(d.n(), |i, _| seed[i]);
        if let Ok(q) = balanced_pose(&d, &q) {
            let c = com_state(&d, &RobotState::at_rest(0.0, q)).unwrap();
            prop_assert!(c.x_com.abs() < 1e-9);
        }
    }

    #[test]
    fn unforced_step_never_creates_energy(d in robot_strategy(), v in 0.0..1.0f64) {
        // damping only removes energy; a short RK4 step must not add any beyond integration error
        let n = d.n();
        let s = RobotState::new(0.0, v, DVector::from_element(n, 0.1), DVector::from_element(n, v));
        let e0 = total_energy(&d, &s).total();
        let s1 = integrate_step(&d, &s, &DVector::zeros(n), 1e-4).unwrap();
        prop_assert!(total_energy(&d, &s1).total() <= e0 + 1e-9 * e0.abs().max(1.0));
    }

    #[test]
    fn forward_dynamics_is_finite(d in robot_strategy(), t in -5.0..5.0f64) {
        let n = d.n();
        let s = RobotState::new(0.0, 0.0, DVector::from_element(n, 0.2), DVector::zeros(n));
        let acc = forward_dynamics(&d, &s, &DVector::from_element(n, t)).unwrap();
        prop_assert!(acc.xddot.is_finite() && acc.qddot.iter().all(|v| v.is_finite()));
    }
}
