use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_wiphwbc"));
    c.env_remove("WIPHWBC_LOG");
    c
}

fn configs() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn data_rows(text: &str) -> Vec<Vec<&str>> {
    text.lines().skip(2).map(|l| l.split(',').collect()).collect()
}

#[test]
fn plan_writes_full_horizon_csv() {
    let dir = tempfile::tempdir().unwrap();
    let robot = configs().join("robot_n7.toml");
    let o = run(&["plan", "--robot", path(&robot), "--goal", "2", "--tf", "20", "--out", path(dir.path())]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(dir.path().join("plan.csv")).unwrap();
    let mut lines = text.lines();
    assert!(lines.next().unwrap().starts_with("# schema: wiphwbc-plan/1"));
    assert_eq!(lines.next().unwrap(), "t,theta_ref,thetadot_ref,x_ref,xdot_ref,u_ref");
    let rows = data_rows(&text);
    assert_eq!(rows.len(), 2001);
    let last: Vec<f64> = rows[2000].iter().map(|v| v.parse().unwrap()).collect();
    assert!((last[0] - 20.0).abs() < 1e-9);
    assert!((last[3] - 2.0).abs() < 0.01);
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "plan");
    assert_eq!(manifest["partial"], false);
    assert!(!dir.path().join("plan.csv.tmp").exists());
}

#[test]
fn plan_to_current_position_is_idle() {
    let dir = tempfile::tempdir().unwrap();
    let robot = configs().join("robot_n3.toml");
    let o = run(&["plan", "--robot", path(&robot), "--goal", "0", "--tf", "2", "--out", path(dir.path())]);
    assert_eq!(code(&o), 0);
    let text = fs::read_to_string(dir.path().join("plan.csv")).unwrap();
    for r in data_rows(&text) {
        assert!(r[5].parse::<f64>().unwrap().abs() < 1e-6, "u_ref = {}", r[5]);
    }
}

#[test]
fn missing_robot_file_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["plan", "--robot", "/definitely/not/here.toml", "--out", path(dir.path())]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("error"));
}

#[test]
fn invalid_robot_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let text = fs::read_to_string(configs().join("robot_n1.toml")).unwrap();
    let bad = text.replacen("inertia_com = 0.06", "inertia_com = -0.06", 1);
    assert_ne!(bad, text, "fixture layout changed");
    let robot = dir.path().join("bad.toml");
    fs::write(&robot, bad).unwrap();
    let o = run(&["check", "--robot", path(&robot)]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("inertia_com"));
}

#[test]
fn invalid_sim_settings_are_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let robot = configs().join("robot_n1.toml");
    let o = run(&["simulate", "--robot", path(&robot), "--tf", "0.015", "--out", path(dir.path())]);
    assert_eq!(code(&o), 1);
}

#[test]
fn check_passes_on_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let robot = configs().join("robot_n3.toml");
    let o = run(&["check", "--robot", path(&robot), "--out", path(dir.path())]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
    let out = String::from_utf8_lossy(&o.stdout);
    assert!(out.lines().count() >= 7);
    assert!(out.lines().all(|l| l.starts_with("PASS")));
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("check.json")).unwrap()).unwrap();
    assert_eq!(report["passed"], true);
}

#[test]
fn simulate_regulation_writes_log_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let robot = configs().join("robot_n3.toml");
    let sim = configs().join("sim_regulation.toml");
    let o = run(&["simulate", "--robot", path(&robot), "--sim", path(&sim), "--tf", "1", "--out", path(dir.path())]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));

    let text = fs::read_to_string(dir.path().join("sim_log.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "# schema: wiphwbc-sim-log/1 n=3");
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let expected = "t,x,xdot,q1,q2,q3,qd1,qd2,qd3,theta,thetadot,theta_traj,x_traj,u,tau1,tau2,tau3,ee_x,ee_z,ee_phi,E_kin,E_pot,qp_status,mpc_iters";
    assert_eq!(header.join(","), expected);
    let rows = data_rows(&text);
    assert_eq!(rows.len(), 101, "log_every = 10 over 1 s at 1 kHz");
    assert!(rows.iter().all(|r| r.len() == header.len()));
    assert!(rows.iter().all(|r| r[22] == "optimal"));

    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["completion_time"], 0.0);
    assert!(summary["diverged"].is_null());
    assert_eq!(summary["torque_violations"], 0);
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["status"], "ok");
    assert_eq!(manifest["settings"]["sim"]["duration"], 1.0);
}

#[test]
fn decoupled_flag_reaches_summary() {
    let dir = tempfile::tempdir().unwrap();
    let robot = configs().join("robot_n3.toml");
    let o = run(&["simulate", "--robot", path(&robot), "--goal", "0", "--tf", "1", "--decoupled", "--out", path(dir.path())]);
    assert_eq!(code(&o), 0);
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["decoupled"], true);
}

#[test]
fn final_time_shorter_than_horizon_is_a_planner_error() {
    let dir = tempfile::tempdir().unwrap();
    let robot = configs().join("robot_n1.toml");
    let o = run(&["plan", "--robot", path(&robot), "--tf", "0.5", "--out", path(dir.path())]);
    assert_eq!(code(&o), 2);
}
