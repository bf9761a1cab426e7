//! `wiphwbc` command-line front end: plan, simulate and check.

mod manifest;

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use log::{info, warn};
use serde_json::json;

use wiphwbc::diagnostics::{run_checks, CheckOptions};
use wiphwbc::mpc::make_reference;
use wiphwbc::output::{write_plan_csv, write_sim_csv};
use wiphwbc::sim::{initial_state, run_closed_loop, SimFile};
use wiphwbc::wipm::{extract, WipmState};
use wiphwbc::{load_description, Error, RobotDescription};

use manifest::{write_atomic, Manifest};

#[derive(Parser, Debug)]
#[command(name = "wiphwbc", version, about = "Whole-body control for planar wheeled inverted pendulum humanoids")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Compute the full-horizon reference trajectory on the simplified model.
    Plan(RunArgs),
    /// Run the closed-loop simulation.
    Simulate(RunArgs),
    /// Run the invariant diagnostics on a robot description.
    Check(CheckArgs),
}

#[derive(Args, Debug)]
struct RunArgs {
    /// Robot description (TOML).
    #[arg(long)]
    robot: PathBuf,
    /// Simulation and controller settings (TOML); defaults apply when omitted.
    #[arg(long)]
    sim: Option<PathBuf>,
    /// Goal heading position in meters.
    #[arg(long)]
    goal: Option<f64>,
    /// Final time of the plan and simulation, seconds.
    #[arg(long)]
    tf: Option<f64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Balance-only control with a rigid upper body.
    #[arg(long)]
    decoupled: bool,
    /// Seed for the optional initial-state noise.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
struct CheckArgs {
    #[arg(long)]
    robot: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also write a JSON report here.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Stable process exit codes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Exit {
    Ok = 0,
    Config = 1,
    Planner = 2,
    Diverged = 3,
    CheckFailed = 4,
}

impl From<Exit> for ExitCode {
    fn from(e: Exit) -> Self {
        ExitCode::from(e as u8)
    }
}

struct Failure {
    code: Exit,
    message: String,
}

impl Failure {
    fn new(code: Exit, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }
}

fn classify(e: &Error) -> Exit {
    match e {
        Error::Io { .. } | Error::Parse(_) | Error::Validation { .. } | Error::Dimension { .. } => Exit::Config,
        Error::Diverged { .. } | Error::NonFinite { .. } => Exit::Diverged,
        _ => Exit::Planner,
    }
}

fn fail(e: Error) -> Failure {
    Failure::new(classify(&e), e.to_string())
}

fn io_fail(path: &Path, e: std::io::Error) -> Failure {
    Failure::new(Exit::Config, format!("{}: {e}", path.display()))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("WIPHWBC_LOG", "warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Plan(a) => cmd_plan(&a),
        Command::Simulate(a) => cmd_simulate(&a),
        Command::Check(a) => cmd_check(&a),
    };
    match result {
        Ok(code) => code.into(),
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code.into()
        }
    }
}

struct Loaded {
    robot: RobotDescription,
    settings: SimFile,
}

fn load(a: &RunArgs) -> Result<Loaded, Failure> {
    let robot = load_description(&a.robot).map_err(fail)?;
    let mut settings = match &a.sim {
        Some(p) => SimFile::load(p).map_err(fail)?,
        None => SimFile::default(),
    };
    if let Some(g) = a.goal {
        settings.sim.goal = g;
    }
    if let Some(tf) = a.tf {
        settings.sim.duration = tf;
    }
    if let Some(seed) = a.seed {
        settings.sim.seed = seed;
    }
    settings.sim.decoupled |= a.decoupled;
    settings.sim.validate().map_err(fail)?;
    Ok(Loaded { robot, settings })
}

fn prepare_out(dir: &Path) -> Result<(), Failure> {
    fs::create_dir_all(dir).map_err(|e| io_fail(dir, e))
}

fn write_csv(path: &Path, f: impl FnOnce(BufWriter<File>) -> std::io::Result<()>) -> Result<(), Failure> {
    let tmp = path.with_extension("csv.tmp");
    let file = File::create(&tmp).map_err(|e| io_fail(&tmp, e))?;
    f(BufWriter::new(file)).map_err(|e| io_fail(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| io_fail(path, e))
}

fn cmd_plan(a: &RunArgs) -> Result<Exit, Failure> {
    let start = Instant::now();
    let Loaded { robot, settings } = load(a)?;
    prepare_out(&a.out)?;
    let s0 = initial_state(&robot, &settings.sim).map_err(fail)?;
    let ext = extract(&robot, &s0).map_err(fail)?;
    let goal = WipmState::at(settings.sim.goal);
    let mpc = settings.controller.mpc_config(settings.sim.mpc_period);
    let traj = make_reference(
        &ext.params,
        ext.state,
        goal,
        settings.sim.duration,
        &settings.controller.planner_cost(goal),
        &mpc,
    )
    .map_err(fail)?;
    let csv = a.out.join("plan.csv");
    write_csv(&csv, |w| write_plan_csv(w, &traj))?;
    let last = traj.states.last().copied().unwrap_or_default();
    info!("plan: {} iterations, cost {:.6e}", traj.iterations, traj.cost);

    let mut m = Manifest::new("plan", a, &robot, &settings);
    m.files = vec!["plan.csv".into()];
    m.partial = !traj.converged;
    m.status = if traj.converged { "ok" } else { "planner_not_converged" }.into();
    m.results = json!({
        "iterations": traj.iterations,
        "converged": traj.converged,
        "cost": traj.cost,
        "rows": traj.states.len(),
        "terminal": { "theta": last.theta, "thetadot": last.thetadot, "x": last.x, "xdot": last.xdot },
    });
    m.finish(start);
    write_atomic(&a.out.join("manifest.json"), &m.to_json()).map_err(|e| io_fail(&a.out, e))?;
    println!("plan: {} rows, converged {}, terminal x {:.4} m, θ {:.2e} rad", traj.states.len(), traj.converged, last.x, last.theta);
    if !traj.converged {
        warn!("planner did not converge; output flagged partial");
        return Ok(Exit::Planner);
    }
    Ok(Exit::Ok)
}

fn cmd_simulate(a: &RunArgs) -> Result<Exit, Failure> {
    let start = Instant::now();
    let Loaded { robot, settings } = load(a)?;
    prepare_out(&a.out)?;
    let run = run_closed_loop(&robot, &settings.sim, &settings.controller).map_err(fail)?;
    let csv = a.out.join("sim_log.csv");
    write_csv(&csv, |w| write_sim_csv(w, robot.n(), &run.records))?;
    let summary = serde_json::to_string_pretty(&run.summary).expect("summary serializes");
    write_atomic(&a.out.join("summary.json"), &summary).map_err(|e| io_fail(&a.out, e))?;

    let mut m = Manifest::new("simulate", a, &robot, &settings);
    m.files = vec!["sim_log.csv".into(), "summary.json".into()];
    m.partial = run.diverged();
    m.status = if run.diverged() { "diverged" } else { "ok" }.into();
    m.results = serde_json::to_value(&run.summary).expect("summary serializes");
    m.finish(start);
    write_atomic(&a.out.join("manifest.json"), &m.to_json()).map_err(|e| io_fail(&a.out, e))?;

    let s = &run.summary;
    println!(
        "simulate: final x {:.4} m (goal {}), peak |θ| {:.4} rad, peak orientation deviation {:.3}°, completion {}",
        s.final_x,
        s.goal,
        s.peak_abs_theta,
        s.peak_orientation_deviation_deg,
        s.completion_time.map_or("none".to_string(), |t| format!("{t:.2} s"))
    );
    if let Some(reason) = &s.diverged {
        eprintln!("diverged: {reason}");
        return Ok(Exit::Diverged);
    }
    Ok(Exit::Ok)
}

fn cmd_check(a: &CheckArgs) -> Result<Exit, Failure> {
    let robot = load_description(&a.robot).map_err(fail)?;
    let opts = CheckOptions {
        seed: a.seed,
        ..Default::default()
    };
    let results = run_checks(&robot, &opts).map_err(|e| Failure::new(Exit::CheckFailed, e.to_string()))?;
    for r in &results {
        println!("{r}");
    }
    let passed = results.iter().all(|r| r.passed);
    if let Some(dir) = &a.out {
        prepare_out(dir)?;
        let report = json!({ "robot": a.robot.display().to_string(), "seed": a.seed, "passed": passed, "checks": results });
        write_atomic(&dir.join("check.json"), &serde_json::to_string_pretty(&report).expect("report serializes"))
            .map_err(|e| io_fail(dir, e))?;
    }
    Ok(if passed { Exit::Ok } else { Exit::CheckFailed })
}
