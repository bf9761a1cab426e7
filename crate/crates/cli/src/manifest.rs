//! Run manifest: everything needed to repeat a run, written atomically.

use std::fs;
use std::io::Write;
use std::path::Path;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::Serialize;
use serde_json::Value;

use wiphwbc::sim::SimFile;
use wiphwbc::RobotDescription;

use crate::RunArgs;

#[derive(Serialize)]
pub struct Manifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'static str,
    pub robot_config: String,
    pub sim_config: Option<String>,
    pub output_dir: String,
    /// Resolved robot description in config-file form.
    pub robot: String,
    /// Resolved simulation and controller settings after flag overrides.
    pub settings: SimFile,
    pub seed: u64,
    pub started_unix: u64,
    pub wall_time_s: f64,
    pub status: String,
    pub partial: bool,
    pub files: Vec<String>,
    pub results: Value,
}

impl Manifest {
    pub fn new(command: &'static str, a: &RunArgs, robot: &RobotDescription, settings: &SimFile) -> Self {
        Self {
            tool: "wiphwbc",
            version: env!("CARGO_PKG_VERSION"),
            command,
            robot_config: a.robot.display().to_string(),
            sim_config: a.sim.as_ref().map(|p| p.display().to_string()),
            output_dir: a.out.display().to_string(),
            robot: robot.to_toml_string(),
            settings: settings.clone(),
            seed: settings.sim.seed,
            started_unix: SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0),
            wall_time_s: 0.0,
            status: "ok".into(),
            partial: false,
            files: Vec::new(),
            results: Value::Null,
        }
    }

    pub fn finish(&mut self, start: Instant) {
        self.wall_time_s = start.elapsed().as_secs_f64();
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }
}

/// Writes through a temporary sibling and renames it into place.
pub fn write_atomic(path: &Path, contents: &str) -> std::io::Result<()> {
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("out");
    let tmp = path.with_file_name(format!(".{name}.tmp"));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(contents.as_bytes())?;
        f.write_all(b"\n")?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)
}
