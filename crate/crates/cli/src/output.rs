//! CSV logs, RMSE tables and the run manifest.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use spbp::sim::{rmse, ErrorComponent, ScenarioConfig, ScenarioLogs, StepRecord};

use crate::CliError;

pub const LOGS_FILE: &str = "logs.csv";
pub const RMSE_FILE: &str = "rmse.csv";
pub const MANIFEST_FILE: &str = "manifest.json";

/// 17 significant digits, enough to round-trip any `f64`.
pub fn fmt_real(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn logs_header() -> String {
    let mut cols: Vec<String> = ["run", "time", "sensor"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let names = ["x", "y", "vx", "vy"];
    cols.extend(names.iter().map(|n| format!("truth_{n}")));
    cols.extend(names.iter().map(|n| format!("mean_{n}")));
    for i in 0..4 {
        for j in i..4 {
            cols.push(format!("cov_{}_{}", names[i], names[j]));
        }
    }
    cols.push("location_error".into());
    cols.push("velocity_error".into());
    cols.join(",")
}

pub fn log_row(r: &StepRecord) -> String {
    let mut cols = vec![r.run.to_string(), r.time.to_string(), r.sensor.to_string()];
    cols.extend(r.truth.iter().map(|v| fmt_real(*v)));
    cols.extend(r.mean.iter().map(|v| fmt_real(*v)));
    for i in 0..4 {
        for j in i..4 {
            cols.push(fmt_real(r.cov[i][j]));
        }
    }
    cols.push(fmt_real(r.location_error));
    cols.push(fmt_real(r.velocity_error));
    cols.join(",")
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Runtime(format!("cannot write {}: {e}", path.display()))
}

fn write_lines(
    path: &Path,
    header: &str,
    rows: impl Iterator<Item = String>,
) -> Result<(), CliError> {
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = BufWriter::new(file);
    writeln!(w, "{header}").map_err(|e| io_err(path, e))?;
    for row in rows {
        writeln!(w, "{row}").map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

pub fn write_logs(path: &Path, logs: &ScenarioLogs) -> Result<(), CliError> {
    write_lines(path, &logs_header(), logs.records().map(log_row))
}

/// Location, velocity and full-state RMSE per time step.
#[derive(Debug, Clone, PartialEq)]
pub struct RmseTable {
    pub location: Vec<f64>,
    pub velocity: Vec<f64>,
    pub both: Vec<f64>,
}

impl RmseTable {
    pub fn from_logs(logs: &ScenarioLogs) -> Result<Self, CliError> {
        let get = |c| rmse(logs, c).map_err(|e| CliError::Runtime(e.to_string()));
        Ok(Self {
            location: get(ErrorComponent::Location)?,
            velocity: get(ErrorComponent::Velocity)?,
            both: get(ErrorComponent::Both)?,
        })
    }

    pub fn write(&self, path: &Path) -> Result<(), CliError> {
        let rows = (0..self.location.len()).map(|i| {
            format!(
                "{},{},{},{}",
                i + 1,
                fmt_real(self.location[i]),
                fmt_real(self.velocity[i]),
                fmt_real(self.both[i])
            )
        });
        write_lines(path, "time,rmse_location,rmse_velocity,rmse_both", rows)
    }
}

/// Record of one CLI invocation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub seed: u64,
    pub config: ScenarioConfig,
    pub started_unix_ms: u128,
    pub finished_unix_ms: u128,
    pub outputs: Vec<PathBuf>,
}

pub fn unix_ms() -> u128 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_millis())
        .unwrap_or(0)
}

impl RunManifest {
    pub fn write(&self, path: &Path) -> Result<(), CliError> {
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| CliError::Runtime(format!("cannot serialize manifest: {e}")))?;
        std::fs::write(path, text + "\n").map_err(|e| io_err(path, e))
    }

    pub fn read(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }
}
