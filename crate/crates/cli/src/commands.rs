use std::fs;
use std::path::{Path, PathBuf};

use spbp::sim::{run_scenario, ScenarioConfig};

use crate::checks::{render_table, selftest_suite};
use crate::config::load_config;
use crate::output::{
    unix_ms, write_logs, RmseTable, RunManifest, LOGS_FILE, MANIFEST_FILE, RMSE_FILE,
};
use crate::{CliError, SweepParam};

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir)
        .map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", dir.display())))
}

fn simulate_logs(cfg: &ScenarioConfig) -> Result<spbp::sim::ScenarioLogs, CliError> {
    run_scenario(cfg).map_err(|e| CliError::Runtime(e.to_string()))
}

/// `simulate`: logs, RMSE table and manifest for one scenario.
pub fn simulate(
    config: &Path,
    out: &Path,
    runs: Option<usize>,
    seed: Option<u64>,
) -> Result<(), CliError> {
    let started = unix_ms();
    let mut cfg = load_config(config)?;
    if let Some(r) = runs {
        cfg.runs = r;
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.validate()
        .map_err(|e| CliError::Config(e.to_string()))?;

    let logs = simulate_logs(&cfg)?;
    let table = RmseTable::from_logs(&logs)?;
    create_dir(out)?;
    let logs_path = out.join(LOGS_FILE);
    let rmse_path = out.join(RMSE_FILE);
    write_logs(&logs_path, &logs)?;
    table.write(&rmse_path)?;
    RunManifest {
        command: "simulate".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        seed: cfg.seed,
        config: cfg,
        started_unix_ms: started,
        finished_unix_ms: unix_ms(),
        outputs: vec![logs_path, rmse_path],
    }
    .write(&out.join(MANIFEST_FILE))
}

/// `selftest`: the check table, and an error if any check failed.
pub fn selftest(inject_fault: bool) -> (String, Result<(), CliError>) {
    let outcomes = selftest_suite(inject_fault);
    let table = render_table(&outcomes);
    let failed = outcomes.iter().filter(|o| !o.passed).count();
    let status = if failed == 0 {
        Ok(())
    } else {
        Err(CliError::Runtime(format!(
            "{failed} of {} checks failed",
            outcomes.len()
        )))
    };
    (table, status)
}

#[derive(Debug, Clone, PartialEq)]
struct SweepPoint {
    value: f64,
    label: String,
    cfg: ScenarioConfig,
}

fn parse_value(param: SweepParam, text: &str) -> Result<(f64, String), CliError> {
    let bad =
        |e: String| CliError::Usage(format!("invalid value {text:?} for {}: {e}", param.name()));
    match param {
        SweepParam::SigmaN2 => {
            let v: f64 = text
                .parse()
                .map_err(|e: std::num::ParseFloatError| bad(e.to_string()))?;
            Ok((v, v.to_string()))
        }
        SweepParam::P | SweepParam::Runs => {
            let v: usize = text
                .parse()
                .map_err(|e: std::num::ParseIntError| bad(e.to_string()))?;
            Ok((v as f64, v.to_string()))
        }
    }
}

fn sweep_points(
    base: &ScenarioConfig,
    param: SweepParam,
    values: &str,
) -> Result<Vec<SweepPoint>, CliError> {
    let texts: Vec<&str> = values
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .collect();
    if texts.is_empty() {
        return Err(CliError::Usage("sweep needs at least one value".into()));
    }
    let mut points = Vec::with_capacity(texts.len());
    for t in texts {
        let (value, label) = parse_value(param, t)?;
        let mut cfg = base.clone();
        match param {
            SweepParam::SigmaN2 => cfg.sigma_n2 = value,
            SweepParam::P => cfg.iterations = value as usize,
            SweepParam::Runs => cfg.runs = value as usize,
        }
        cfg.validate()
            .map_err(|e| CliError::Config(format!("{} = {label}: {e}", param.name())))?;
        points.push(SweepPoint { value, label, cfg });
    }
    points.sort_by(|a, b| a.value.total_cmp(&b.value));
    if let Some(w) = points.windows(2).find(|w| w[0].value == w[1].value) {
        return Err(CliError::Usage(format!(
            "duplicate sweep value {}",
            w[0].label
        )));
    }
    Ok(points)
}

/// `sweep`: one `rmse.csv` per value, an index sorted by value, and a
/// manifest. Every value uses the seed of the base config.
pub fn sweep(config: &Path, param: SweepParam, values: &str, out: &Path) -> Result<(), CliError> {
    let started = unix_ms();
    let base = load_config(config)?;
    let points = sweep_points(&base, param, values)?;

    create_dir(out)?;
    let mut outputs: Vec<PathBuf> = Vec::new();
    let mut index = vec!["value,dir,rmse_location_final,rmse_location_mean".to_string()];
    for p in &points {
        let logs = simulate_logs(&p.cfg)?;
        let table = RmseTable::from_logs(&logs)?;
        let dir_name = format!("{}_{}", param.name(), p.label);
        let dir = out.join(&dir_name);
        create_dir(&dir)?;
        let path = dir.join(RMSE_FILE);
        table.write(&path)?;
        outputs.push(path);
        let last = *table.location.last().expect("at least one time step");
        let mean = table.location.iter().sum::<f64>() / table.location.len() as f64;
        index.push(format!(
            "{},{dir_name},{},{}",
            p.label,
            crate::output::fmt_real(last),
            crate::output::fmt_real(mean)
        ));
    }
    let index_path = out.join("index.csv");
    fs::write(&index_path, index.join("\n") + "\n")
        .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", index_path.display())))?;
    outputs.push(index_path);

    RunManifest {
        command: format!("sweep {} over {}", param.name(), values),
        version: env!("CARGO_PKG_VERSION").into(),
        seed: base.seed,
        config: base,
        started_unix_ms: started,
        finished_unix_ms: unix_ms(),
        outputs,
    }
    .write(&out.join(MANIFEST_FILE))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sweep_values_sorted_and_applied() {
        let base = ScenarioConfig::default();
        let pts = sweep_points(&base, SweepParam::SigmaN2, "4, 0.25,1").unwrap();
        let labels: Vec<&str> = pts.iter().map(|p| p.label.as_str()).collect();
        assert_eq!(labels, ["0.25", "1", "4"]);
        assert_eq!(pts[0].cfg.sigma_n2, 0.25);
        let pts = sweep_points(&base, SweepParam::P, "3,1,2").unwrap();
        assert_eq!(
            pts.iter().map(|p| p.cfg.iterations).collect::<Vec<_>>(),
            [1, 2, 3]
        );
    }

    #[test]
    fn sweep_value_errors() {
        let base = ScenarioConfig::default();
        assert!(matches!(
            sweep_points(&base, SweepParam::P, ""),
            Err(CliError::Usage(_))
        ));
        assert!(matches!(
            sweep_points(&base, SweepParam::P, " , "),
            Err(CliError::Usage(_))
        ));
        assert!(matches!(
            sweep_points(&base, SweepParam::P, "1.5"),
            Err(CliError::Usage(_))
        ));
        assert!(matches!(
            sweep_points(&base, SweepParam::P, "1,1"),
            Err(CliError::Usage(_))
        ));
        assert!(matches!(
            sweep_points(&base, SweepParam::P, "0"),
            Err(CliError::Config(_))
        ));
        assert!(matches!(
            sweep_points(&base, SweepParam::SigmaN2, "-1"),
            Err(CliError::Config(_))
        ));
    }
}
