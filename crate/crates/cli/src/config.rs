//! Scenario configuration files.
//!
//! A config is a TOML document whose keys are the fields of
//! [`ScenarioConfig`]. Missing keys take the reference-scenario defaults, so
//! an empty file reproduces the reference setup.

use std::fs;
use std::path::Path;

use spbp::sim::ScenarioConfig;

use crate::CliError;

pub fn parse_config(text: &str) -> Result<ScenarioConfig, CliError> {
    let cfg: ScenarioConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
    cfg.validate()
        .map_err(|e| CliError::Config(e.to_string()))?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<ScenarioConfig, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    parse_config(&text).map_err(|e| match e {
        CliError::Config(msg) => CliError::Config(format!("{}: {msg}", path.display())),
        other => other,
    })
}

pub fn to_toml(cfg: &ScenarioConfig) -> Result<String, CliError> {
    toml::to_string(cfg).map_err(|e| CliError::Runtime(format!("cannot serialize config: {e}")))
}
