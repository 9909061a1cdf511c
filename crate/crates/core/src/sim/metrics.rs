use serde::{Deserialize, Serialize};

use super::ScenarioLogs;
use crate::error::{Error, Result};

/// Reals needed to send the mean and the upper triangle of the covariance
/// of a `dim`-dimensional Gaussian: `dim (dim + 3) / 2`.
pub const fn payload_reals(dim: usize) -> usize {
    dim * (dim + 3) / 2
}

/// One broadcast of one sensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Broadcast {
    /// 1-based sensor id.
    pub sensor: usize,
    pub time: usize,
    /// Message-passing iteration within the time step; 0 for the one-off
    /// anchor location broadcast.
    pub iteration: usize,
    pub reals: usize,
}

/// Every broadcast of one simulation run.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommLedger {
    pub broadcasts: Vec<Broadcast>,
}

impl CommLedger {
    pub fn record(&mut self, sensor: usize, time: usize, iteration: usize, reals: usize) {
        self.broadcasts.push(Broadcast {
            sensor,
            time,
            iteration,
            reals,
        });
    }

    pub fn total_reals(&self) -> usize {
        self.broadcasts.iter().map(|b| b.reals).sum()
    }

    pub fn for_sensor(&self, sensor: usize) -> impl Iterator<Item = &Broadcast> + '_ {
        self.broadcasts.iter().filter(move |b| b.sensor == sensor)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorComponent {
    Location,
    Velocity,
    /// Full 4-D state error.
    Both,
}

/// Root-mean-square error per time step, averaged over runs and mobile
/// sensors. Entry `i` belongs to time `i + 1`.
pub fn rmse(logs: &ScenarioLogs, component: ErrorComponent) -> Result<Vec<f64>> {
    let steps = logs.time_steps();
    if steps == 0 {
        return Err(Error::EmptyLogs);
    }
    let mut sum = vec![0.0; steps];
    let mut count = vec![0usize; steps];
    for run in &logs.runs {
        for r in &run.records {
            let sq = match component {
                ErrorComponent::Location => r.location_error * r.location_error,
                ErrorComponent::Velocity => r.velocity_error * r.velocity_error,
                ErrorComponent::Both => {
                    r.location_error * r.location_error + r.velocity_error * r.velocity_error
                }
            };
            sum[r.time - 1] += sq;
            count[r.time - 1] += 1;
        }
    }
    if count.contains(&0) {
        return Err(Error::EmptyLogs);
    }
    Ok(sum
        .iter()
        .zip(&count)
        .map(|(s, c)| (s / *c as f64).sqrt())
        .collect())
}
