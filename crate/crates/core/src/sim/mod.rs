//! Decentralized cooperative self-localization of mobile sensors.
//!
//! Mobile sensors move under a constant-velocity model and measure their
//! distance to every other sensor. At each time step every mobile sensor
//! predicts its belief, the two directional range measurements between
//! mobile pairs are averaged, and a fixed number of SPAWN (or standard BP)
//! iterations refine the beliefs. Anchors broadcast their true location.

mod metrics;
mod motion;

pub use metrics::{payload_reals, rmse, Broadcast, CommLedger, ErrorComponent};
pub use motion::{constant_velocity, default_motion_model, location, predict_belief, MotionModel};

use nalgebra::{DMatrix, DVector, Vector2, Vector4};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::engine::{run_iteration, ParamsRule};
use crate::error::{Error, Result};
use crate::gaussian::{psd_sqrt_default, GaussianBelief, IndexRange};
use crate::graph::{
    build_graph, init_messages, symmetrize_observation, Edge, NodeSpec, PairFn, SymmetrizeMode,
    Variant,
};

/// Shared substate of every sensor: the 2-D location.
pub const LOCATION: IndexRange = IndexRange::new(0, 2);

/// Scenario parameters. `Default` is the five-sensor reference setup.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub num_mobile: usize,
    pub num_anchor: usize,
    pub field_size: f64,
    /// Range measurement noise variance.
    pub sigma_n2: f64,
    /// Driving noise variance of the motion model.
    pub sigma_u2: f64,
    /// Number of time steps after the initial one.
    pub time_steps: usize,
    /// Message-passing iterations per time step.
    pub iterations: usize,
    /// True initial states `(x, y, vx, vy)` of the mobile sensors.
    pub initial_states: Vec<[f64; 4]>,
    pub anchor_locations: Vec<[f64; 2]>,
    /// Initial prior covariance, row-major.
    pub initial_cov: [[f64; 4]; 4],
    pub seed: u64,
    pub variant: Variant,
    pub runs: usize,
    pub ut_params: ParamsRule,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            num_mobile: 3,
            num_anchor: 2,
            field_size: 50.0,
            sigma_n2: 1.0,
            sigma_u2: 1e-4,
            time_steps: 50,
            iterations: 2,
            initial_states: vec![
                [0.0, 0.0, 0.2, 1.0],
                [25.0, 50.0, 0.5, -0.8],
                [50.0, 0.0, -1.0, 0.4],
            ],
            anchor_locations: vec![[0.0, 25.0], [50.0, 25.0]],
            initial_cov: [
                [1.0, 0.0, 0.0, 0.0],
                [0.0, 1.0, 0.0, 0.0],
                [0.0, 0.0, 0.01, 0.0],
                [0.0, 0.0, 0.0, 0.01],
            ],
            seed: 0,
            variant: Variant::Spawn,
            runs: 1000,
            ut_params: ParamsRule::Adaptive,
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.initial_states.len() != self.num_mobile {
            return bad(format!(
                "num_mobile = {} but {} initial_states given",
                self.num_mobile,
                self.initial_states.len()
            ));
        }
        if self.anchor_locations.len() != self.num_anchor {
            return bad(format!(
                "num_anchor = {} but {} anchor_locations given",
                self.num_anchor,
                self.anchor_locations.len()
            ));
        }
        if self.time_steps == 0 {
            return bad("time_steps must be at least 1".into());
        }
        if self.iterations == 0 {
            return bad("iterations must be at least 1".into());
        }
        if self.runs == 0 {
            return bad("runs must be at least 1".into());
        }
        if !(self.sigma_n2 >= 0.0) || !self.sigma_n2.is_finite() {
            return bad(format!(
                "sigma_n2 must be non-negative, got {}",
                self.sigma_n2
            ));
        }
        if !(self.field_size > 0.0) {
            return bad(format!(
                "field_size must be positive, got {}",
                self.field_size
            ));
        }
        self.motion_model().validate()?;
        let c0 = self.initial_cov_matrix();
        if crate::gaussian::max_asymmetry(&c0) > 0.0 {
            return bad("initial_cov must be symmetric".into());
        }
        psd_sqrt_default(&c0).map_err(|e| Error::InvalidConfig(format!("initial_cov: {e}")))?;
        let finite = self
            .initial_states
            .iter()
            .flatten()
            .chain(self.anchor_locations.iter().flatten())
            .all(|v| v.is_finite());
        if !finite {
            return bad("states and anchor locations must be finite".into());
        }
        Ok(())
    }

    pub fn motion_model(&self) -> MotionModel {
        constant_velocity(1.0, self.sigma_u2)
    }

    pub fn initial_cov_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(4, 4, |i, j| self.initial_cov[i][j])
    }

    pub fn num_sensors(&self) -> usize {
        self.num_mobile + self.num_anchor
    }
}

/// State of one mobile sensor after the last iteration of one time step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub run: usize,
    pub time: usize,
    /// 1-based sensor id.
    pub sensor: usize,
    pub truth: [f64; 4],
    pub mean: [f64; 4],
    pub cov: [[f64; 4]; 4],
    pub location_error: f64,
    pub velocity_error: f64,
    /// Sigma points generated by this sensor in each iteration.
    pub sigma_points: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunLog {
    pub run: usize,
    /// Ordered by time, then sensor.
    pub records: Vec<StepRecord>,
    pub comm: CommLedger,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioLogs {
    pub runs: Vec<RunLog>,
}

impl ScenarioLogs {
    pub fn time_steps(&self) -> usize {
        self.runs
            .iter()
            .flat_map(|r| r.records.iter().map(|s| s.time))
            .max()
            .unwrap_or(0)
    }

    pub fn records(&self) -> impl Iterator<Item = &StepRecord> + '_ {
        self.runs.iter().flat_map(|r| r.records.iter())
    }
}

/// Whether beliefs are refined by measurements or only predicted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Estimator {
    #[default]
    Spbp,
    /// Same priors and motion model, measurements ignored.
    PredictionOnly,
}

/// Seed of run `run`: the root seed and the run index pushed through
/// SplitMix64, so neighbouring runs get unrelated streams.
pub fn run_seed(root: u64, run: usize) -> u64 {
    splitmix64(root ^ splitmix64(run as u64 ^ 0x5350_4250))
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Range between two locations plus additive noise.
pub fn range_measurement(a: &Vector2<f64>, b: &Vector2<f64>, noise: f64) -> f64 {
    (a - b).norm() + noise
}

/// Runs every Monte Carlo run of the scenario.
///
/// Runs execute in parallel; each owns its random stream, and logs come back
/// ordered by run index.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<ScenarioLogs> {
    run_scenario_with(cfg, Estimator::Spbp)
}

pub fn run_scenario_with(cfg: &ScenarioConfig, estimator: Estimator) -> Result<ScenarioLogs> {
    cfg.validate()?;
    let runs = (0..cfg.runs)
        .into_par_iter()
        .map(|run| run_single(cfg, run, estimator))
        .collect::<Result<Vec<_>>>()?;
    Ok(ScenarioLogs { runs })
}

fn noise_sample(rng: &mut ChaCha8Rng, std: f64) -> f64 {
    let e: f64 = StandardNormal.sample(rng);
    e * std
}

/// Simulates Monte Carlo run `run`.
pub fn run_single(cfg: &ScenarioConfig, run: usize, estimator: Estimator) -> Result<RunLog> {
    let mut rng = ChaCha8Rng::seed_from_u64(run_seed(cfg.seed, run));
    let motion = cfg.motion_model();
    let c0 = cfg.initial_cov_matrix();
    let c0_root = psd_sqrt_default(&c0)?;
    let sigma_u = cfg.sigma_u2.sqrt();
    let sigma_n = cfg.sigma_n2.sqrt();
    let m = cfg.num_mobile;
    let anchors: Vec<Vector2<f64>> = cfg
        .anchor_locations
        .iter()
        .map(|a| Vector2::new(a[0], a[1]))
        .collect();

    let mut truth: Vec<Vector4<f64>> = cfg
        .initial_states
        .iter()
        .map(|s| Vector4::from(*s))
        .collect();
    let mut beliefs = truth
        .iter()
        .map(|x| {
            let eps = DVector::<f64>::from_fn(4, |_, _| StandardNormal.sample(&mut rng));
            let mean = DVector::from_column_slice(x.as_slice()) + &c0_root * eps;
            GaussianBelief::new(mean, c0.clone())
        })
        .collect::<Result<Vec<_>>>()?;

    let mut comm = CommLedger::default();
    for (a, _) in anchors.iter().enumerate() {
        comm.record(m + a + 1, 0, 0, LOCATION.length);
    }

    let ctx = |time: usize| {
        move |e: Error| Error::Scenario {
            run,
            time,
            source: Box::new(e),
        }
    };

    let mut records = Vec::with_capacity(cfg.time_steps * m);
    for time in 1..=cfg.time_steps {
        for x in truth.iter_mut() {
            let u = Vector2::new(
                noise_sample(&mut rng, sigma_u),
                noise_sample(&mut rng, sigma_u),
            );
            *x = motion.propagate(x, &u);
        }
        let priors = beliefs
            .iter()
            .map(|b| predict_belief(b, &motion))
            .collect::<Result<Vec<_>>>()
            .map_err(ctx(time))?;

        // z[k][l]: range measured by mobile k to sensor l (mobiles first)
        let locations: Vec<Vector2<f64>> = truth
            .iter()
            .map(location)
            .chain(anchors.iter().copied())
            .collect();
        let mut z = vec![vec![0.0; locations.len()]; m];
        for (k, row) in z.iter_mut().enumerate() {
            for (l, cell) in row.iter_mut().enumerate() {
                if l != k {
                    let n = noise_sample(&mut rng, sigma_n);
                    *cell = range_measurement(&locations[k], &locations[l], n);
                }
            }
        }

        let (posteriors, sigma_points) = match estimator {
            Estimator::PredictionOnly => (priors, vec![Vec::new(); m]),
            Estimator::Spbp => {
                localize_step(cfg, time, &priors, &anchors, &z, &mut comm).map_err(ctx(time))?
            }
        };

        for k in 0..m {
            let b = &posteriors[k];
            let mean = [b.mean[0], b.mean[1], b.mean[2], b.mean[3]];
            let mut cov = [[0.0; 4]; 4];
            for (i, row) in cov.iter_mut().enumerate() {
                for (j, c) in row.iter_mut().enumerate() {
                    *c = b.cov[(i, j)];
                }
            }
            let err = Vector4::from(mean) - truth[k];
            records.push(StepRecord {
                run,
                time,
                sensor: k + 1,
                truth: truth[k].into(),
                mean,
                cov,
                location_error: err.fixed_rows::<2>(0).norm(),
                velocity_error: err.fixed_rows::<2>(2).norm(),
                sigma_points: sigma_points[k].clone(),
            });
        }
        beliefs = posteriors;
    }

    Ok(RunLog { run, records, comm })
}

/// Builds the measurement graph of one time step and runs the configured
/// number of message-passing iterations.
fn localize_step(
    cfg: &ScenarioConfig,
    time: usize,
    priors: &[GaussianBelief],
    anchors: &[Vector2<f64>],
    z: &[Vec<f64>],
    comm: &mut CommLedger,
) -> Result<(Vec<GaussianBelief>, Vec<Vec<usize>>)> {
    let m = priors.len();
    let mut nodes: Vec<NodeSpec> = priors
        .iter()
        .map(|p| NodeSpec::new(p.clone(), LOCATION))
        .collect();
    nodes.extend(
        anchors
            .iter()
            .map(|a| NodeSpec::anchor(DVector::from_column_slice(a.as_slice()))),
    );

    let var = DMatrix::from_element(1, 1, cfg.sigma_n2);
    let mut edges = Vec::new();
    for k in 0..m {
        for l in (k + 1)..nodes.len() {
            if l < m {
                let s = symmetrize_observation(
                    &DVector::from_element(1, z[k][l]),
                    &var,
                    &DVector::from_element(1, z[l][k]),
                    &var,
                    SymmetrizeMode::Average,
                )?;
                edges.push(Edge::new(k, l, s.noise_cov, s.obs));
            } else {
                edges.push(Edge::scalar(k, l, cfg.sigma_n2, z[k][l]));
            }
        }
    }
    let graph = build_graph(nodes, edges, PairFn::range())?;

    let payload = payload_reals(LOCATION.length);
    let mut sigma_points = vec![Vec::with_capacity(cfg.iterations); m];
    let mut store = init_messages(&graph);
    for p in 1..=cfg.iterations {
        for k in 0..m {
            comm.record(k + 1, time, p, payload);
        }
        store = run_iteration(&graph, &store, cfg.variant, &cfg.ut_params)?;
        for (k, counts) in sigma_points.iter_mut().enumerate() {
            counts.push(store.sigma_points[k]);
        }
    }
    Ok((store.beliefs.into_iter().take(m).collect(), sigma_points))
}
