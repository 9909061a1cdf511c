//! Numerical checks shared by `spbp selftest` and the acceptance suite.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spbp::engine::{
    compose_prior, run_iteration, run_iterations, update_belief, CompositeObservation, ParamsRule,
};
use spbp::gaussian::extract_marginal;
use spbp::graph::{init_messages, MessageStore};
use spbp::models::{random_linear_tree, random_psd, random_range_network, random_vector};
use spbp::oracles::{exact_gaussian_marginals, mc_posterior_mean, range_toy};
use spbp::sigma_points::{default_params, generate, unscented_transform};
use spbp::sim::{
    payload_reals, rmse, run_scenario_with, run_single, ErrorComponent, Estimator, ScenarioConfig,
};
use spbp::{GaussianBelief, Graph, NodeId, Variant};

#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl CheckOutcome {
    fn new(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            passed,
            detail: detail.into(),
        }
    }

    fn from_result(name: &str, r: Result<String, String>) -> Self {
        match r {
            Ok(d) => Self::new(name, true, d),
            Err(d) => Self::new(name, false, d),
        }
    }
}

fn rel_vec(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).norm() / b.norm().max(1.0)
}

fn rel_mat(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm().max(1.0)
}

/// Weighted mean and covariance of generated sigma points against the
/// inputs, `cases` random pairs per dimension `1..=max_dim`.
///
/// With `fault` set, one sigma point of one case is displaced before the
/// comparison.
pub fn sp_reconstruction(cases: usize, max_dim: usize, seed: u64, fault: bool) -> CheckOutcome {
    const TOL: f64 = 1e-10;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0_f64;
    let fault_dim = rng.random_range(1..=max_dim);
    for dim in 1..=max_dim {
        for case in 0..cases {
            let mu = random_vector(&mut rng, dim, 10.0);
            let rank = if case % 10 == 9 {
                rng.random_range(0..dim.max(1))
            } else {
                dim
            };
            let cov = random_psd(&mut rng, dim, rank);
            let mut set = match generate(&mu, &cov, &default_params(dim)) {
                Ok(s) => s,
                Err(e) => {
                    return CheckOutcome::new("sp_reconstruction", false, format!("J = {dim}: {e}"))
                }
            };
            if fault && dim == fault_dim && case == 0 {
                let j = rng.random_range(0..set.len());
                set.points[j][0] += rng.random_range(0.5..1.5);
            }
            let m = match unscented_transform(&set, |x| x.clone()) {
                Ok(m) => m,
                Err(e) => {
                    return CheckOutcome::new("sp_reconstruction", false, format!("J = {dim}: {e}"))
                }
            };
            worst = worst.max(rel_vec(&m.mean, &mu)).max(rel_mat(&m.cov, &cov));
        }
    }
    CheckOutcome::new(
        "sp_reconstruction",
        worst <= TOL,
        format!("{cases} pairs per J in 1..={max_dim}, worst relative error {worst:.2e} (tol {TOL:.0e})"),
    )
}

/// Standard BP with `P = diameter` on random linear trees against the exact
/// joint solve.
pub fn linear_tree_equivalence(cases: usize, seed: u64) -> CheckOutcome {
    const TOL: f64 = 1e-8;
    let name = "linear_tree_equivalence";
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0_f64;
    for case in 0..cases {
        let nodes = rng.random_range(3..=5);
        let tree = random_linear_tree(&mut rng, nodes, 1..=4);
        let run = || -> spbp::Result<(Vec<GaussianBelief>, MessageStore)> {
            let graph = tree.graph()?;
            let exact = exact_gaussian_marginals(&tree.model, &tree.observations)?;
            let store = run_iterations(
                &graph,
                init_messages(&graph),
                Variant::StandardBp,
                graph.diameter(),
                &ParamsRule::Adaptive,
            )?;
            Ok((exact, store))
        };
        let (exact, store) = match run() {
            Ok(v) => v,
            Err(e) => return CheckOutcome::new(name, false, format!("case {case}: {e}")),
        };
        for (k, want) in exact.iter().enumerate() {
            let got = store.belief(k);
            worst = worst
                .max(rel_vec(&got.mean, &want.mean))
                .max(rel_mat(&got.cov, &want.cov));
        }
    }
    CheckOutcome::new(
        name,
        worst <= TOL,
        format!("{cases} trees of 3-5 nodes, dims 1-4, worst relative error {worst:.2e} (tol {TOL:.0e})"),
    )
}

/// SPBP means on the two-node range problem against importance sampling.
pub fn range_toy_agreement(samples: usize, seed: u64) -> CheckOutcome {
    let name = "range_toy_vs_monte_carlo";
    let g = range_toy();
    let run = || -> spbp::Result<_> {
        let mc = mc_posterior_mean(&g, samples, seed)?;
        let store = run_iterations(
            &g,
            init_messages(&g),
            Variant::Spawn,
            1,
            &ParamsRule::Adaptive,
        )?;
        Ok((mc, store))
    };
    let (mc, store) = match run() {
        Ok(v) => v,
        Err(e) => return CheckOutcome::new(name, false, e.to_string()),
    };
    let mut passed = true;
    let mut parts = Vec::new();
    for (k, est) in mc.iter().enumerate() {
        for i in 0..est.mean.len() {
            let tol = (3.0 * est.std_err[i]).max(0.1);
            let diff = (store.belief(k).mean[i] - est.mean[i]).abs();
            passed &= diff <= tol;
            parts.push(format!("x{k}[{i}] {diff:.3}/{tol:.3}"));
        }
    }
    CheckOutcome::new(
        name,
        passed,
        format!("{samples} samples; |diff|/tol: {}", parts.join(", ")),
    )
}

/// Payload formula `d (d + 3) / 2` against mean plus upper-triangle counts.
pub fn payload_formula() -> CheckOutcome {
    let ok = (1..=6).all(|d| payload_reals(d) == d + d * (d + 1) / 2);
    let values: Vec<String> = (1..=6).map(|d| payload_reals(d).to_string()).collect();
    CheckOutcome::new(
        "payload_formula",
        ok,
        format!("d = 1..6 -> {}", values.join(", ")),
    )
}

/// Every mobile-sensor update of one run uses 25 sigma points.
pub fn sigma_points_per_update(cfg: &ScenarioConfig) -> CheckOutcome {
    let name = "sigma_points_per_update_25";
    match run_single(cfg, 0, Estimator::Spbp) {
        Ok(log) => {
            let counts: Vec<usize> = log
                .records
                .iter()
                .flat_map(|r| r.sigma_points.iter().copied())
                .collect();
            let ok = !counts.is_empty() && counts.iter().all(|c| *c == 25);
            let lo = counts.iter().min().copied().unwrap_or(0);
            let hi = counts.iter().max().copied().unwrap_or(0);
            CheckOutcome::new(
                name,
                ok,
                format!(
                    "{} updates, sigma points per update in [{lo}, {hi}]",
                    counts.len()
                ),
            )
        }
        Err(e) => CheckOutcome::new(name, false, e.to_string()),
    }
}

/// Every mobile-sensor broadcast of one run carries 5 reals.
pub fn reals_per_broadcast(cfg: &ScenarioConfig) -> CheckOutcome {
    let name = "reals_per_broadcast_5";
    match run_single(cfg, 0, Estimator::Spbp) {
        Ok(log) => {
            let mobile: Vec<usize> = log
                .comm
                .broadcasts
                .iter()
                .filter(|b| b.sensor <= cfg.num_mobile)
                .map(|b| b.reals)
                .collect();
            let per_iteration = cfg.num_mobile * cfg.time_steps * cfg.iterations;
            let ok = mobile.len() == per_iteration && mobile.iter().all(|r| *r == 5);
            CheckOutcome::new(
                name,
                ok,
                format!(
                    "{} mobile broadcasts (expected {per_iteration}), all 5 reals: {ok}",
                    mobile.len()
                ),
            )
        }
        Err(e) => CheckOutcome::new(name, false, e.to_string()),
    }
}

/// Location RMSE band over `[5, T]` and the gain over prediction only at `T`.
pub fn rmse_band(cfg: &ScenarioConfig) -> Vec<CheckOutcome> {
    let run = || -> spbp::Result<_> {
        let spbp = rmse(
            &run_scenario_with(cfg, Estimator::Spbp)?,
            ErrorComponent::Location,
        )?;
        let pred = rmse(
            &run_scenario_with(cfg, Estimator::PredictionOnly)?,
            ErrorComponent::Location,
        )?;
        Ok((spbp, pred))
    };
    let (spbp, pred) = match run() {
        Ok(v) => v,
        Err(e) => {
            return vec![
                CheckOutcome::new("rmse_band", false, e.to_string()),
                CheckOutcome::new("rmse_vs_prediction_only", false, e.to_string()),
            ]
        }
    };
    let band: Vec<f64> = spbp.iter().skip(4).copied().collect();
    let lo = band.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = band.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let last = *spbp.last().expect("non-empty rmse");
    let base = *pred.last().expect("non-empty rmse");
    vec![
        CheckOutcome::new(
            "rmse_band",
            !band.is_empty() && lo >= 0.3 && hi <= 2.5,
            format!("{} runs, location RMSE over i in [5, {}] spans [{lo:.3}, {hi:.3}] (band [0.3, 2.5])", cfg.runs, spbp.len()),
        ),
        CheckOutcome::new(
            "rmse_vs_prediction_only",
            last <= 0.5 * base,
            format!("at i = {}: spbp {last:.3}, prediction only {base:.3}, ratio {:.3} (max 0.5)", spbp.len(), last / base),
        ),
    ]
}

fn warmed(graph: &Graph, variant: Variant, rng: &mut ChaCha8Rng) -> spbp::Result<MessageStore> {
    let p = rng.random_range(0..3);
    run_iterations(
        graph,
        init_messages(graph),
        variant,
        p,
        &ParamsRule::Adaptive,
    )
}

fn property(
    name: &str,
    cases: usize,
    seed: u64,
    case: impl Fn(&mut ChaCha8Rng) -> Result<(), String>,
) -> CheckOutcome {
    for i in 0..cases {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(i as u64));
        if let Err(e) = case(&mut rng) {
            return CheckOutcome::new(name, false, format!("case {i}: {e}"));
        }
    }
    CheckOutcome::new(name, true, format!("{cases} random range networks"))
}

/// Under SPAWN, every outgoing message is the shared marginal of the new belief.
pub fn spawn_identity(cases: usize, seed: u64) -> CheckOutcome {
    property("spawn_message_equals_belief", cases, seed, |rng| {
        let g = random_range_network(rng);
        let prev = warmed(&g, Variant::Spawn, rng).map_err(|e| e.to_string())?;
        let next = run_iteration(&g, &prev, Variant::Spawn, &ParamsRule::Adaptive)
            .map_err(|e| e.to_string())?;
        for (from, to) in g.directed_pairs() {
            let want = extract_marginal(next.belief(from), g.node(from).shared)
                .map_err(|e| e.to_string())?;
            if next.message(from, to) != Some(&want) {
                return Err(format!(
                    "message {from}->{to} differs from the belief marginal"
                ));
            }
        }
        Ok(())
    })
}

/// Under standard BP, perturbing `k → l` leaves the next `l → k` unchanged.
pub fn extrinsic_exclusion(cases: usize, seed: u64) -> CheckOutcome {
    property("extrinsic_exclusion", cases, seed, |rng| {
        let g = random_range_network(rng);
        let prev = warmed(&g, Variant::StandardBp, rng).map_err(|e| e.to_string())?;
        let pairs: Vec<_> = g.directed_pairs().collect();
        let (k, l) = pairs[rng.random_range(0..pairs.len())];
        let mut perturbed = prev.clone();
        let m = perturbed
            .messages
            .get_mut(&(k, l))
            .ok_or("missing message")?;
        m.mean.add_scalar_mut(rng.random_range(1.0..5.0));
        m.cov *= rng.random_range(1.5..3.0);

        let a = run_iteration(&g, &prev, Variant::StandardBp, &ParamsRule::Adaptive)
            .map_err(|e| e.to_string())?;
        let b = run_iteration(&g, &perturbed, Variant::StandardBp, &ParamsRule::Adaptive)
            .map_err(|e| e.to_string())?;
        if a.message(l, k) != b.message(l, k) {
            return Err(format!("message {l}->{k} depends on {k}->{l}"));
        }
        if !g.node(l).is_anchor && a.belief(l) == b.belief(l) {
            return Err(format!(
                "perturbing {k}->{l} did not reach the belief of {l}"
            ));
        }
        Ok(())
    })
}

fn belief_with_order(
    g: &Graph,
    store: &MessageStore,
    k: NodeId,
    order: &[NodeId],
) -> spbp::Result<GaussianBelief> {
    let incoming = order
        .iter()
        .map(|l| {
            store
                .message(*l, k)
                .map(|m| (*l, m))
                .ok_or(spbp::Error::UnknownNode(*l))
        })
        .collect::<spbp::Result<Vec<_>>>()?;
    let (prior, layout) = compose_prior(k, &g.node(k).prior, &incoming)?;
    let cobs = CompositeObservation::from_graph(g, &layout)?;
    update_belief(
        &prior,
        &layout,
        &cobs,
        &ParamsRule::Adaptive.for_dim(layout.total_dim),
    )
}

/// Shuffling the neighbor order of a composite leaves the belief unchanged
/// to `1e-10` relative.
pub fn order_invariance(cases: usize, seed: u64) -> CheckOutcome {
    const TOL: f64 = 1e-10;
    property("neighbor_order_invariance", cases, seed, |rng| {
        let g = random_range_network(rng);
        let store = warmed(&g, Variant::Spawn, rng).map_err(|e| e.to_string())?;
        let mobiles: Vec<NodeId> = (0..g.len()).filter(|k| !g.node(*k).is_anchor).collect();
        let k = mobiles[rng.random_range(0..mobiles.len())];
        let canonical = g.neighbor_ids(k);
        let mut shuffled = canonical.clone();
        shuffled.shuffle(rng);
        let a = belief_with_order(&g, &store, k, &canonical).map_err(|e| e.to_string())?;
        let b = belief_with_order(&g, &store, k, &shuffled).map_err(|e| e.to_string())?;
        let scale = a.mean.amax().max(a.cov.amax()).max(1.0);
        let dev = (&a.mean - &b.mean).amax().max((&a.cov - &b.cov).amax());
        if dev > TOL * scale {
            return Err(format!(
                "node {k}: deviation {dev:.2e} for order {shuffled:?}"
            ));
        }
        Ok(())
    })
}

/// Beliefs and messages stay symmetric PSD over several iterations of both variants.
pub fn psd_preservation(cases: usize, seed: u64) -> CheckOutcome {
    property("psd_preservation", cases, seed, |rng| {
        let g = random_range_network(rng);
        let variant = if rng.random_bool(0.5) {
            Variant::Spawn
        } else {
            Variant::StandardBp
        };
        let p = rng.random_range(1..=5);
        let store = run_iterations(&g, init_messages(&g), variant, p, &ParamsRule::Adaptive)
            .map_err(|e| e.to_string())?;
        for b in store.beliefs.iter().chain(store.messages.values()) {
            if !b.satisfies_invariants() {
                return Err(format!(
                    "{variant:?} after {p} iterations: asymmetry {:.2e}, min eigenvalue {:.2e}",
                    b.asymmetry(),
                    b.min_eigenvalue()
                ));
            }
        }
        Ok(())
    })
}

/// The selftest suite: reconstruction, oracle equivalence and the
/// reference-scenario counts.
pub fn selftest_suite(inject_fault: bool) -> Vec<CheckOutcome> {
    let counts = ScenarioConfig {
        runs: 1,
        time_steps: 5,
        ..ScenarioConfig::default()
    };
    vec![
        sp_reconstruction(20, 12, 1, inject_fault),
        linear_tree_equivalence(10, 2),
        CheckOutcome::from_result("exact_vs_sp_update_two_node", two_node_linear_update()),
        payload_formula(),
        sigma_points_per_update(&counts),
        reals_per_broadcast(&counts),
    ]
}

/// SP update of a two-node difference model against the hand-derived
/// posterior `N(1/3, 2/3)`.
fn two_node_linear_update() -> Result<String, String> {
    let tree = spbp::models::LinearTree {
        model: spbp::oracles::LinearPairModel {
            priors: vec![
                GaussianBelief::from_slices(&[0.0], &[1.0]).map_err(|e| e.to_string())?,
                GaussianBelief::from_slices(&[0.0], &[1.0]).map_err(|e| e.to_string())?,
            ],
            edges: vec![spbp::oracles::LinearEdge {
                nodes: (0, 1),
                first: DMatrix::from_element(1, 1, 1.0),
                second: DMatrix::from_element(1, 1, -1.0),
                noise_cov: DMatrix::from_element(1, 1, 1.0),
            }],
        },
        observations: vec![DVector::from_element(1, 1.0)],
    };
    let g = tree.graph().map_err(|e| e.to_string())?;
    let store = run_iterations(
        &g,
        init_messages(&g),
        Variant::Spawn,
        1,
        &ParamsRule::Adaptive,
    )
    .map_err(|e| e.to_string())?;
    let exact =
        exact_gaussian_marginals(&tree.model, &tree.observations).map_err(|e| e.to_string())?;
    let b = store.belief(0);
    let dev = (b.mean[0] - 1.0 / 3.0)
        .abs()
        .max((b.cov[(0, 0)] - 2.0 / 3.0).abs())
        .max((b.mean[0] - exact[0].mean[0]).abs());
    if dev <= 1e-12 {
        Ok(format!(
            "belief N({:.6}, {:.6}), deviation {dev:.1e}",
            b.mean[0],
            b.cov[(0, 0)]
        ))
    } else {
        Err(format!("deviation {dev:.2e} from N(1/3, 2/3)"))
    }
}

/// Plain-text table of outcomes.
pub fn render_table(outcomes: &[CheckOutcome]) -> String {
    let width = outcomes.iter().map(|o| o.name.len()).max().unwrap_or(0);
    let mut out = String::new();
    for o in outcomes {
        let status = if o.passed { "PASS" } else { "FAIL" };
        out.push_str(&format!("{status}  {:width$}  {}\n", o.name, o.detail));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reconstruction_passes_and_detects_faults() {
        assert!(sp_reconstruction(5, 6, 3, false).passed);
        assert!(!sp_reconstruction(5, 6, 3, true).passed);
    }

    #[test]
    fn two_node_update_is_exact() {
        assert!(two_node_linear_update().is_ok());
    }

    #[test]
    fn property_suites_pass_on_a_few_cases() {
        assert!(spawn_identity(20, 0).passed);
        assert!(extrinsic_exclusion(20, 0).passed);
        assert!(order_invariance(20, 0).passed);
        assert!(psd_preservation(20, 0).passed);
    }

    #[test]
    fn table_lists_every_check() {
        let t = render_table(&[
            CheckOutcome::new("a", true, "ok"),
            CheckOutcome::new("bb", false, "bad"),
        ]);
        assert_eq!(t, "PASS  a   ok\nFAIL  bb  bad\n");
    }
}
