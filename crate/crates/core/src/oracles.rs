//! Reference computations that do not share code paths with the engine:
//! exact joint inference for linear-Gaussian pairwise models and a
//! self-normalized importance sampler for nonlinear ones.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::gaussian::{GaussianBelief, IndexRange};
use crate::graph::{build_graph, Edge, Graph, NodeId, NodeSpec, PairFn};

/// Minimum sample count accepted by [`mc_posterior_mean`].
pub const MIN_MC_SAMPLES: usize = 10_000;
/// Effective sample sizes below this are reported as degenerate.
pub const MIN_EFFECTIVE_SAMPLES: f64 = 10.0;
const MC_SHARDS: usize = 16;

/// `z = A_first x_first + A_second x_second + n` on full node states.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearEdge {
    pub nodes: (NodeId, NodeId),
    pub first: DMatrix<f64>,
    pub second: DMatrix<f64>,
    pub noise_cov: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearPairModel {
    pub priors: Vec<GaussianBelief>,
    pub edges: Vec<LinearEdge>,
}

impl LinearPairModel {
    fn offsets(&self) -> Vec<usize> {
        let mut at = 0;
        self.priors
            .iter()
            .map(|p| {
                let o = at;
                at += p.dim();
                o
            })
            .collect()
    }

    fn check(&self, observations: &[DVector<f64>]) -> Result<()> {
        if observations.len() != self.edges.len() {
            return Err(Error::DimensionMismatch {
                context: "one observation per edge",
                expected: self.edges.len(),
                got: observations.len(),
            });
        }
        for (e, z) in self.edges.iter().zip(observations) {
            let (a, b) = e.nodes;
            if a >= self.priors.len() || b >= self.priors.len() {
                return Err(Error::UnknownNode(a.max(b)));
            }
            let m = z.len();
            let ok = e.first.shape() == (m, self.priors[a].dim())
                && e.second.shape() == (m, self.priors[b].dim())
                && e.noise_cov.shape() == (m, m);
            if !ok {
                return Err(Error::DimensionMismatch {
                    context: "linear edge matrices vs observation and state dimensions",
                    expected: m,
                    got: e.first.nrows(),
                });
            }
        }
        Ok(())
    }

    /// The same model as an engine graph, with the full state shared.
    ///
    /// All edges must have the same measurement dimension.
    pub fn to_graph(&self, observations: &[DVector<f64>]) -> Result<Graph> {
        self.check(observations)?;
        let out_dim = observations.first().map_or(1, |z| z.len());
        let nodes = self
            .priors
            .iter()
            .map(|p| NodeSpec::new(p.clone(), IndexRange::new(0, p.dim())))
            .collect();
        let edges = self
            .edges
            .iter()
            .zip(observations)
            .map(|(e, z)| Edge::new(e.nodes.0, e.nodes.1, e.noise_cov.clone(), z.clone()))
            .collect();
        let maps: Vec<(DMatrix<f64>, DMatrix<f64>)> = self
            .edges
            .iter()
            .map(|e| (e.first.clone(), e.second.clone()))
            .collect();
        let g = PairFn::per_edge(out_dim, move |idx, a, b| {
            let (fa, fb) = &maps[idx];
            fa * DVector::from_column_slice(a) + fb * DVector::from_column_slice(b)
        });
        build_graph(nodes, edges, g)
    }
}

/// Exact posterior marginals of a linear-Gaussian pairwise model, from one
/// joint solve in information form.
pub fn exact_gaussian_marginals(
    model: &LinearPairModel,
    observations: &[DVector<f64>],
) -> Result<Vec<GaussianBelief>> {
    model.check(observations)?;
    let offsets = model.offsets();
    let n: usize = model.priors.iter().map(|p| p.dim()).sum();
    let mut info = DMatrix::<f64>::zeros(n, n);
    let mut shift = DVector::<f64>::zeros(n);

    for (p, &o) in model.priors.iter().zip(&offsets) {
        let d = p.dim();
        let prec = invert_spd(&p.cov)?;
        let mut block = info.view_mut((o, o), (d, d));
        block += &prec;
        let mut rows = shift.rows_mut(o, d);
        rows += &prec * &p.mean;
    }

    for (e, z) in model.edges.iter().zip(observations) {
        let m = z.len();
        let mut h = DMatrix::<f64>::zeros(m, n);
        let (a, b) = e.nodes;
        let mut ha = h.view_mut((0, offsets[a]), (m, model.priors[a].dim()));
        ha += &e.first;
        let mut hb = h.view_mut((0, offsets[b]), (m, model.priors[b].dim()));
        hb += &e.second;
        let r_inv = invert_spd(&e.noise_cov)?;
        let ht_rinv = h.transpose() * r_inv;
        info += &ht_rinv * &h;
        shift += &ht_rinv * z;
    }

    let chol = info.clone().cholesky().ok_or(Error::SingularSystem)?;
    let mean = chol.solve(&shift);
    let cov = chol.inverse();
    model
        .priors
        .iter()
        .zip(&offsets)
        .map(|(p, &o)| {
            let d = p.dim();
            GaussianBelief::new(
                mean.rows(o, d).into_owned(),
                cov.view((o, o), (d, d)).into_owned(),
            )
        })
        .collect()
}

fn invert_spd(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    m.clone()
        .cholesky()
        .map(|c| c.inverse())
        .ok_or(Error::SingularSystem)
}

/// Importance-sampling estimate of one node's posterior mean.
#[derive(Debug, Clone, PartialEq)]
pub struct McEstimate {
    pub mean: DVector<f64>,
    pub std_err: DVector<f64>,
}

/// Self-normalized importance sampling with the joint prior as proposal.
///
/// Samples every node state from its prior in `graph`, weights by the
/// product of Gaussian edge likelihoods evaluated on the shared substates,
/// and returns the weighted mean and its standard error per node.
pub fn mc_posterior_mean(graph: &Graph, num_samples: usize, seed: u64) -> Result<Vec<McEstimate>> {
    if num_samples < MIN_MC_SAMPLES {
        return Err(Error::InvalidConfig(format!(
            "importance sampling needs at least {MIN_MC_SAMPLES} samples, got {num_samples}"
        )));
    }
    let roots: Vec<DMatrix<f64>> = graph
        .nodes()
        .iter()
        .map(|n| eigen_root(&n.prior.cov))
        .collect();
    let mut offsets = Vec::with_capacity(graph.len());
    let mut total = 0;
    for n in graph.nodes() {
        offsets.push(total);
        total += n.dim;
    }
    let precisions = graph
        .edges()
        .iter()
        .map(|e| invert_spd(&e.noise_cov).map_err(|_| Error::DegenerateWeights { ess: 0.0 }))
        .collect::<Result<Vec<_>>>()?;

    // shards draw independent streams; results are concatenated in shard order
    let per_shard = num_samples.div_ceil(MC_SHARDS);
    let shards: Vec<(Vec<f64>, Vec<f64>)> = (0..MC_SHARDS)
        .into_par_iter()
        .map(|shard| {
            let count = per_shard.min(num_samples.saturating_sub(shard * per_shard));
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(shard as u64 + 1);
            let mut states = Vec::with_capacity(count * total);
            let mut log_w = Vec::with_capacity(count);
            let mut x = vec![0.0; total];
            for _ in 0..count {
                for (k, n) in graph.nodes().iter().enumerate() {
                    let d = n.dim;
                    let eps = DVector::<f64>::from_fn(d, |_, _| StandardNormal.sample(&mut rng));
                    let s = &n.prior.mean + &roots[k] * eps;
                    x[offsets[k]..offsets[k] + d].copy_from_slice(s.as_slice());
                }
                let mut lw = 0.0;
                for (idx, e) in graph.edges().iter().enumerate() {
                    let (a, b) = e.nodes;
                    let sa = graph.node(a).shared;
                    let sb = graph.node(b).shared;
                    let xa = &x[offsets[a] + sa.offset..offsets[a] + sa.end()];
                    let xb = &x[offsets[b] + sb.offset..offsets[b] + sb.end()];
                    let r = &e.obs - graph.pair_fn().evaluate(idx, xa, xb);
                    lw -= 0.5 * (r.transpose() * &precisions[idx] * &r)[(0, 0)];
                }
                states.extend_from_slice(&x);
                log_w.push(lw);
            }
            (states, log_w)
        })
        .collect();

    let max_lw = shards
        .iter()
        .flat_map(|(_, lw)| lw.iter().copied())
        .fold(f64::NEG_INFINITY, f64::max);
    if !max_lw.is_finite() {
        return Err(Error::DegenerateWeights { ess: 0.0 });
    }
    let weights: Vec<f64> = shards
        .iter()
        .flat_map(|(_, lw)| lw.iter().map(|v| (v - max_lw).exp()))
        .collect();
    let wsum: f64 = weights.iter().sum();
    let w2sum: f64 = weights.iter().map(|w| (w / wsum) * (w / wsum)).sum();
    let ess = 1.0 / w2sum;
    if !(ess >= MIN_EFFECTIVE_SAMPLES) {
        return Err(Error::DegenerateWeights { ess });
    }

    let states = shards.iter().flat_map(|(s, _)| s.chunks_exact(total));
    let mut mean = vec![0.0; total];
    for (x, w) in states.clone().zip(&weights) {
        for (m, v) in mean.iter_mut().zip(x) {
            *m += w / wsum * v;
        }
    }
    let mut var = vec![0.0; total];
    for (x, w) in states.zip(&weights) {
        let wn = w / wsum;
        for ((acc, v), m) in var.iter_mut().zip(x).zip(&mean) {
            *acc += wn * wn * (v - m) * (v - m);
        }
    }

    Ok(graph
        .nodes()
        .iter()
        .zip(&offsets)
        .map(|(n, &o)| McEstimate {
            mean: DVector::from_column_slice(&mean[o..o + n.dim]),
            std_err: DVector::from_iterator(n.dim, var[o..o + n.dim].iter().map(|v| v.sqrt())),
        })
        .collect())
}

/// Symmetric square root through the eigendecomposition, clipping tiny
/// negative eigenvalues.
fn eigen_root(c: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(c.clone());
    let sqrt = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&sqrt)
}

/// The two-node range problem: priors `N((0,0), I)` and `N((5,0), I)`,
/// one range measurement `z = 5` with unit noise variance.
pub fn range_toy() -> Graph {
    let a = GaussianBelief::new(DVector::from_vec(vec![0.0, 0.0]), DMatrix::identity(2, 2))
        .expect("valid prior");
    let b = GaussianBelief::new(DVector::from_vec(vec![5.0, 0.0]), DMatrix::identity(2, 2))
        .expect("valid prior");
    build_graph(
        vec![
            NodeSpec::new(a, IndexRange::new(0, 2)),
            NodeSpec::new(b, IndexRange::new(0, 2)),
        ],
        vec![Edge::scalar(0, 1, 1.0, 5.0)],
        PairFn::range(),
    )
    .expect("valid toy graph")
}
