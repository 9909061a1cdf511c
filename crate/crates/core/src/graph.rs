//! Pairwise factor graphs: nodes with a shared substate, measured edges,
//! observation symmetrization and the message store used by the
//! message-passing schedules.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian::{block_diag, extract_marginal, max_asymmetry, GaussianBelief, IndexRange};

/// Zero-based node index.
pub type NodeId = usize;

/// Number of random input pairs used to spot-check pair-function symmetry.
pub const SYMMETRY_SAMPLES: usize = 10;
const SYMMETRY_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct NodeSpec {
    /// Full state dimension.
    pub dim: usize,
    /// Substate entering the pair function and broadcast to neighbors.
    pub shared: IndexRange,
    pub prior: GaussianBelief,
    /// Anchors are never updated; their belief stays equal to the prior.
    pub is_anchor: bool,
}

impl NodeSpec {
    pub fn new(prior: GaussianBelief, shared: IndexRange) -> Self {
        Self {
            dim: prior.dim(),
            shared,
            prior,
            is_anchor: false,
        }
    }

    /// Static node with a perfectly known shared substate.
    pub fn anchor(location: DVector<f64>) -> Self {
        let d = location.len();
        Self {
            dim: d,
            shared: IndexRange::new(0, d),
            prior: GaussianBelief::point(location),
            is_anchor: true,
        }
    }

    pub fn shared_prior(&self) -> Result<GaussianBelief> {
        extract_marginal(&self.prior, self.shared)
    }

    fn validate(&self, id: NodeId) -> Result<()> {
        let bad = |reason: String| Error::InvalidNode { node: id, reason };
        if self.dim == 0 || self.prior.dim() != self.dim {
            return Err(bad(format!(
                "prior dimension {} does not match state dimension {}",
                self.prior.dim(),
                self.dim
            )));
        }
        self.shared
            .check(self.dim)
            .map_err(|e| bad(e.to_string()))?;
        if self.is_anchor {
            let s = self.shared;
            let block = self
                .prior
                .cov
                .view((s.offset, s.offset), (s.length, s.length));
            if block.iter().any(|v| *v != 0.0) {
                return Err(bad(
                    "anchor must have zero shared-substate covariance".into()
                ));
            }
        }
        Ok(())
    }
}

/// Pairwise measurement `z = G(λ_a, λ_b) + n` between nodes `a` and `b`.
///
/// The observation is always interpreted in the stored orientation
/// `(a, b)`, whichever endpoint performs the update.
#[derive(Debug, Clone, PartialEq)]
pub struct Edge {
    pub nodes: (NodeId, NodeId),
    pub noise_cov: DMatrix<f64>,
    pub obs: DVector<f64>,
}

impl Edge {
    pub fn new(a: NodeId, b: NodeId, noise_cov: DMatrix<f64>, obs: DVector<f64>) -> Self {
        Self {
            nodes: (a, b),
            noise_cov,
            obs,
        }
    }

    /// Scalar measurement with variance `variance`.
    pub fn scalar(a: NodeId, b: NodeId, variance: f64, obs: f64) -> Self {
        Self::new(
            a,
            b,
            DMatrix::from_element(1, 1, variance),
            DVector::from_element(1, obs),
        )
    }

    fn key(&self) -> (NodeId, NodeId) {
        let (a, b) = self.nodes;
        (a.min(b), a.max(b))
    }

    pub fn other(&self, node: NodeId) -> NodeId {
        if self.nodes.0 == node {
            self.nodes.1
        } else {
            self.nodes.0
        }
    }
}

type PairEval = dyn Fn(usize, &[f64], &[f64]) -> DVector<f64> + Send + Sync;

/// The pairwise measurement function `G(·,·)`.
///
/// The closure receives the edge index, so one `PairFn` can serve models
/// whose edges carry different linear maps.
#[derive(Clone)]
pub struct PairFn {
    out_dim: usize,
    symmetric: bool,
    eval: Arc<PairEval>,
}

impl fmt::Debug for PairFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PairFn")
            .field("out_dim", &self.out_dim)
            .field("symmetric", &self.symmetric)
            .finish_non_exhaustive()
    }
}

impl PairFn {
    /// Symmetric function `G(a, b) = G(b, a)`; spot-checked by [`build_graph`].
    pub fn symmetric<F>(out_dim: usize, f: F) -> Self
    where
        F: Fn(&[f64], &[f64]) -> DVector<f64> + Send + Sync + 'static,
    {
        Self {
            out_dim,
            symmetric: true,
            eval: Arc::new(move |_, a, b| f(a, b)),
        }
    }

    /// Function that may depend on argument order.
    pub fn oriented<F>(out_dim: usize, f: F) -> Self
    where
        F: Fn(&[f64], &[f64]) -> DVector<f64> + Send + Sync + 'static,
    {
        Self {
            out_dim,
            symmetric: false,
            eval: Arc::new(move |_, a, b| f(a, b)),
        }
    }

    /// Function that also depends on the edge index.
    pub fn per_edge<F>(out_dim: usize, f: F) -> Self
    where
        F: Fn(usize, &[f64], &[f64]) -> DVector<f64> + Send + Sync + 'static,
    {
        Self {
            out_dim,
            symmetric: false,
            eval: Arc::new(f),
        }
    }

    /// Euclidean distance between two locations.
    pub fn range() -> Self {
        Self::symmetric(1, |a, b| {
            let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
            DVector::from_element(1, d2.sqrt())
        })
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn is_symmetric(&self) -> bool {
        self.symmetric
    }

    pub fn evaluate(&self, edge: usize, first: &[f64], second: &[f64]) -> DVector<f64> {
        (self.eval)(edge, first, second)
    }

    /// Largest `|G(a,b) − G(b,a)|` over random inputs of dimension `dim`.
    pub fn symmetry_deviation(&self, edge: usize, dim: usize, samples: usize, seed: u64) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut worst = 0.0_f64;
        for _ in 0..samples {
            let a: Vec<f64> = (0..dim).map(|_| rng.random_range(-10.0..10.0)).collect();
            let b: Vec<f64> = (0..dim).map(|_| rng.random_range(-10.0..10.0)).collect();
            let ab = self.evaluate(edge, &a, &b);
            let ba = self.evaluate(edge, &b, &a);
            let dev = if ab.len() != ba.len() {
                f64::INFINITY
            } else {
                (ab - ba).amax()
            };
            worst = worst.max(dev);
        }
        worst
    }
}

/// Message-passing variant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Extrinsic messages, excluding what the receiver sent.
    StandardBp,
    /// Messages equal the sender's current belief.
    #[default]
    Spawn,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schedule {
    pub variant: Variant,
    pub iterations: usize,
}

impl Schedule {
    pub fn new(variant: Variant, iterations: usize) -> Result<Self> {
        if iterations == 0 {
            return Err(Error::InvalidConfig(
                "at least one iteration is required".into(),
            ));
        }
        Ok(Self {
            variant,
            iterations,
        })
    }
}

/// Immutable pairwise model: nodes, edges and the measurement function.
#[derive(Debug, Clone)]
pub struct Graph {
    nodes: Vec<NodeSpec>,
    edges: Vec<Edge>,
    pair_fn: PairFn,
    /// Per node: `(neighbor, edge index)` sorted by neighbor id.
    neighbors: Vec<Vec<(NodeId, usize)>>,
}

impl Graph {
    pub fn nodes(&self) -> &[NodeSpec] {
        &self.nodes
    }

    pub fn node(&self, id: NodeId) -> &NodeSpec {
        &self.nodes[id]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn edge(&self, index: usize) -> &Edge {
        &self.edges[index]
    }

    pub fn pair_fn(&self) -> &PairFn {
        &self.pair_fn
    }

    /// `(neighbor, edge index)` pairs of `id`, ascending by neighbor.
    pub fn neighbors(&self, id: NodeId) -> &[(NodeId, usize)] {
        &self.neighbors[id]
    }

    pub fn neighbor_ids(&self, id: NodeId) -> Vec<NodeId> {
        self.neighbors[id].iter().map(|(l, _)| *l).collect()
    }

    pub fn edge_between(&self, a: NodeId, b: NodeId) -> Option<usize> {
        self.neighbors
            .get(a)?
            .iter()
            .find(|(l, _)| *l == b)
            .map(|(_, e)| *e)
    }

    /// Directed pairs `(from, to)` for every edge, in both directions.
    pub fn directed_pairs(&self) -> impl Iterator<Item = (NodeId, NodeId)> + '_ {
        self.neighbors
            .iter()
            .enumerate()
            .flat_map(|(to, ns)| ns.iter().map(move |(from, _)| (*from, to)))
    }

    /// Longest shortest path between connected nodes.
    pub fn diameter(&self) -> usize {
        let mut best = 0;
        for start in 0..self.len() {
            let mut dist = vec![usize::MAX; self.len()];
            dist[start] = 0;
            let mut queue = std::collections::VecDeque::from([start]);
            while let Some(u) = queue.pop_front() {
                for (v, _) in &self.neighbors[u] {
                    if dist[*v] == usize::MAX {
                        dist[*v] = dist[u] + 1;
                        queue.push_back(*v);
                    }
                }
            }
            best = best.max(
                dist.into_iter()
                    .filter(|d| *d != usize::MAX)
                    .max()
                    .unwrap_or(0),
            );
        }
        best
    }
}

/// Validates nodes and edges and computes the neighbor sets.
pub fn build_graph(nodes: Vec<NodeSpec>, edges: Vec<Edge>, pair_fn: PairFn) -> Result<Graph> {
    for (id, n) in nodes.iter().enumerate() {
        n.validate(id)?;
    }
    let mut seen = BTreeSet::new();
    let mut neighbors = vec![Vec::new(); nodes.len()];
    for (idx, e) in edges.iter().enumerate() {
        let (a, b) = e.nodes;
        if a == b {
            return Err(Error::SelfLoop(a));
        }
        for n in [a, b] {
            if n >= nodes.len() {
                return Err(Error::UnknownNode(n));
            }
        }
        if !seen.insert(e.key()) {
            return Err(Error::DuplicateEdge(a, b));
        }
        let m = pair_fn.out_dim();
        if e.obs.len() != m {
            return Err(Error::DimensionMismatch {
                context: "edge observation vs pair function output",
                expected: m,
                got: e.obs.len(),
            });
        }
        if e.noise_cov.nrows() != m || e.noise_cov.ncols() != m {
            return Err(Error::DimensionMismatch {
                context: "edge noise covariance vs pair function output",
                expected: m,
                got: e.noise_cov.nrows(),
            });
        }
        if max_asymmetry(&e.noise_cov) > SYMMETRY_TOL {
            return Err(Error::InvalidConfig(format!(
                "noise covariance of edge ({a}, {b}) is not symmetric"
            )));
        }
        neighbors[a].push((b, idx));
        neighbors[b].push((a, idx));
    }
    for ns in &mut neighbors {
        ns.sort_unstable();
    }

    if pair_fn.is_symmetric() && !edges.is_empty() {
        let mut worst = 0.0_f64;
        for s in 0..SYMMETRY_SAMPLES {
            let idx = s % edges.len();
            let (a, b) = edges[idx].nodes;
            let dim = nodes[a].shared.length;
            if nodes[b].shared.length != dim {
                return Err(Error::DimensionMismatch {
                    context: "symmetric pair function needs equal shared dimensions",
                    expected: dim,
                    got: nodes[b].shared.length,
                });
            }
            worst = worst.max(pair_fn.symmetry_deviation(idx, dim, 1, s as u64));
        }
        if worst > SYMMETRY_TOL {
            return Err(Error::AsymmetricPairFn { deviation: worst });
        }
    }

    Ok(Graph {
        nodes,
        edges,
        pair_fn,
        neighbors,
    })
}

/// How two directional measurements of one pair are merged.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SymmetrizeMode {
    /// `(z_kl + z_lk) / 2` with noise covariance `(C_kl + C_lk) / 4`.
    #[default]
    Average,
    /// `(z_kl, z_lk)` with block-diagonal noise covariance.
    Stack,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SymmetrizedObservation {
    pub obs: DVector<f64>,
    pub noise_cov: DMatrix<f64>,
}

/// Merges `z_kl` and `z_lk` so that both endpoints share one observation.
///
/// The two noise terms are assumed independent. For [`SymmetrizeMode::Stack`]
/// the pair function must itself return the stacked `(G(a,b), G(b,a))`.
pub fn symmetrize_observation(
    z_kl: &DVector<f64>,
    noise_kl: &DMatrix<f64>,
    z_lk: &DVector<f64>,
    noise_lk: &DMatrix<f64>,
    mode: SymmetrizeMode,
) -> Result<SymmetrizedObservation> {
    for (z, c) in [(z_kl, noise_kl), (z_lk, noise_lk)] {
        if c.nrows() != z.len() || c.ncols() != z.len() {
            return Err(Error::DimensionMismatch {
                context: "noise covariance vs observation",
                expected: z.len(),
                got: c.nrows(),
            });
        }
    }
    match mode {
        SymmetrizeMode::Average => {
            if z_kl.len() != z_lk.len() {
                return Err(Error::DimensionMismatch {
                    context: "averaged observations must have equal length",
                    expected: z_kl.len(),
                    got: z_lk.len(),
                });
            }
            Ok(SymmetrizedObservation {
                obs: (z_kl + z_lk) * 0.5,
                noise_cov: (noise_kl + noise_lk) * 0.25,
            })
        }
        SymmetrizeMode::Stack => {
            let mut obs = DVector::zeros(z_kl.len() + z_lk.len());
            obs.rows_mut(0, z_kl.len()).copy_from(z_kl);
            obs.rows_mut(z_kl.len(), z_lk.len()).copy_from(z_lk);
            Ok(SymmetrizedObservation {
                obs,
                noise_cov: block_diag(&[noise_kl, noise_lk])?,
            })
        }
    }
}

/// Beliefs and messages at one message-passing iteration.
///
/// Messages are keyed by directed pair `(from, to)` and describe the
/// sender's shared substate only.
#[derive(Debug, Clone, PartialEq)]
pub struct MessageStore {
    pub iteration: usize,
    pub beliefs: Vec<GaussianBelief>,
    pub messages: BTreeMap<(NodeId, NodeId), GaussianBelief>,
    /// Sigma points used by each node's belief update in the last iteration
    /// (0 when the node was not updated).
    pub sigma_points: Vec<usize>,
}

impl MessageStore {
    pub fn message(&self, from: NodeId, to: NodeId) -> Option<&GaussianBelief> {
        self.messages.get(&(from, to))
    }

    pub fn belief(&self, node: NodeId) -> &GaussianBelief {
        &self.beliefs[node]
    }
}

/// Iteration-0 store: beliefs equal priors, messages equal prior marginals
/// on the sender's shared substate.
pub fn init_messages(graph: &Graph) -> MessageStore {
    let beliefs: Vec<GaussianBelief> = graph.nodes().iter().map(|n| n.prior.clone()).collect();
    let messages = graph
        .directed_pairs()
        .map(|(from, to)| {
            let m = graph
                .node(from)
                .shared_prior()
                .expect("shared range validated by build_graph");
            ((from, to), m)
        })
        .collect();
    MessageStore {
        iteration: 0,
        sigma_points: vec![0; beliefs.len()],
        beliefs,
        messages,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{dmatrix, dvector};

    fn scalar_node(mean: f64, var: f64) -> NodeSpec {
        NodeSpec::new(
            GaussianBelief::from_slices(&[mean], &[var]).unwrap(),
            IndexRange::new(0, 1),
        )
    }

    fn mobile(mean: [f64; 4]) -> NodeSpec {
        NodeSpec::new(
            GaussianBelief::new(
                DVector::from_row_slice(&mean),
                DMatrix::from_diagonal(&dvector![1.0, 1.0, 0.01, 0.01]),
            )
            .unwrap(),
            IndexRange::new(0, 2),
        )
    }

    #[test]
    fn single_edge_neighbors() {
        let g = build_graph(
            vec![scalar_node(0.0, 1.0), scalar_node(0.0, 1.0)],
            vec![Edge::scalar(0, 1, 1.0, 0.5)],
            PairFn::oriented(1, |a, b| dvector![a[0] - b[0]]),
        )
        .unwrap();
        assert_eq!(g.neighbor_ids(0), vec![1]);
        assert_eq!(g.neighbor_ids(1), vec![0]);
        assert_eq!(g.edge_between(1, 0), Some(0));
    }

    #[test]
    fn localization_topology() {
        let nodes = vec![
            mobile([0.0, 0.0, 0.2, 1.0]),
            mobile([25.0, 50.0, 0.5, -0.8]),
            mobile([50.0, 0.0, -1.0, 0.4]),
            NodeSpec::anchor(dvector![0.0, 25.0]),
            NodeSpec::anchor(dvector![50.0, 25.0]),
        ];
        let mut edges = Vec::new();
        for a in 0..5 {
            for b in (a + 1)..5 {
                if a < 3 {
                    edges.push(Edge::scalar(a, b, 1.0, 10.0));
                }
            }
        }
        let g = build_graph(nodes, edges, PairFn::range()).unwrap();
        for k in 0..3 {
            assert_eq!(g.neighbors(k).len(), 4);
        }
        assert_eq!(g.neighbor_ids(3), vec![0, 1, 2]);
        assert_eq!(g.directed_pairs().count(), 18);
    }

    #[test]
    fn isolated_nodes() {
        let g = build_graph(
            vec![
                scalar_node(1.0, 1.0),
                scalar_node(2.0, 1.0),
                scalar_node(3.0, 1.0),
            ],
            vec![],
            PairFn::range(),
        )
        .unwrap();
        assert!((0..3).all(|k| g.neighbors(k).is_empty()));
        let store = init_messages(&g);
        assert!(store.messages.is_empty());
        assert_eq!(store.beliefs[2], g.node(2).prior);
    }

    #[test]
    fn construction_errors() {
        let nodes = || vec![scalar_node(0.0, 1.0), scalar_node(0.0, 1.0)];
        let f = || PairFn::range();
        assert_eq!(
            build_graph(nodes(), vec![Edge::scalar(0, 0, 1.0, 0.0)], f()).unwrap_err(),
            Error::SelfLoop(0)
        );
        assert_eq!(
            build_graph(nodes(), vec![Edge::scalar(0, 2, 1.0, 0.0)], f()).unwrap_err(),
            Error::UnknownNode(2)
        );
        assert_eq!(
            build_graph(
                nodes(),
                vec![Edge::scalar(0, 1, 1.0, 0.0), Edge::scalar(1, 0, 1.0, 0.0)],
                f()
            )
            .unwrap_err(),
            Error::DuplicateEdge(1, 0)
        );
        assert!(matches!(
            build_graph(
                nodes(),
                vec![Edge::scalar(0, 1, 1.0, 0.0)],
                PairFn::symmetric(1, |a, b| dvector![a[0] - b[0]])
            ),
            Err(Error::AsymmetricPairFn { .. })
        ));
        let bad_anchor = NodeSpec {
            is_anchor: true,
            ..scalar_node(0.0, 1.0)
        };
        assert!(matches!(
            build_graph(vec![bad_anchor], vec![], f()),
            Err(Error::InvalidNode { .. })
        ));
    }

    #[test]
    fn symmetrize_examples() {
        let one = dmatrix![1.0];
        let avg = symmetrize_observation(
            &dvector![4.0],
            &one,
            &dvector![6.0],
            &one,
            SymmetrizeMode::Average,
        )
        .unwrap();
        assert_eq!(avg.obs, dvector![5.0]);
        assert_eq!(avg.noise_cov, dmatrix![0.5]);

        let z = dvector![1.5, -2.0];
        let c = DMatrix::identity(2, 2);
        let same = symmetrize_observation(&z, &c, &z, &c, SymmetrizeMode::Average).unwrap();
        assert_eq!(same.obs, z);

        let st = symmetrize_observation(
            &dvector![1.0],
            &one,
            &dvector![2.0],
            &dmatrix![3.0],
            SymmetrizeMode::Stack,
        )
        .unwrap();
        assert_eq!(st.obs, dvector![1.0, 2.0]);
        assert_eq!(st.noise_cov, dmatrix![1.0, 0.0; 0.0, 3.0]);

        assert!(matches!(
            symmetrize_observation(&dvector![1.0], &one, &z, &c, SymmetrizeMode::Average),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn initial_messages_are_prior_marginals() {
        let g = build_graph(
            vec![
                mobile([1.0, 2.0, 0.0, 0.0]),
                NodeSpec::anchor(dvector![0.0, 25.0]),
            ],
            vec![Edge::scalar(0, 1, 1.0, 23.0)],
            PairFn::range(),
        )
        .unwrap();
        let store = init_messages(&g);
        let m = store.message(0, 1).unwrap();
        assert_eq!(m.mean, dvector![1.0, 2.0]);
        assert_eq!(m.cov, DMatrix::identity(2, 2));
        let a = store.message(1, 0).unwrap();
        assert_eq!(a.mean, dvector![0.0, 25.0]);
        assert_eq!(a.cov, DMatrix::zeros(2, 2));
        assert_eq!(store.iteration, 0);
    }

    #[test]
    fn diameter_of_chain_and_star() {
        let chain = build_graph(
            (0..4).map(|_| scalar_node(0.0, 1.0)).collect(),
            vec![
                Edge::scalar(0, 1, 1.0, 0.0),
                Edge::scalar(1, 2, 1.0, 0.0),
                Edge::scalar(2, 3, 1.0, 0.0),
            ],
            PairFn::range(),
        )
        .unwrap();
        assert_eq!(chain.diameter(), 3);
        let star = build_graph(
            (0..4).map(|_| scalar_node(0.0, 1.0)).collect(),
            (1..4).map(|l| Edge::scalar(0, l, 1.0, 0.0)).collect(),
            PairFn::range(),
        )
        .unwrap();
        assert_eq!(star.diameter(), 2);
    }

    #[test]
    fn schedule_requires_iterations() {
        assert!(Schedule::new(Variant::Spawn, 0).is_err());
        assert_eq!(Schedule::new(Variant::Spawn, 2).unwrap().iterations, 2);
    }
}
