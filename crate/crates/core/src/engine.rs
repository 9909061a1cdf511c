//! The sigma point belief propagation recursion.
//!
//! For each node `k` the engine stacks its own prior with the incoming
//! neighbor messages into a composite Gaussian, runs one sigma-point
//! measurement update against all measurements touching `k`, and reads the
//! belief of `k` off the leading block of the composite posterior.
//!
//! The own entry of the composite is the full state of `k`; neighbor entries
//! are the neighbors' shared substates, which is all a message carries.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian::{block_diag, extract_marginal, GaussianBelief, IndexRange};
use crate::graph::{Graph, MessageStore, NodeId, PairFn, Variant};
use crate::sigma_points::{generate, unscented_transform, update_from_moments, UTParams};

/// How unscented-transform parameters are chosen for each composite update.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "rule")]
pub enum ParamsRule {
    /// [`UTParams::default_for_dim`] of the composite dimension.
    #[default]
    Adaptive,
    Fixed(UTParams),
}

impl ParamsRule {
    pub fn for_dim(&self, dim: usize) -> UTParams {
        match self {
            ParamsRule::Adaptive => UTParams::default_for_dim(dim),
            ParamsRule::Fixed(p) => *p,
        }
    }
}

/// Position of every block inside a composite vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CompositeLayout {
    /// The updating node first, then its neighbors.
    pub order: Vec<NodeId>,
    pub ranges: Vec<IndexRange>,
    pub total_dim: usize,
}

impl CompositeLayout {
    pub fn own_range(&self) -> IndexRange {
        self.ranges[0]
    }

    pub fn range_of(&self, node: NodeId) -> Option<IndexRange> {
        self.order
            .iter()
            .position(|n| *n == node)
            .map(|i| self.ranges[i])
    }
}

/// Stacks `own` with the incoming messages into the composite prior.
///
/// Incoming messages are treated as independent, so the covariance is
/// block diagonal.
pub fn compose_prior(
    own_id: NodeId,
    own: &GaussianBelief,
    incoming: &[(NodeId, &GaussianBelief)],
) -> Result<(GaussianBelief, CompositeLayout)> {
    let mut order = Vec::with_capacity(incoming.len() + 1);
    let mut ranges = Vec::with_capacity(incoming.len() + 1);
    let mut at = 0;
    for (id, b) in std::iter::once((own_id, own)).chain(incoming.iter().copied()) {
        if b.cov.nrows() != b.dim() {
            return Err(Error::DimensionMismatch {
                context: "message covariance vs mean",
                expected: b.dim(),
                got: b.cov.nrows(),
            });
        }
        order.push(id);
        ranges.push(IndexRange::new(at, b.dim()));
        at += b.dim();
    }

    let mut mean = DVector::zeros(at);
    for (r, b) in ranges
        .iter()
        .zip(std::iter::once(own).chain(incoming.iter().map(|(_, b)| *b)))
    {
        mean.rows_mut(r.offset, r.length).copy_from(&b.mean);
    }
    let covs: Vec<&DMatrix<f64>> = std::iter::once(&own.cov)
        .chain(incoming.iter().map(|(_, b)| &b.cov))
        .collect();
    let cov = block_diag(&covs)?;

    Ok((
        GaussianBelief { mean, cov },
        CompositeLayout {
            order,
            ranges,
            total_dim: at,
        },
    ))
}

#[derive(Debug, Clone, PartialEq)]
struct ObservationTerm {
    edge: usize,
    neighbor: IndexRange,
    /// Whether the updating node is the first argument of the edge's `G`.
    own_first: bool,
}

/// Stacked measurement model `z̄ = H(x̄) + n̄` for one composite.
#[derive(Debug, Clone)]
pub struct CompositeObservation {
    pair_fn: PairFn,
    own_shared: IndexRange,
    terms: Vec<ObservationTerm>,
    pub obs: DVector<f64>,
    pub noise_cov: DMatrix<f64>,
}

impl CompositeObservation {
    /// Collects the edges between `layout.order[0]` and the other layout
    /// entries, stacked in layout order.
    pub fn from_graph(graph: &Graph, layout: &CompositeLayout) -> Result<Self> {
        let own = layout.order[0];
        let shared = graph.node(own).shared;
        let own_shared = IndexRange::new(layout.own_range().offset + shared.offset, shared.length);
        let m = graph.pair_fn().out_dim();

        let mut terms = Vec::new();
        let mut obs = Vec::new();
        let mut noise = Vec::new();
        for (slot, l) in layout.order.iter().enumerate().skip(1) {
            let edge_idx = graph.edge_between(own, *l).ok_or(Error::UnknownNode(*l))?;
            let edge = graph.edge(edge_idx);
            terms.push(ObservationTerm {
                edge: edge_idx,
                neighbor: layout.ranges[slot],
                own_first: edge.nodes.0 == own,
            });
            obs.extend(edge.obs.iter().copied());
            noise.push(&edge.noise_cov);
        }
        let noise_cov = if noise.is_empty() {
            DMatrix::zeros(0, 0)
        } else {
            block_diag(&noise)?
        };
        debug_assert_eq!(obs.len(), terms.len() * m);
        Ok(Self {
            pair_fn: graph.pair_fn().clone(),
            own_shared,
            terms,
            obs: DVector::from_vec(obs),
            noise_cov,
        })
    }

    pub fn out_dim(&self) -> usize {
        self.obs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    /// `H(x̄)`: every incident pair function evaluated on the composite.
    pub fn evaluate(&self, x: &DVector<f64>) -> DVector<f64> {
        let own = x.rows(self.own_shared.offset, self.own_shared.length);
        let mut out = Vec::with_capacity(self.obs.len());
        for t in &self.terms {
            let nb = x.rows(t.neighbor.offset, t.neighbor.length);
            let y = if t.own_first {
                self.pair_fn.evaluate(t.edge, own.as_slice(), nb.as_slice())
            } else {
                self.pair_fn.evaluate(t.edge, nb.as_slice(), own.as_slice())
            };
            out.extend(y.iter().copied());
        }
        DVector::from_vec(out)
    }
}

/// Result of one composite update.
#[derive(Debug, Clone, PartialEq)]
pub struct CompositeUpdate {
    /// Posterior over the whole composite vector.
    pub composite: GaussianBelief,
    /// Number of sigma points generated (0 when there was no measurement).
    pub sigma_points: usize,
}

/// Sigma-point update of the composite prior against the composite
/// observation.
pub fn update_composite(
    prior_composite: &GaussianBelief,
    layout: &CompositeLayout,
    cobs: &CompositeObservation,
    params: &UTParams,
) -> Result<CompositeUpdate> {
    if prior_composite.dim() != layout.total_dim {
        return Err(Error::DimensionMismatch {
            context: "composite prior vs layout",
            expected: layout.total_dim,
            got: prior_composite.dim(),
        });
    }
    if cobs.is_empty() {
        return Ok(CompositeUpdate {
            composite: prior_composite.clone(),
            sigma_points: 0,
        });
    }
    let set = generate(&prior_composite.mean, &prior_composite.cov, params)?;
    let moments = unscented_transform(&set, |x| cobs.evaluate(x))?;
    let composite = update_from_moments(prior_composite, &moments, &cobs.noise_cov, &cobs.obs)?;
    Ok(CompositeUpdate {
        composite,
        sigma_points: set.len(),
    })
}

/// Marginal belief of the updating node after one composite update.
pub fn update_belief(
    prior_composite: &GaussianBelief,
    layout: &CompositeLayout,
    cobs: &CompositeObservation,
    params: &UTParams,
) -> Result<GaussianBelief> {
    let up = update_composite(prior_composite, layout, cobs, params)?;
    extract_marginal(&up.composite, layout.own_range())
}

struct NodeUpdate {
    belief: GaussianBelief,
    sigma_points: usize,
}

fn node_update(
    graph: &Graph,
    node: NodeId,
    incoming: &[(NodeId, &GaussianBelief)],
    rule: &ParamsRule,
) -> Result<NodeUpdate> {
    let (prior, layout) = compose_prior(node, &graph.node(node).prior, incoming)?;
    let cobs = CompositeObservation::from_graph(graph, &layout)?;
    let params = rule.for_dim(layout.total_dim);
    let up = update_composite(&prior, &layout, &cobs, &params)?;
    Ok(NodeUpdate {
        belief: extract_marginal(&up.composite, layout.own_range())?,
        sigma_points: up.sigma_points,
    })
}

fn missing_message(from: NodeId, to: NodeId) -> Error {
    Error::InvalidConfig(format!("message store has no message {from} -> {to}"))
}

/// Extrinsic message from `from` to `to`: the update of `from` using every
/// incident measurement and incoming message except those involving `to`,
/// marginalized to the shared substate of `from`.
pub fn extrinsic_message(
    graph: &Graph,
    store: &MessageStore,
    from: NodeId,
    to: NodeId,
    rule: &ParamsRule,
) -> Result<GaussianBelief> {
    if graph.edge_between(from, to).is_none() {
        return Err(Error::InvalidConfig(format!(
            "no edge between {from} and {to}"
        )));
    }
    let spec = graph.node(from);
    if spec.is_anchor {
        return spec.shared_prior();
    }
    let incoming = graph
        .neighbors(from)
        .iter()
        .filter(|(l, _)| *l != to)
        .map(|(l, _)| {
            store
                .message(*l, from)
                .map(|m| (*l, m))
                .ok_or_else(|| missing_message(*l, from))
        })
        .collect::<Result<Vec<_>>>()?;
    let up = node_update(graph, from, &incoming, rule)?;
    extract_marginal(&up.belief, spec.shared)
}

/// One synchronous message-passing iteration.
///
/// Every quantity of iteration `p` is computed from the iteration `p − 1`
/// store only. Under SPAWN the outgoing message of a node is the shared
/// marginal of its new belief; under standard BP the extrinsic messages are
/// computed as well.
pub fn run_iteration(
    graph: &Graph,
    store: &MessageStore,
    variant: Variant,
    rule: &ParamsRule,
) -> Result<MessageStore> {
    let iteration = store.iteration + 1;
    let wrap = |node: NodeId| {
        move |e: Error| Error::NodeUpdate {
            node,
            iteration,
            source: Box::new(e),
        }
    };

    let mut beliefs = Vec::with_capacity(graph.len());
    let mut sigma_points = Vec::with_capacity(graph.len());
    for k in 0..graph.len() {
        let spec = graph.node(k);
        if spec.is_anchor {
            beliefs.push(spec.prior.clone());
            sigma_points.push(0);
            continue;
        }
        let incoming = graph
            .neighbors(k)
            .iter()
            .map(|(l, _)| {
                store
                    .message(*l, k)
                    .map(|m| (*l, m))
                    .ok_or_else(|| missing_message(*l, k))
            })
            .collect::<Result<Vec<_>>>()
            .map_err(wrap(k))?;
        let up = node_update(graph, k, &incoming, rule).map_err(wrap(k))?;
        beliefs.push(up.belief);
        sigma_points.push(up.sigma_points);
    }

    let messages = match variant {
        Variant::Spawn => graph
            .directed_pairs()
            .map(|(from, to)| {
                extract_marginal(&beliefs[from], graph.node(from).shared)
                    .map(|m| ((from, to), m))
                    .map_err(wrap(from))
            })
            .collect::<Result<_>>()?,
        Variant::StandardBp => graph
            .directed_pairs()
            .map(|(from, to)| {
                extrinsic_message(graph, store, from, to, rule)
                    .map(|m| ((from, to), m))
                    .map_err(wrap(from))
            })
            .collect::<Result<_>>()?,
    };

    Ok(MessageStore {
        iteration,
        beliefs,
        messages,
        sigma_points,
    })
}

/// Runs `iterations` iterations starting from `store`.
pub fn run_iterations(
    graph: &Graph,
    mut store: MessageStore,
    variant: Variant,
    iterations: usize,
    rule: &ParamsRule,
) -> Result<MessageStore> {
    for _ in 0..iterations {
        store = run_iteration(graph, &store, variant, rule)?;
    }
    Ok(store)
}
