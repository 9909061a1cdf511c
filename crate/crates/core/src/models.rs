//! Random model generators for property and oracle tests.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::gaussian::{GaussianBelief, IndexRange};
use crate::graph::{build_graph, Edge, Graph, NodeSpec, PairFn};
use crate::oracles::{LinearEdge, LinearPairModel};
use crate::Result;

fn normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

pub fn random_vector<R: Rng + ?Sized>(rng: &mut R, dim: usize, scale: f64) -> DVector<f64> {
    DVector::from_fn(dim, |_, _| scale * normal(rng))
}

pub fn random_matrix<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| normal(rng))
}

/// `A Aᵀ / dim + floor · I` with standard normal `A`.
pub fn random_spd<R: Rng + ?Sized>(rng: &mut R, dim: usize, floor: f64) -> DMatrix<f64> {
    let a = random_matrix(rng, dim, dim);
    let mut c = &a * a.transpose() / dim as f64;
    for i in 0..dim {
        c[(i, i)] += floor;
    }
    (&c + c.transpose()) * 0.5
}

/// Positive semidefinite matrix of the given rank.
pub fn random_psd<R: Rng + ?Sized>(rng: &mut R, dim: usize, rank: usize) -> DMatrix<f64> {
    let a = random_matrix(rng, dim, rank);
    let c = &a * a.transpose();
    (&c + c.transpose()) * 0.5
}

pub fn random_belief<R: Rng + ?Sized>(rng: &mut R, dim: usize) -> GaussianBelief {
    let mean = random_vector(rng, dim, 2.0);
    GaussianBelief::new(mean, random_spd(rng, dim, 0.2)).expect("random SPD belief is valid")
}

/// Random parent links: node `i > 0` attaches to a uniformly chosen earlier node.
pub fn random_tree_edges<R: Rng + ?Sized>(rng: &mut R, nodes: usize) -> Vec<(usize, usize)> {
    (1..nodes).map(|i| (rng.random_range(0..i), i)).collect()
}

/// Linear-Gaussian pairwise model on a random tree, with observations drawn
/// from the model.
#[derive(Debug, Clone)]
pub struct LinearTree {
    pub model: LinearPairModel,
    pub observations: Vec<DVector<f64>>,
}

impl LinearTree {
    pub fn graph(&self) -> Result<Graph> {
        self.model.to_graph(&self.observations)
    }
}

/// Tree with `nodes` nodes, state dimensions in `dims`, and one common
/// measurement dimension in `1..=2`.
pub fn random_linear_tree<R: Rng + ?Sized>(
    rng: &mut R,
    nodes: usize,
    dims: std::ops::RangeInclusive<usize>,
) -> LinearTree {
    let priors: Vec<GaussianBelief> = (0..nodes)
        .map(|_| {
            let d = rng.random_range(dims.clone());
            random_belief(rng, d)
        })
        .collect();
    let truth: Vec<DVector<f64>> = priors
        .iter()
        .map(|p| {
            let root = p.cov.clone().cholesky().expect("SPD prior").l();
            &p.mean + root * random_vector(rng, p.dim(), 1.0)
        })
        .collect();
    let m = rng.random_range(1..=2);
    let mut edges = Vec::new();
    let mut observations = Vec::new();
    for (a, b) in random_tree_edges(rng, nodes) {
        let first = random_matrix(rng, m, priors[a].dim());
        let second = random_matrix(rng, m, priors[b].dim());
        let noise_cov = random_spd(rng, m, 0.5);
        let root = noise_cov.clone().cholesky().expect("SPD noise").l();
        let z = &first * &truth[a] + &second * &truth[b] + root * random_vector(rng, m, 1.0);
        edges.push(LinearEdge {
            nodes: (a, b),
            first,
            second,
            noise_cov,
        });
        observations.push(z);
    }
    LinearTree {
        model: LinearPairModel { priors, edges },
        observations,
    }
}

/// Loopy range network in the plane.
///
/// Mobile nodes carry either a 2-D location or a 4-D location-velocity state
/// with the location shared; anchors carry a known 2-D location. Edges form
/// a random spanning tree plus random chords, never between two anchors.
pub fn random_range_network<R: Rng + ?Sized>(rng: &mut R) -> Graph {
    let mobiles = rng.random_range(2..=5);
    let anchors = rng.random_range(0..=2);
    let n = mobiles + anchors;

    let mut truth = Vec::with_capacity(n);
    let mut nodes = Vec::with_capacity(n);
    for i in 0..n {
        let loc = DVector::from_fn(2, |_, _| rng.random_range(0.0..20.0));
        truth.push(loc.clone());
        if i >= mobiles {
            nodes.push(NodeSpec::anchor(loc));
            continue;
        }
        let dim = if rng.random_bool(0.5) { 2 } else { 4 };
        let mut mean = random_vector(rng, dim, 0.5);
        let mut loc_mean = mean.rows_mut(0, 2);
        loc_mean += &loc;
        let cov = random_spd(rng, dim, 0.3);
        let prior = GaussianBelief::new(mean, cov).expect("random SPD prior is valid");
        nodes.push(NodeSpec::new(prior, IndexRange::new(0, 2)));
    }

    // spanning tree over a shuffled order that starts at a mobile node
    let mut order: Vec<usize> = (1..n).collect();
    for i in (1..order.len()).rev() {
        order.swap(i, rng.random_range(0..=i));
    }
    order.insert(0, 0);
    let mut pairs = Vec::new();
    for (pos, &node) in order.iter().enumerate().skip(1) {
        let candidates: Vec<usize> = order[..pos]
            .iter()
            .copied()
            .filter(|&p| p < mobiles || node < mobiles)
            .collect();
        let parent = candidates[rng.random_range(0..candidates.len())];
        pairs.push((parent.min(node), parent.max(node)));
    }
    for a in 0..mobiles {
        for b in a + 1..n {
            if !pairs.contains(&(a, b)) && rng.random_bool(0.4) {
                pairs.push((a, b));
            }
        }
    }

    let edges = pairs
        .into_iter()
        .map(|(a, b)| {
            let var = rng.random_range(0.5..2.0);
            let d = (&truth[a] - &truth[b]).norm();
            Edge::scalar(a, b, var, d + var.sqrt() * normal(rng))
        })
        .collect();
    build_graph(nodes, edges, PairFn::range()).expect("random range network is valid")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn linear_tree_shape() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for nodes in 3..=5 {
            let t = random_linear_tree(&mut rng, nodes, 1..=4);
            assert_eq!(t.model.priors.len(), nodes);
            assert_eq!(t.model.edges.len(), nodes - 1);
            let g = t.graph().unwrap();
            assert!(g.diameter() < nodes);
        }
    }

    #[test]
    fn range_network_has_no_anchor_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..50 {
            let g = random_range_network(&mut rng);
            for e in g.edges() {
                assert!(!(g.node(e.nodes.0).is_anchor && g.node(e.nodes.1).is_anchor));
            }
        }
    }

    #[test]
    fn spd_is_positive_definite() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for d in 1..8 {
            assert!(random_spd(&mut rng, d, 0.1).cholesky().is_some());
        }
    }
}
