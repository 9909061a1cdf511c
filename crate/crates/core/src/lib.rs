//! Sigma point belief propagation (SPBP).
//!
//! Gaussian belief propagation on pairwise factor graphs where every
//! message and belief is a mean and covariance, and every nonlinear
//! measurement update goes through the unscented transformation on a
//! "composite" state made of a node and its neighbors.
//!
//! - [`gaussian`]: beliefs, PSD-tolerant square roots, block composition
//! - [`sigma_points`]: sigma point sets, unscented transform, measurement update
//! - [`graph`]: pairwise models, symmetrization, message stores
//! - [`engine`]: composite updates and the SPAWN / standard BP iterations
//! - [`sim`]: cooperative dynamic self-localization simulator
//! - [`oracles`]: exact linear-Gaussian and importance-sampling references
//! - [`models`]: random models for property tests

pub mod engine;
pub mod error;
pub mod gaussian;
pub mod graph;
pub mod models;
pub mod oracles;
pub mod sigma_points;
pub mod sim;

pub use error::{Error, Result};
pub use gaussian::{GaussianBelief, IndexRange};
pub use graph::{Graph, NodeId, PairFn, Variant};
pub use sigma_points::UTParams;
