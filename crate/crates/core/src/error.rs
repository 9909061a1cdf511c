use thiserror::Error;

/// Errors raised by the inference library and the simulator.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("matrix is not positive semidefinite (pivot {pivot:e} at column {column})")]
    NotPsd { column: usize, pivot: f64 },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("index range [{offset}, {offset}+{length}) out of bounds for dimension {dim}")]
    OutOfBounds {
        offset: usize,
        length: usize,
        dim: usize,
    },

    #[error("dimension mismatch: {context} (expected {expected}, got {got})")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("innovation covariance is numerically singular (condition estimate {condition:e})")]
    SingularInnovation { condition: f64 },

    #[error("invalid unscented transform parameters: {0}")]
    InvalidParams(String),

    #[error("duplicate edge ({0}, {1})")]
    DuplicateEdge(usize, usize),

    #[error("self-loop on node {0}")]
    SelfLoop(usize),

    #[error("edge references unknown node {0}")]
    UnknownNode(usize),

    #[error("pair function is not symmetric: |G(a,b) - G(b,a)| = {deviation:e}")]
    AsymmetricPairFn { deviation: f64 },

    #[error("invalid node specification for node {node}: {reason}")]
    InvalidNode { node: usize, reason: String },

    #[error("joint information matrix is singular")]
    SingularSystem,

    #[error("importance weights degenerate (effective sample size {ess:.2})")]
    DegenerateWeights { ess: f64 },

    #[error("no log records to summarize")]
    EmptyLogs,

    #[error("invalid scenario configuration: {0}")]
    InvalidConfig(String),

    #[error("update of node {node} failed at iteration {iteration}: {source}")]
    NodeUpdate {
        node: usize,
        iteration: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("run {run}, time {time}: {source}")]
    Scenario {
        run: usize,
        time: usize,
        #[source]
        source: Box<Error>,
    },
}

pub type Result<T> = std::result::Result<T, Error>;
