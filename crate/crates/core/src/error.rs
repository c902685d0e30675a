use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    Dimension {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("price {price} outside the basis domain ({domain})")]
    Domain { price: f64, domain: &'static str },

    #[error("matrix is not symmetric (asymmetry {asymmetry:e})")]
    NotSymmetric { asymmetry: f64 },

    #[error("matrix is not positive definite")]
    NotPositiveDefinite,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("initial safe set is empty; tightest constraint is row {row} ({name}) with slack {slack:.6}")]
    EmptyInitialSafeSet { row: usize, name: String, slack: f64 },

    #[error("no grid candidate is feasible under the true parameters")]
    NoFeasibleCandidate,

    #[error("root solver did not converge after {iterations} iterations (residual {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("network {0}")]
    Network(String),

    #[error("scenario field `{path}`: {message}")]
    Schema { path: String, message: String },

    #[error("scenario parse error: {0}")]
    Parse(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
