use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("model rejected: {0}")]
    ModelRejected(String),

    #[error("non-finite value {value} at node {coords:?}")]
    NonFinite { value: f64, coords: Vec<f64> },

    #[error("grid infeasible: {0}")]
    Infeasible(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("{name} out of range: {detail}")]
    OutOfRange { name: &'static str, detail: String },

    #[error("missing gradient for site {0}")]
    MissingGradient(usize),

    #[error("divergent constant: {0}")]
    Divergent(String),

    #[error("insufficient decay range: {0}")]
    InsufficientDecay(String),

    #[error("chains not converged: {0}")]
    Unconverged(String),

    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}
