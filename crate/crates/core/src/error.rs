use thiserror::Error;

/// Errors produced anywhere in the optimizer pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("matrix is not positive definite (pivot {pivot} = {value:e})")]
    NotPositiveDefinite { pivot: usize, value: f64 },

    #[error("power iteration did not converge after {0} iterations")]
    NoConvergence(usize),

    #[error("invalid instance: {0}")]
    InvalidInstance(String),

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("non-finite value produced by {op} (node {node})")]
    NonFinite { op: &'static str, node: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("malformed {what}: {detail}")]
    Format { what: &'static str, detail: String },

    #[error("training batch {batch} of epoch {epoch} failed: {source}")]
    BatchFailed {
        epoch: usize,
        batch: usize,
        source: Box<Error>,
        /// The offending batch, for reproduction.
        instances: Vec<crate::channel::BipartiteChannel>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for failures caused by numerical breakdown rather than bad input.
    pub fn is_numeric(&self) -> bool {
        match self {
            Error::NotPositiveDefinite { .. } | Error::NoConvergence(_) | Error::NonFinite { .. } => true,
            Error::BatchFailed { source, .. } => source.is_numeric(),
            _ => false,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
