use thiserror::Error;

/// Errors raised anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {context}: expected {expected:?}, got {actual:?}")]
    ShapeMismatch {
        context: String,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },

    #[error("non-finite value produced by `{op}`")]
    NonFinite { op: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid mirror map spec: {0}")]
    InvalidSpec(String),

    #[error("matrix is singular or not positive definite: {0}")]
    Singular(String),

    #[error("dimension {dim} exceeds the explicit chain-rule cap of {cap}")]
    DimensionAboveCap { dim: usize, cap: usize },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("task index {index} out of range for a population of {population}")]
    TaskIndex { index: usize, population: usize },

    #[error("unavailable: {0}")]
    Unavailable(String),

    #[error("numerical abort at round {round}: {source}")]
    NumericalAbort {
        round: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("checkpoint schema error: {0}")]
    Schema(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn shape(context: impl Into<String>, expected: &[usize], actual: &[usize]) -> Self {
        Error::ShapeMismatch {
            context: context.into(),
            expected: expected.to_vec(),
            actual: actual.to_vec(),
        }
    }

    /// True for failures caused by non-finite arithmetic, wherever they surfaced.
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::NonFinite { .. } | Error::NumericalAbort { .. } => true,
            _ => false,
        }
    }
}
