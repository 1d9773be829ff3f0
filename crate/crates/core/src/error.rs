use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("missing value: {0}")]
    MissingValue(String),

    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("graph is disconnected ({components} components)")]
    Disconnected { components: usize },

    #[error("rank deficient: {0}")]
    RankDeficient(String),

    #[error("degenerate column {column}: {reason}")]
    DegenerateColumn { column: usize, reason: String },

    #[error("estimator degeneracy: {0}")]
    Degenerate(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Parse(e.to_string())
    }
}
