use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("parameter {dim} = {value} outside bounds [{lower}, {upper}]")]
    OutOfBounds {
        dim: usize,
        value: f64,
        lower: f64,
        upper: f64,
    },

    #[error("simulation diverged")]
    Diverged,

    #[error("invalid system spec: {0}")]
    InvalidSpec(String),

    #[error("invalid config at `{path}`: {reason}")]
    InvalidConfig { path: String, reason: String },

    #[error("empty dataset")]
    EmptyDataset,

    #[error("factorization failed: {0}")]
    Factorization(String),

    #[error("grid of {points} points exceeds the sampling limit of {limit}")]
    GridTooLarge { points: usize, limit: usize },

    #[error("invalid belief distribution: {0}")]
    InvalidBelief(String),

    #[error("malformed record file {path}: {reason}")]
    MalformedRecord { path: String, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn config(path: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidConfig {
            path: path.into(),
            reason: reason.into(),
        }
    }

    /// Coarse category used for process exit codes.
    pub fn category(&self) -> &'static str {
        match self {
            Error::InvalidConfig { .. } | Error::InvalidSpec(_) => "config",
            Error::Io(_) | Error::Csv(_) | Error::Json(_) | Error::MalformedRecord { .. } => "io",
            Error::DimensionMismatch { .. }
            | Error::NonFinite(_)
            | Error::OutOfBounds { .. }
            | Error::EmptyDataset
            | Error::InvalidBelief(_) => "input",
            Error::Diverged | Error::Factorization(_) | Error::GridTooLarge { .. } => "numeric",
        }
    }
}
