use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: String, reason: String },

    #[error("duplicate parameter name `{0}`")]
    DuplicateParameter(String),

    #[error("configuration space has {cardinality} points, above the enumeration cap of {cap}")]
    CapExceeded { cardinality: u128, cap: u128 },

    #[error("requested {requested} samples from a pool of {available}")]
    SampleTooLarge { requested: usize, available: usize },

    #[error("value `{value}` is not in the domain of parameter `{name}`")]
    NotInDomain { name: String, value: String },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("invalid hyperparameters: {0}")]
    InvalidHyperparameters(String),

    #[error("covariance matrix of size {size} is not positive definite even with jitter {max_jitter:e}")]
    Factorization { size: usize, max_jitter: f64 },

    #[error("no training data: {0}")]
    EmptyData(&'static str),

    #[error("every optimizer restart failed: {0}")]
    FitFailed(String),

    #[error("correlation is undefined: {0}")]
    ZeroVariance(&'static str),

    #[error("not enough points for correlation: {0}")]
    TooFewPoints(usize),

    #[error("absolute percentage error is undefined for an actual value of zero (row {row})")]
    ZeroActual { row: usize },

    #[error("{path}:{line}: {reason}")]
    MalformedRow { path: PathBuf, line: u64, reason: String },

    #[error("unknown column `{0}`")]
    UnknownColumn(String),

    #[error("missing column `{0}`")]
    MissingColumn(String),

    #[error("environment label `{0}` not present in the table")]
    MissingLabel(String),

    #[error("invalid split: {0}")]
    InvalidSplit(String),

    #[error("invalid specification: {0}")]
    InvalidSpec(String),

    #[error("unknown scenario family `{0}`")]
    UnknownFamily(String),

    #[error("recipes failed: {0}")]
    RecipeFailures(String),

    #[error("empty candidate set")]
    EmptyCandidates,

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
