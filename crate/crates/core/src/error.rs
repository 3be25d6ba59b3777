use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: malformed record: {message}")]
    Malformed {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("duplicate id `{0}`")]
    DuplicateId(String),

    #[error("utterance `{id}` has negative duration {duration}")]
    NegativeDuration { id: String, duration: f64 },

    #[error("bad magic: expected EMB1, found {0:?}")]
    BadMagic([u8; 4]),

    #[error("truncated embedding file: {0}")]
    Truncated(String),

    #[error("non-finite value in row `{0}`")]
    NonFinite(String),

    #[error("invalid embedding dimension {0}")]
    InvalidDim(usize),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimMismatch { expected: usize, found: usize },

    #[error("unknown id `{0}`")]
    UnknownId(String),

    #[error("missing {kind} for `{id}`")]
    Missing { kind: &'static str, id: String },

    #[error("invalid perturbation descriptor: {0}")]
    InvalidPerturbation(String),

    #[error("utterance `{0}` has no baseline hypothesis")]
    MissingBaseline(String),

    #[error("utterance `{id}` has {count} hypotheses (at most {max} allowed)")]
    TooManyHypotheses { id: String, count: usize, max: usize },

    #[error("zero-norm vector `{0}`")]
    ZeroNorm(String),

    #[error("budget {budget} exceeds candidate count {available}")]
    BudgetTooLarge { budget: usize, available: usize },

    #[error("unsupported audio: {0}")]
    UnsupportedAudio(String),

    #[error("input too short: {0}")]
    TooShort(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("missing parameter `{0}`")]
    MissingParameter(String),

    #[error("no strictly positive improvements for metric `{0}`")]
    EmptyDistribution(&'static str),

    #[error("thresholds were computed on a different pool")]
    PoolMismatch,

    #[error("coverage mismatch: {0}")]
    Coverage(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("numeric failure: {0}")]
    Numeric(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short machine-readable tag for the error variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::Malformed { .. } => "malformed",
            Error::DuplicateId(_) => "duplicate-id",
            Error::NegativeDuration { .. } => "negative-duration",
            Error::BadMagic(_) => "bad-magic",
            Error::Truncated(_) => "truncated",
            Error::NonFinite(_) => "non-finite",
            Error::InvalidDim(_) => "invalid-dim",
            Error::DimMismatch { .. } => "dim-mismatch",
            Error::UnknownId(_) => "unknown-id",
            Error::Missing { .. } => "missing",
            Error::InvalidPerturbation(_) => "invalid-perturbation",
            Error::MissingBaseline(_) => "missing-baseline",
            Error::TooManyHypotheses { .. } => "too-many-hypotheses",
            Error::ZeroNorm(_) => "zero-norm",
            Error::BudgetTooLarge { .. } => "budget-too-large",
            Error::UnsupportedAudio(_) => "unsupported-audio",
            Error::TooShort(_) => "too-short",
            Error::ShapeMismatch(_) => "shape-mismatch",
            Error::MissingParameter(_) => "missing-parameter",
            Error::EmptyDistribution(_) => "empty-distribution",
            Error::PoolMismatch => "pool-mismatch",
            Error::Coverage(_) => "coverage-mismatch",
            Error::InvalidArgument(_) => "invalid-argument",
            Error::Numeric(_) => "numeric",
        }
    }
}
