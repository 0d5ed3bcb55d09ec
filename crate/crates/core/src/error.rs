use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed model file: {0}")]
    MalformedModel(String),
    #[error(
        "unnormalized distribution for source {source_key:?} context {context:?}: sums to {sum}"
    )]
    UnnormalizedDistribution {
        source_key: String,
        context: Vec<String>,
        sum: f64,
    },
    #[error("context longer than order ({len} > {order}) for source {source_key:?}")]
    ContextTooLong {
        source_key: String,
        len: usize,
        order: usize,
    },
    #[error("unknown token {0:?}")]
    UnknownToken(String),
    #[error("duplicate context entry for source {source_key:?} context {context:?}")]
    DuplicateContext {
        source_key: String,
        context: Vec<String>,
    },
    #[error("unknown source key {0:?}")]
    UnknownSource(String),
    #[error("invalid sequence: {0}")]
    InvalidSequence(String),
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),
    #[error("invalid sampling policy: {0}")]
    InvalidPolicy(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("enumeration budget exceeded: more than {budget} sequences")]
    BudgetExceeded { budget: usize },
    #[error("dimension mismatch: matrix is {matrix}x{matrix}, pool has {pool} distinct entries")]
    DimensionMismatch { matrix: usize, pool: usize },
    #[error("utility matrix cell ({row}, {col}) is not finite: {value}")]
    NonFiniteUtility { row: usize, col: usize, value: f64 },
    #[error("metric {metric} failed on pair ({row}, {col}): {source}")]
    MetricPair {
        metric: String,
        row: usize,
        col: usize,
        #[source]
        source: ScorerError,
    },
    #[error(transparent)]
    Scorer(#[from] ScorerError),
    #[error("validation failed for record {key:?}: {message}")]
    Record { key: String, message: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{context}: {source}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },
}

/// Failures of an external (subprocess) scorer. Each case is distinguishable.
#[derive(Debug, Error)]
pub enum ScorerError {
    #[error("could not start scorer {command:?}: {source}")]
    Spawn {
        command: Vec<String>,
        #[source]
        source: std::io::Error,
    },
    #[error("scorer timed out after {0:?}")]
    Timeout(std::time::Duration),
    #[error("scorer I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed scorer response {line:?}: {reason}")]
    Malformed { line: String, reason: String },
    #[error("scorer response missing id {0}")]
    MissingId(u64),
    #[error("score {score} for id {id} outside declared range [{lo}, {hi}]")]
    OutOfRange {
        id: u64,
        score: f64,
        lo: f64,
        hi: f64,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn json(context: impl Into<String>, source: serde_json::Error) -> Self {
        Error::Json {
            context: context.into(),
            source,
        }
    }

    /// Process exit code: 1 validation, 2 I/O, 3 external scorer.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io { .. } => 2,
            Error::Scorer(_) | Error::MetricPair { .. } => 3,
            _ => 1,
        }
    }
}
