use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum CoreError {
    #[error("degenerate vector")]
    DegenerateVector,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("transport undefined")]
    TransportUndefined,
    #[error("coordinate singularity")]
    CoordinateSingularity,
    #[error("degenerate projection")]
    DegenerateProjection,
    #[error("non-finite input")]
    NonFiniteInput,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("cyclic input")]
    CyclicInput,
    #[error("unknown node: {0}")]
    UnknownNode(String),
    #[error("no common ancestor")]
    NoCommonAncestor,
    #[error("empty batch")]
    EmptyBatch,
    #[error("empty candidate set")]
    EmptyCandidateSet,
    #[error("invalid split: {0}")]
    InvalidSplit(String),
    #[error("diverged")]
    Diverged,
    #[error("missing features for nodes: {0}")]
    MissingFeatures(String),
    #[error("query missing from predictions: {0}")]
    MissingQuery(String),
    #[error("gold parent {gold} absent from ranked list of query {query}")]
    GoldNotRanked { query: String, gold: String },
    #[error("wu&palmer undefined at root")]
    UndefinedAtRoot,
    #[error("bad config: {0}")]
    BadConfig(String),
    #[error("parse error at {path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, CoreError>;
