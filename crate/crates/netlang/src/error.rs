use thiserror::Error;

/// Crate-wide error type. Display forms start with the stable
/// kebab-case code that the CLI prints on stderr.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid-grammar: {0}")]
    InvalidGrammar(String),
    #[error("empty-corpus")]
    EmptyCorpus,
    #[error("underivable-corpus: {0}")]
    UnderivableCorpus(String),
    #[error("insufficient-data: {0}")]
    InsufficientData(String),
    #[error("constant-intent: feature {0} has a single value")]
    ConstantIntent(String),
    #[error("unannotated-corpus: {0}")]
    UnannotatedCorpus(String),
    #[error("untagged-dataset: {0}")]
    UntaggedDataset(String),
    #[error("dangling-link: {0}")]
    DanglingLink(String),
    #[error("unparseable-trace: {0}")]
    UnparseableTrace(String),
    #[error("combinatorial-cap-exceeded: {0} selection combinations exceed cap {1}")]
    CombinatorialCapExceeded(u64, u64),
    #[error("missing-stochastic-policy")]
    MissingStochasticPolicy,
    #[error("inconsistent-pg: {0}")]
    InconsistentParseGraph(String),
    #[error("invalid-config: {0}")]
    InvalidConfig(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("format: {0}")]
    Format(String),
}

pub type Result<T> = std::result::Result<T, Error>;
