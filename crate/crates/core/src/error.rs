use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },

    #[error("sentence {id}: invalid dependency tree: {message}")]
    InvalidTree { id: u64, message: String },

    #[error("duplicate sentence id {0}")]
    DuplicateId(u64),

    #[error("syntax error at position {position}: {message}")]
    Syntax { position: usize, message: String },

    #[error("depth exceeded: derivation length {depth} > max depth {max_depth}")]
    DepthExceeded { depth: usize, max_depth: usize },

    #[error("missing parse for sentence {0}")]
    MissingParse(u64),

    #[error("grammar mismatch: expected {expected}, got {actual}")]
    GrammarMismatch {
        expected: &'static str,
        actual: &'static str,
    },

    #[error("sentence {0} already indexed")]
    AlreadyIndexed(u32),

    #[error("no positives to train on")]
    NoPositives,

    #[error("simulated oracle requires gold labels")]
    MissingGold,

    #[error("empty seed coverage")]
    EmptySeedCoverage,

    #[error("invalid seed: {0}")]
    InvalidSeed(String),

    #[error("feedback for heuristic {0} which was not the last query")]
    UnexpectedFeedback(String),

    #[error("no pending query")]
    NoPendingQuery,

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("unsupported snapshot version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error("replay diverged at event {index}: {message}")]
    ReplayDiverged { index: usize, message: String },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
