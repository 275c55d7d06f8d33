//! Error type shared across the crate.

use std::path::PathBuf;

/// Convenience alias used throughout the crate.
pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A cell could not be normalized into a serializable value.
    #[error("cannot normalize column `{column}`: {reason}")]
    Normalization { column: String, reason: String },

    /// Empty coalitions are never serialized or evaluated.
    #[error("empty coalition: at least one feature must be present")]
    EmptyCoalition,

    #[error("dataset {path}: row {row}: {reason}")]
    Dataset {
        path: PathBuf,
        row: usize,
        reason: String,
    },

    #[error("schema: {0}")]
    Schema(String),

    #[error("template: {0}")]
    Template(String),

    #[error("verbalizer: {0}")]
    Verbalizer(String),

    /// A caller broke an operation's precondition.
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("configuration: {0}")]
    Config(String),

    #[error("backend unavailable after {attempts} attempt(s): {reason}")]
    BackendUnavailable { attempts: u32, reason: String },

    #[error("replay cache miss for prompt digest {digest}")]
    CacheMiss { digest: String },

    #[error("backend protocol error: {0}")]
    Protocol(String),

    #[error("stale cache {path}: fingerprint {found} does not match current configuration {expected}")]
    StaleCache {
        path: PathBuf,
        expected: String,
        found: String,
    },

    #[error("index set mismatch: requested {requested:?}, recorded selection is {recorded:?}")]
    IndexSetMismatch {
        requested: Vec<usize>,
        recorded: Vec<usize>,
    },

    #[error("cannot parse {path} at byte offset {offset}: {reason}")]
    CacheParse {
        path: PathBuf,
        offset: usize,
        reason: String,
    },

    #[error("ranking: {0}")]
    Ranking(String),

    #[error("instance {index}: {source}")]
    Instance {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn for_instance(index: usize, source: Error) -> Self {
        Error::Instance {
            index,
            source: Box::new(source),
        }
    }
}
