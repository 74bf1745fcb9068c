use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    // the cause is rendered in the message rather than chained, so callers
    // printing the full chain see it once
    #[error("io error on {path}: {cause}")]
    Io {
        path: PathBuf,
        cause: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Schema {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("invalid record `{id}`: field `{field}` {message}")]
    Record {
        id: String,
        field: &'static str,
        message: String,
    },

    #[error("unknown image id `{0}`")]
    UnknownId(String),

    #[error("embedding table: {0}")]
    Embedding(String),

    #[error("sampler: {0}")]
    Sampler(String),

    #[error("prompt: {0}")]
    Prompt(String),

    #[error("planner: {0}")]
    Planner(String),

    #[error("aggregation: {0}")]
    Aggregation(String),

    #[error("metrics: {0}")]
    Metrics(String),

    #[error("backend authentication failed: {0}")]
    Auth(String),

    #[error("backend: {0}")]
    Backend(String),

    #[error("config: {0}")]
    Config(String),

    #[error("pipeline stage `{stage}` failed: {cause}")]
    Stage { stage: String, cause: Box<Error> },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, cause: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            cause,
        }
    }
}
