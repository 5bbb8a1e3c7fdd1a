use std::io;
use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] logfuse_core::Error),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{context}: {source}")]
    Json { context: String, source: serde_json::Error },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("invalid header profile `{name}`: {reason}")]
    Profile { name: String, reason: String },
    #[error("unknown header profile `{0}`")]
    UnknownProfile(String),
    #[error("bundle schema version {found} is not supported (expected {expected})")]
    SchemaVersion { found: u32, expected: u32 },
    #[error(transparent)]
    Dag(#[from] crate::orchestrator::DagError),
    #[error("partition {index} failed: {message}")]
    Partition { index: usize, message: String },
    #[error("task `{task}` failed: {message}")]
    TaskFailed { task: String, message: String },
    #[error("not found: {0}")]
    NotFound(String),
    #[error("conflict: {0}")]
    Conflict(String),
    #[error("bad request: {0}")]
    BadRequest(String),
    #[error("retrain already in progress")]
    Busy,
    #[error("no trained model bundle")]
    NoBundle,
    #[error("alert sink: {0}")]
    Sink(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>) -> impl FnOnce(io::Error) -> Error {
        let path = path.into();
        move |source| Error::Io { path, source }
    }

    pub fn json(context: impl Into<String>) -> impl FnOnce(serde_json::Error) -> Error {
        let context = context.into();
        move |source| Error::Json { context, source }
    }
}
