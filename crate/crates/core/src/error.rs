use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("message is empty after preprocessing")]
    EmptyMessage,
    #[error("invalid pattern `{pattern}`: {reason}")]
    InvalidPattern { pattern: String, reason: String },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("importance undefined: {0}")]
    ImportanceUndefined(String),
    #[error("threshold too high: no column importance exceeds {0}")]
    ThresholdTooHigh(f64),
    #[error("schema error: {0}")]
    Schema(String),
    #[error("shape mismatch: expected {expected}, got {actual}")]
    Shape { expected: usize, actual: usize },
    #[error("graph has no nodes")]
    EmptyGraph,
    #[error("training diverged at epoch {epoch} (loss {loss})")]
    Divergence { epoch: usize, loss: f64 },
    #[error("probability {0} outside [0, 1]")]
    ProbabilityRange(f64),
    #[error("all fusion weights are zero")]
    ZeroWeights,
    #[error("empty input: {0}")]
    EmptyInput(&'static str),
    #[error("unlabeled sample in training data")]
    MissingLabel,
    #[error("model bundle has no EWC anchor")]
    MissingAnchor,
}
