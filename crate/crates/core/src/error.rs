use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("insufficient audio: {samples} samples, need at least {needed}")]
    InsufficientAudio { samples: usize, needed: usize },

    #[error("unsupported sample rate {0} Hz (expected 16000 Hz mono)")]
    UnsupportedAudio(String),

    #[error("window underfull: {got} frames, need {needed}")]
    WindowUnderfull { got: usize, needed: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid annotation: {0}")]
    InvalidAnnotation(String),

    #[error("time {t} s precedes session start {start} s")]
    BeforeSessionStart { t: f64, start: f64 },

    #[error("empty dataset")]
    EmptyDataset,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{0}")]
    Validation(String),

    #[error("unsupported format version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error("bad file header: {0}")]
    BadHeader(String),

    #[error("truncated file: {0}")]
    Truncated(String),

    #[error("training diverged: Bellman residual {residual} exceeds {limit}")]
    Diverged { residual: f64, limit: f64 },

    #[error(
        "value iteration did not converge after {iterations} iterations (residual {residual})"
    )]
    NotConverged { iterations: usize, residual: f64 },

    #[error("singular linear system")]
    Singular,

    #[error("probability {p} below floor {floor}")]
    BelowFloor { p: f64, floor: f64 },

    #[error("histogram binning mismatch")]
    BinningMismatch,

    #[error("parse error in {path}: {msg}")]
    Parse { path: PathBuf, msg: String },

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }

    /// True for user-input problems (bad config, bad arguments) as opposed to
    /// runtime or numeric failures.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Config(_)
                | Error::Validation(_)
                | Error::UnsupportedAudio(_)
                | Error::InsufficientAudio { .. }
                | Error::InvalidAnnotation(_)
                | Error::DimensionMismatch { .. }
                | Error::Version { .. }
                | Error::BadHeader(_)
                | Error::Truncated(_)
                | Error::Parse { .. }
        )
    }
}
