use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, BciError>;

#[derive(Debug, Error)]
pub enum BciError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("trial {trial_id}: {message}")]
    InvalidTrial { trial_id: String, message: String },

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("{file}: non-finite sample at row {row}, column {column}")]
    NonFiniteSample {
        file: PathBuf,
        row: usize,
        column: usize,
    },

    #[error("class {class} has {count} trials, need at least {needed}")]
    TooFewTrials {
        class: String,
        count: usize,
        needed: usize,
    },

    #[error("trial {trial_id}: window {bound} bound {index} outside [0, {len}]")]
    WindowOutOfBounds {
        trial_id: String,
        bound: &'static str,
        index: i64,
        len: usize,
    },

    #[error("invalid window: {0}")]
    InvalidWindow(String),

    #[error("invalid frequency band {low_hz}-{high_hz} Hz: {reason}")]
    InvalidBand {
        low_hz: f64,
        high_hz: f64,
        reason: String,
    },

    #[error("frame of {frame} samples longer than epoch of {epoch} samples")]
    FrameTooLong { frame: usize, epoch: usize },

    #[error("zero reference power on channel {channel}")]
    ZeroReferencePower { channel: usize },

    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("degenerate feature line: both endpoints are equal")]
    DegenerateLine,

    #[error("feature spec fingerprint mismatch: model {model}, spec {spec}")]
    FingerprintMismatch { model: String, spec: String },

    #[error("port closed")]
    PortClosed,

    #[error("tick {tick} not after last transmitted tick {last}")]
    NonMonotonicTick { tick: u64, last: u64 },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error in {path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },

    #[error("json error in {context}: {source}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },
}

impl BciError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        BciError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn trial(trial_id: &str, message: impl Into<String>) -> Self {
        BciError::InvalidTrial {
            trial_id: trial_id.to_string(),
            message: message.into(),
        }
    }
}
