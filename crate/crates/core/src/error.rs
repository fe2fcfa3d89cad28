use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("degenerate variance: batch norm in train mode needs at least 2 values per channel, got {0}")]
    DegenerateVariance(usize),

    #[error("stale tape: backward already ran on this tape, reset it first")]
    StaleTape,

    #[error("configuration error: {0}")]
    Config(String),

    #[error("bad magic bytes: expected \"MCNW\", found {0:?}")]
    BadMagic([u8; 4]),

    #[error("unsupported format version {found} (supported: {supported})")]
    UnsupportedVersion { found: String, supported: String },

    #[error("truncated file: {0}")]
    Truncated(String),

    #[error("parameter mismatch: {0}")]
    ParamMismatch(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("malformed input: {0}")]
    Malformed(String),

    #[error("evaluation error: {0}")]
    Evaluation(String),

    #[error("non-finite loss at step {step}: term `{term}` = {value}")]
    NonFiniteLoss {
        step: usize,
        term: &'static str,
        value: f64,
    },

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
