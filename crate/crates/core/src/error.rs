use thiserror::Error;

/// Errors raised anywhere in the simulation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate fit: {0}")]
    DegenerateFit(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("duplicate point for device `{device}` at r_in={r_in}")]
    DuplicatePoint { device: String, r_in: f64 },

    #[error("truncated gamma sampler rejected {0} consecutive draws; check mu/sigma against the truncation window")]
    RejectionOverflow(usize),

    #[error("symbol index {index} out of range for a {size}-point constellation")]
    IndexOutOfRange { index: usize, size: usize },

    #[error("signal is identically zero")]
    ZeroSignal,

    #[error("signal too short: {len} samples, need at least {needed}")]
    TooShort { len: usize, needed: usize },

    #[error("shape error: {0}")]
    Shape(String),

    #[error("non-finite loss at epoch {epoch}, batch {batch} (last finite epoch loss: {last_loss:?})")]
    NonFiniteLoss {
        epoch: usize,
        batch: usize,
        last_loss: Option<f64>,
    },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("missing config key `{0}`")]
    MissingKey(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}
