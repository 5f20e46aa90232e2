use thiserror::Error;

use crate::checkpoint::CheckpointError;
use crate::mnist::IdxError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("kernel {kernel:?} does not fit padded input {input:?}")]
    KernelTooLarge { kernel: [usize; 2], input: [usize; 2] },

    #[error("label {label} at batch row {row} is outside [0, {classes})")]
    LabelOutOfRange { row: usize, label: usize, classes: usize },

    #[error("angle {value} at ({row}, {col}) lies outside [-pi, pi]; wrap it before the spring loss")]
    AngleOutOfRange { row: usize, col: usize, value: f64 },

    #[error("probability {0} is outside the open interval (0, 1)")]
    ProbabilityOutOfRange(f64),

    #[error("squared radius {0} is negative")]
    NegativeRho(f64),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("non-finite {term} loss at epoch {epoch}, step {step}")]
    NonFinite { term: &'static str, epoch: usize, step: usize },

    #[error("unknown morph mode {0:?} (expected two_per_dim or full)")]
    UnknownMode(String),

    #[error(transparent)]
    Idx(#[from] IdxError),

    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub(crate) fn shape_err(op: &'static str, detail: impl Into<String>) -> Error {
    Error::Shape { op, detail: detail.into() }
}
