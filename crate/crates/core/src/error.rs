use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Dimension {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("invalid shape {shape:?} for {len} elements")]
    Shape { shape: Vec<usize>, len: usize },
    #[error("axis {axis} out of range for rank {rank}")]
    Axis { axis: usize, rank: usize },
    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },
    #[error("loss must be a scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("backward already ran on this tape")]
    StaleTape,
    #[error("{0}")]
    Invalid(String),
    #[error("missing gradients: expected {expected} parameter buffers, got {actual}")]
    MissingGrads { expected: usize, actual: usize },
    #[error("integration produced a non-finite state at step {step}")]
    Integration { step: usize },
    #[error("training diverged at epoch {epoch}, batch {batch}")]
    Diverged { epoch: usize, batch: usize },
    #[error("parameter audit mismatch for {model}: formula {formula}, registered {registered}")]
    Audit {
        model: String,
        formula: usize,
        registered: usize,
    },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("csv: {0}")]
    Csv(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::Invalid(msg.into())
}
