use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("config error: {0}")]
    Config(String),
    #[error("spatial extent {got} too small; need at least {need}")]
    SpatialTooSmall { got: usize, need: usize },
    #[error("sequence length {got} below minimum {need}")]
    SequenceTooShort { got: usize, need: usize },
    #[error("unknown tap {0:?}; valid taps: {1}")]
    UnknownTap(String, String),
    #[error("unknown token id {0} (vocabulary size {1})")]
    UnknownToken(usize, usize),
    #[error("non-finite gradient for parameter {0:?}")]
    NonFiniteGradient(String),
    #[error("infeasible CTC target: expanded length {expanded} exceeds {frames} frames")]
    CtcInfeasible { expanded: usize, frames: usize },
    #[error("empty reference sequence")]
    EmptyReference,
    #[error("invalid {op}: {msg}")]
    Invalid { op: String, msg: String },
    #[error(transparent)]
    Core(#[from] vsr_core::CoreError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl ModelError {
    pub fn invalid(op: impl Into<String>, msg: impl Into<String>) -> Self {
        ModelError::Invalid { op: op.into(), msg: msg.into() }
    }
}

pub type Result<T, E = ModelError> = std::result::Result<T, E>;
