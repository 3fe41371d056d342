use thiserror::Error;

/// Errors raised by the substrate, DSP, corpus and vision layers.
#[derive(Debug, Error)]
pub enum CoreError {
    #[error("{op}: shape mismatch: {msg}")]
    Shape { op: &'static str, msg: String },

    #[error("{op}: invalid argument: {msg}")]
    InvalidArgument { op: &'static str, msg: String },

    #[error("loss must be a scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("program is non-deterministic (drew randomness); disable dropout for gradient checking")]
    NonDeterministic,

    #[error("gradient check refused: {0} parameter elements exceeds the cap of {1}")]
    TooManyElements(usize, usize),

    #[error("unknown parameter {0:?}")]
    UnknownParameter(String),

    #[error("duplicate parameter name {0:?}")]
    DuplicateParameter(String),

    #[error("dtype mismatch for {name:?}: stored {stored:?}, requested {requested:?}")]
    DtypeMismatch {
        name: String,
        stored: crate::tensor::Dtype,
        requested: crate::tensor::Dtype,
    },

    #[error("corrupt parameter file: {0}")]
    CorruptStore(String),

    #[error("utterance too short: {got} frames, need at least {need}")]
    TooShort { got: usize, need: usize },

    #[error("ctc target infeasible: expanded length {expanded} exceeds {frames} frames")]
    CtcInfeasible { expanded: usize, frames: usize },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("{0}")]
    Other(String),
}

pub type Result<T> = std::result::Result<T, CoreError>;

impl CoreError {
    pub fn shape(op: &'static str, msg: impl Into<String>) -> Self {
        CoreError::Shape { op, msg: msg.into() }
    }

    pub fn invalid(op: &'static str, msg: impl Into<String>) -> Self {
        CoreError::InvalidArgument { op, msg: msg.into() }
    }
}
