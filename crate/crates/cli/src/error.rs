//! CLI error taxonomy: configuration problems exit 1, runtime failures
//! exit 2.

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("runtime failure: {0}")]
    Runtime(String),
}

impl CliError {
    pub fn config(msg: impl Into<String>) -> Self {
        CliError::Config(msg.into())
    }

    pub fn runtime(msg: impl Into<String>) -> Self {
        CliError::Runtime(msg.into())
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

impl From<vsr_core::error::CoreError> for CliError {
    fn from(e: vsr_core::error::CoreError) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<vsr_model::ModelError> for CliError {
    fn from(e: vsr_model::ModelError) -> Self {
        CliError::Runtime(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
