use thiserror::Error;

pub type Result<T> = std::result::Result<T, CekdError>;

#[derive(Debug, Error)]
pub enum CekdError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl CekdError {
    pub fn invalid(msg: impl Into<String>) -> Self {
        CekdError::InvalidArgument(msg.into())
    }

    /// Process exit code for the CLI: 2 config, 3 i/o, 4 numeric, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            CekdError::Config(_) | CekdError::InvalidArgument(_) => 2,
            CekdError::Io(_) | CekdError::Parse { .. } => 3,
            CekdError::Numeric(_) => 4,
        }
    }
}
