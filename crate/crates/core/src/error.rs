use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("validation failed:\n  {}", .0.join("\n  "))]
    Validation(Vec<String>),
    #[error("unsupported operation: {0}")]
    Unsupported(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("numerical error: {0}")]
    Numerical(String),
    #[error("integration did not converge: {0}")]
    NonConvergence(String),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Validation(_) | Error::Unsupported(_) | Error::Dimension(_) => 2,
            Error::Numerical(_) | Error::NonConvergence(_) => 3,
            Error::Io(_) => 4,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
