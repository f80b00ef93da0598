use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("computation failed: {0}")]
    Compute(String),
    #[error("I/O error on {path}: {message}")]
    Io { path: String, message: String },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Compute(_) => 2,
            CliError::Io { .. } => 3,
        }
    }

    pub fn io(path: &std::path::Path, err: impl std::fmt::Display) -> Self {
        CliError::Io { path: path.display().to_string(), message: err.to_string() }
    }

    pub fn compute(err: impl std::fmt::Display) -> Self {
        CliError::Compute(err.to_string())
    }
}
