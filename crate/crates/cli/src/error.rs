use std::process::ExitCode;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),

    #[error("{0}")]
    Usage(String),

    #[error("input: {0}")]
    Input(String),

    #[error(transparent)]
    Model(#[from] ybspin::Error),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    /// The result was written but carries flags.
    #[error("result flagged: {0}")]
    Flagged(String),
}

impl CliError {
    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(match self {
            CliError::Config(_) | CliError::Usage(_) => 2,
            CliError::Flagged(_) => 3,
            _ => 1,
        })
    }
}
