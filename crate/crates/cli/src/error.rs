use std::path::Path;

use thiserror::Error;

/// Process exit codes.
pub const EXIT_OK: u8 = 0;
pub const EXIT_NUMERICAL: u8 = 1;
pub const EXIT_USAGE: u8 = 2;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },

    #[error("malformed file: {0}")]
    Format(String),

    #[error("{0}")]
    Core(#[from] mh3d_core::Error),

    /// A check that ran to completion but did not pass.
    #[error("{0}")]
    Failed(String),
}

pub type CliResult<T> = std::result::Result<T, CliError>;

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> CliError {
        CliError::Io { path: path.display().to_string(), source }
    }

    pub fn exit_code(&self) -> u8 {
        use mh3d_core::Error as E;
        match self {
            CliError::Usage(_) | CliError::Io { .. } | CliError::Format(_) => EXIT_USAGE,
            CliError::Failed(_) => EXIT_NUMERICAL,
            CliError::Core(e) => match e {
                E::Config(_) | E::Shape { .. } | E::Range(_) | E::Nyquist(_) | E::MissingHarmonic(_) => EXIT_USAGE,
                E::Io(_) | E::Json(_) => EXIT_USAGE,
                E::NonFinite(_) | E::Degenerate(_) => EXIT_NUMERICAL,
            },
        }
    }
}
