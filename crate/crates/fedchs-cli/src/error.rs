//! CLI-level errors: line-numbered configuration diagnostics plus
//! pass-through of simulator and filesystem failures.

use std::path::PathBuf;

/// Result alias for everything above the simulator library.
pub type CliResult<T> = Result<T, CliError>;

/// Failure modes surfaced by the command-line front end.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// A config line failed to parse or named something this tool does not
    /// understand. Line numbers are 1-based.
    #[error("config line {line}: {detail}")]
    Config { line: usize, detail: String },

    /// The config as a whole is incomplete or inconsistent in a way no
    /// single line can be blamed for.
    #[error("config: {0}")]
    Invalid(String),

    /// Bad command-line usage (missing or contradictory flags).
    #[error("{0}")]
    Usage(String),

    /// A simulator call failed.
    #[error(transparent)]
    Core(#[from] fedchs_core::Error),

    /// Reading or writing a file failed.
    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn config(line: usize, detail: impl Into<String>) -> Self {
        CliError::Config {
            line,
            detail: detail.into(),
        }
    }

    pub fn invalid(detail: impl Into<String>) -> Self {
        CliError::Invalid(detail.into())
    }

    pub fn usage(detail: impl Into<String>) -> Self {
        CliError::Usage(detail.into())
    }
}
