//! Error types shared across the crate.

/// Errors produced by configuration, fitting, and experiment execution.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Invalid parameter ranges or malformed configuration input.
    #[error("configuration error: {0}")]
    Config(String),

    /// A least-squares fit was requested with too few (or too degenerate) tuples.
    #[error("insufficient data: have {have} usable tuples, need {need}")]
    InsufficientData { have: usize, need: usize },

    /// A numerical procedure failed to produce a finite result.
    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code for the CLI: 2 for configuration errors, 3 for
    /// numerical failures, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::InsufficientData { .. } | Error::Numerical(_) => 3,
            Error::Io(_) => 1,
        }
    }
}
