use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the navigation stack.
#[derive(Debug, Error)]
pub enum ApexError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("invalid configuration at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error("usage error: {0}")]
    Usage(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("scene generation failed: {0}")]
    Generation(String),

    #[error("grounding failed: {0}")]
    Grounding(String),

    #[error("format error in {path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl ApexError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        ApexError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        ApexError::Format {
            path: path.into(),
            message: message.into(),
        }
    }

    /// Short machine-friendly category, used for CLI diagnostics.
    pub fn category(&self) -> &'static str {
        match self {
            ApexError::Dimension(_) => "dimension",
            ApexError::Input(_) => "input",
            ApexError::Config { .. } => "config",
            ApexError::Usage(_) => "usage",
            ApexError::Numeric(_) => "numeric",
            ApexError::Generation(_) => "generation",
            ApexError::Grounding(_) => "grounding",
            ApexError::Format { .. } => "format",
            ApexError::Io { .. } => "io",
        }
    }
}

pub type Result<T, E = ApexError> = std::result::Result<T, E>;
