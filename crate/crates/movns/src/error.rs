use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum AppError {
    #[error("{path}: {source}")]
    ConfigParse {
        path: PathBuf,
        #[source]
        source: Box<toml::de::Error>,
    },
    #[error("config field `{field}`: {message}")]
    ConfigField { field: String, message: String },
    #[error("numerical failure: {0}")]
    Numerical(#[from] movns_core::Error),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
}

impl AppError {
    pub fn field(field: &str, message: impl Into<String>) -> Self {
        AppError::ConfigField { field: field.to_string(), message: message.into() }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        AppError::Io { path: path.into(), source }
    }

    pub fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        AppError::Format { path: path.into(), message: message.into() }
    }

    /// Process exit status: 2 configuration, 3 numerical, 4 I/O.
    pub fn exit_code(&self) -> u8 {
        match self {
            AppError::ConfigParse { .. } | AppError::ConfigField { .. } => 2,
            AppError::Numerical(_) => 3,
            AppError::Io { .. } | AppError::Format { .. } => 4,
        }
    }
}

pub type Result<T> = std::result::Result<T, AppError>;
