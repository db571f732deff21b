use std::path::{Path, PathBuf};

use facepoison_core::Error as CoreError;

/// Exit status for usage and configuration problems.
pub const EXIT_USAGE: i32 = 2;
/// Exit status for failures while running a valid command.
pub const EXIT_RUNTIME: i32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum AppError {
    #[error("{0}")]
    Usage(String),
    #[error("invalid configuration in {path}: {message}")]
    ConfigFile { path: PathBuf, message: String },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
    #[error("{path}: {source}")]
    Image { path: PathBuf, source: image::ImageError },
    #[error(transparent)]
    Core(#[from] CoreError),
    #[error("video propagation stopped: {0}")]
    Propagation(String),
}

pub type AppResult<T> = Result<T, AppError>;

impl AppError {
    pub fn exit_code(&self) -> i32 {
        match self {
            AppError::Usage(_) | AppError::ConfigFile { .. } | AppError::Core(CoreError::Config(_)) => EXIT_USAGE,
            _ => EXIT_RUNTIME,
        }
    }

    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        AppError::Io { path: path.to_path_buf(), source }
    }

    pub(crate) fn format(path: &Path, message: impl std::fmt::Display) -> Self {
        AppError::Format { path: path.to_path_buf(), message: message.to_string() }
    }
}
