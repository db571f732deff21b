//! File formats, codecs and the command-line driver for `facepoison-core`.

pub mod annotations;
pub mod cli;
pub mod codec;
pub mod config;
pub mod error;
pub mod io;
pub mod manifest;
pub mod weights;

pub use error::{AppError, AppResult};
