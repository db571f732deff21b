//! Toy detector weights: a versioned JSON document.

use std::path::Path;

use facepoison_core::synth::toy::{ToyDetector, TrainingReport};
use serde::{Deserialize, Serialize};

use crate::error::{AppError, AppResult};
use crate::io::{read_json, write_json};

pub const WEIGHTS_FORMAT: &str = "facepoison-toy-detector";
pub const WEIGHTS_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightsFile {
    pub format: String,
    pub version: u32,
    pub report: Option<TrainingReport>,
    pub model: ToyDetector,
}

pub fn save_weights(path: &Path, model: &ToyDetector, report: Option<&TrainingReport>) -> AppResult<()> {
    let file = WeightsFile {
        format: WEIGHTS_FORMAT.into(),
        version: WEIGHTS_VERSION,
        report: report.cloned(),
        model: model.clone(),
    };
    write_json(path, &file)
}

pub fn load_weights(path: &Path) -> AppResult<ToyDetector> {
    let file: WeightsFile = read_json(path)?;
    if file.format != WEIGHTS_FORMAT || file.version != WEIGHTS_VERSION {
        return Err(AppError::format(path, format!("unsupported weights format {} v{}", file.format, file.version)));
    }
    file.model.validate().map_err(|e| AppError::format(path, e))?;
    Ok(file.model)
}
