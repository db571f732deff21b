//! Run configuration: everything a command needs, loadable from JSON and
//! recorded verbatim in each run's manifest.

use std::path::{Path, PathBuf};

use facepoison_core::attack::AttackConfig;
use facepoison_core::eval::{RobustnessSpec, DEFAULT_IOU_THRESHOLD};
use facepoison_core::rng::substream;
use facepoison_core::synth::toy::ToyDetectorSpec;
use facepoison_core::video::{AnchorSchedule, HornSchunck, PropagationMode};
use serde::{Deserialize, Serialize};

use crate::error::{AppError, AppResult};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DetectorSelection {
    /// Built-in toy detector loaded from a weights file.
    Toy { weights: PathBuf },
    /// Adapter registered under an identifier by an embedding program.
    External { id: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingSettings {
    pub spec: ToyDetectorSpec,
    pub train_count: usize,
    pub val_count: usize,
    /// Training report path; defaults to a sibling of the weights file.
    pub report: Option<PathBuf>,
}

impl Default for TrainingSettings {
    fn default() -> Self {
        TrainingSettings { spec: ToyDetectorSpec::default(), train_count: 2000, val_count: 200, report: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluationSettings {
    pub predictions: Option<PathBuf>,
    pub ground_truth: Option<PathBuf>,
    /// Clean counterpart of `input`, for SSIM and robustness baselines.
    pub clean: Option<PathBuf>,
    pub iou_threshold: f64,
    pub score_threshold: f64,
    pub report: Option<PathBuf>,
}

impl Default for EvaluationSettings {
    fn default() -> Self {
        EvaluationSettings {
            predictions: None,
            ground_truth: None,
            clean: None,
            iou_threshold: DEFAULT_IOU_THRESHOLD,
            score_threshold: 0.5,
            report: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub schema_version: u32,
    pub command: String,
    /// Every random stream below is derived from this.
    pub seed: u64,
    pub input: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub detector: Option<DetectorSelection>,
    pub attack: AttackConfig,
    pub schedule: AnchorSchedule,
    pub mode: PropagationMode,
    pub fps: f64,
    pub flow: HornSchunck,
    pub robustness: RobustnessSpec,
    pub training: TrainingSettings,
    pub evaluation: EvaluationSettings,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            schema_version: SCHEMA_VERSION,
            command: String::new(),
            seed: 0,
            input: None,
            output: None,
            detector: None,
            attack: AttackConfig::default(),
            schedule: AnchorSchedule::default(),
            mode: PropagationMode::Bidirectional,
            fps: 30.0,
            flow: HornSchunck::default(),
            robustness: RobustnessSpec::default(),
            training: TrainingSettings::default(),
            evaluation: EvaluationSettings::default(),
        }
    }
}

impl RunConfig {
    /// Reads a config file, or the `config` section of a run manifest.
    pub fn load(path: &Path) -> AppResult<Self> {
        let bad = |message: String| AppError::ConfigFile { path: path.to_path_buf(), message };
        let text = std::fs::read_to_string(path).map_err(|e| AppError::io(path, e))?;
        let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| bad(e.to_string()))?;
        let body = match value.get("manifest_version") {
            Some(_) => value.get("config").cloned().ok_or_else(|| bad("manifest has no config section".into()))?,
            None => value,
        };
        let config: RunConfig = serde_json::from_value(body).map_err(|e| bad(e.to_string()))?;
        if config.schema_version != SCHEMA_VERSION {
            return Err(bad(format!("schema_version {} is not supported", config.schema_version)));
        }
        Ok(config)
    }

    /// Derives every component seed from the global seed.
    pub fn resolve_seeds(&mut self) {
        self.attack.seed = substream(self.seed, "attack");
        self.attack.guidance.seed = substream(self.seed, "mask");
        self.robustness.seed = substream(self.seed, "transform");
        self.training.spec.seed = substream(self.seed, "detector");
    }

    pub fn require_input(&self) -> AppResult<&Path> {
        self.input.as_deref().ok_or_else(|| AppError::Usage(format!("{}: an input path is required", self.command)))
    }

    pub fn require_output(&self) -> AppResult<&Path> {
        self.output.as_deref().ok_or_else(|| AppError::Usage(format!("{}: an output path is required", self.command)))
    }
}
