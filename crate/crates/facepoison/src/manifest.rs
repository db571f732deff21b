use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::AppResult;
use crate::io::write_json;

pub const MANIFEST_VERSION: u32 = 1;

/// Record of one run. Passing it back through `--config` replays the run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub manifest_version: u32,
    pub tool: String,
    pub command: String,
    pub config: RunConfig,
    pub outputs: Vec<PathBuf>,
    pub summary: serde_json::Value,
}

impl Manifest {
    pub fn new(config: &RunConfig, outputs: Vec<PathBuf>, summary: serde_json::Value) -> Self {
        Manifest {
            manifest_version: MANIFEST_VERSION,
            tool: format!("{} {}", env!("CARGO_PKG_NAME"), env!("CARGO_PKG_VERSION")),
            command: config.command.clone(),
            config: config.clone(),
            outputs,
            summary,
        }
    }

    pub fn write(&self, path: &Path) -> AppResult<()> {
        write_json(path, self)
    }
}
