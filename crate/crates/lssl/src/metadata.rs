use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::dataset::write_json;
use crate::error::Result;

pub const METADATA_FILE: &str = "run_metadata.json";

/// Written next to every command's outputs. Passing it back as `--config`
/// replays the command with the same settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub command: String,
    pub version: String,
    pub config_sha256: String,
    pub seed: u64,
    /// Training and evaluation run on one thread; outputs other than wall
    /// times are bit reproducible.
    pub threads: usize,
    pub wall_seconds: f64,
    pub config: RunConfig,
}

impl RunMetadata {
    pub fn new(command: &str, config: &RunConfig, wall_seconds: f64) -> Self {
        Self {
            command: command.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            config_sha256: config.sha256(),
            seed: config.seed,
            threads: 1,
            wall_seconds,
            config: config.clone(),
        }
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        write_json(&dir.join(METADATA_FILE), self)
    }
}
