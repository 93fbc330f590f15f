use std::path::{Path, PathBuf};

use chrono::{DateTime, SecondsFormat, Utc};
use serde::Serialize;

use crate::error::CliError;

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub artifact: &'static str,
    pub version: &'static str,
    pub command: String,
    pub config_hash: String,
    pub master_seed: u64,
    pub workers: usize,
    pub started_at: String,
    pub finished_at: String,
    pub runtime_seconds: f64,
    pub outputs: Vec<PathBuf>,
}

impl RunManifest {
    pub fn new(
        command: &str,
        config_hash: String,
        master_seed: u64,
        workers: usize,
        started: DateTime<Utc>,
        outputs: Vec<PathBuf>,
    ) -> Self {
        let finished = Utc::now();
        Self {
            artifact: "conevol",
            version: env!("CARGO_PKG_VERSION"),
            command: command.to_string(),
            config_hash,
            master_seed,
            workers,
            started_at: started.to_rfc3339_opts(SecondsFormat::Millis, true),
            finished_at: finished.to_rfc3339_opts(SecondsFormat::Millis, true),
            runtime_seconds: (finished - started).num_milliseconds() as f64 / 1000.0,
            outputs,
        }
    }

    pub fn write(&self, dir: &Path) -> Result<PathBuf, CliError> {
        let path = dir.join("manifest.json");
        let text = serde_json::to_string_pretty(self).expect("plain data");
        std::fs::write(&path, text + "\n").map_err(CliError::io(format!("writing {}", path.display())))?;
        Ok(path)
    }
}
