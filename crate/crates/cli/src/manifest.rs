use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

/// Record of one command run, written before the work starts and rewritten
/// when it ends.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub argv: Vec<String>,
    /// Full configuration after command-line overrides, in config-file syntax.
    pub config: String,
    pub seed: u64,
    pub code_version: String,
    pub outputs: Vec<PathBuf>,
    pub started_unix_s: u64,
    pub wall_clock_s: Option<f64>,
    /// `running`, `ok` or `error`.
    pub status: String,
    pub error: Option<String>,
    pub results: Map<String, Value>,
}

pub struct ManifestWriter {
    path: PathBuf,
    manifest: RunManifest,
    started: Instant,
}

impl ManifestWriter {
    pub fn start(path: &Path, command: &str, config: String, seed: u64, outputs: Vec<PathBuf>) -> Result<Self> {
        let manifest = RunManifest {
            command: command.to_string(),
            argv: std::env::args().collect(),
            config,
            seed,
            code_version: env!("CARGO_PKG_VERSION").to_string(),
            outputs,
            started_unix_s: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
            wall_clock_s: None,
            status: "running".into(),
            error: None,
            results: Map::new(),
        };
        let w = Self {
            path: path.to_path_buf(),
            manifest,
            started: Instant::now(),
        };
        w.write()?;
        Ok(w)
    }

    pub fn record(&mut self, key: &str, value: impl Into<Value>) {
        self.manifest.results.insert(key.to_string(), value.into());
    }

    fn write(&self) -> Result<()> {
        let text = serde_json::to_string_pretty(&self.manifest)? + "\n";
        std::fs::write(&self.path, text).with_context(|| format!("writing manifest {}", self.path.display()))
    }

    pub fn finish<T>(mut self, outcome: &Result<T>) -> Result<()> {
        self.manifest.wall_clock_s = Some(self.started.elapsed().as_secs_f64());
        match outcome {
            Ok(_) => self.manifest.status = "ok".into(),
            Err(e) => {
                self.manifest.status = "error".into();
                self.manifest.error = Some(format!("{e:#}"));
            }
        }
        self.write()
    }
}
