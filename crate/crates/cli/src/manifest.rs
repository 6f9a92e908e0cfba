use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use iterquant::{Error, Result};
use serde::Serialize;

/// Provenance record written into every output location before a command
/// starts and rewritten when it ends.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config: serde_json::Value,
    pub tool_version: String,
    pub corpus_sha256: Option<String>,
    pub started_unix: f64,
    pub finished_unix: Option<f64>,
    pub status: String,
    pub error: Option<String>,
    #[serde(skip)]
    path: PathBuf,
}

fn now() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0)
}

impl RunManifest {
    pub fn start(path: &Path, command: &str, config: serde_json::Value) -> Result<Self> {
        let m = Self {
            command: command.to_string(),
            config,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            corpus_sha256: None,
            started_unix: now(),
            finished_unix: None,
            status: "running".into(),
            error: None,
            path: path.to_path_buf(),
        };
        m.write()?;
        Ok(m)
    }

    pub fn set_corpus(&mut self, sha: &str) -> Result<()> {
        self.corpus_sha256 = Some(sha.to_string());
        self.write()
    }

    pub fn finish<T>(mut self, outcome: &Result<T>) -> Result<()> {
        self.finished_unix = Some(now());
        match outcome {
            Ok(_) => self.status = "ok".into(),
            Err(e) => {
                self.status = "failed".into();
                self.error = Some(e.to_string());
            }
        }
        self.write()
    }

    fn write(&self) -> Result<()> {
        if let Some(dir) = self.path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(&self.path, text).map_err(|e| Error::io(&self.path, e))
    }
}
