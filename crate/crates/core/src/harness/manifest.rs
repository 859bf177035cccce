//! Provenance record written next to every command's outputs.

use std::path::Path;

use chrono::{SecondsFormat, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const RUN_MANIFEST: &str = "run_manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub args: Vec<String>,
    pub config_hash: String,
    pub seed: u64,
    /// Crate name and version that produced the artifacts.
    pub artifact_version: String,
    pub started: String,
    pub finished: Option<String>,
    pub outputs: Vec<String>,
}

fn now() -> String {
    Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true)
}

impl RunManifest {
    pub fn start(command: &str, args: Vec<String>, config_hash: String, seed: u64) -> Self {
        Self {
            command: command.into(),
            args,
            config_hash,
            seed,
            artifact_version: concat!(env!("CARGO_PKG_NAME"), " ", env!("CARGO_PKG_VERSION")).into(),
            started: now(),
            finished: None,
            outputs: Vec::new(),
        }
    }

    pub fn output(&mut self, path: impl AsRef<Path>) {
        self.outputs.push(path.as_ref().display().to_string());
    }

    /// Stamps the finish time and writes `run_manifest.json` into `dir`.
    pub fn finish(mut self, dir: &Path) -> Result<Self> {
        self.finished = Some(now());
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let p = dir.join(RUN_MANIFEST);
        std::fs::write(&p, serde_json::to_string_pretty(&self).expect("manifest serializes")).map_err(|e| Error::io(&p, e))?;
        Ok(self)
    }
}
