//! Provenance record written next to every data output.

use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::Context;
use serde::Serialize;
use sha2::{Digest, Sha256};

#[derive(Debug, Serialize)]
pub struct InputDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: &'static str,
    pub argv: Vec<String>,
    pub config: serde_json::Value,
    pub seed: Option<u64>,
    pub inputs: Vec<InputDigest>,
    pub outputs: Vec<String>,
    pub tool_version: &'static str,
    pub started_unix_ms: u128,
    pub finished_unix_ms: u128,
}

fn now_ms() -> u128 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis()).unwrap_or(0)
}

pub fn digest(path: &Path) -> anyhow::Result<InputDigest> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(InputDigest {
        path: path.display().to_string(),
        sha256: hex::encode(Sha256::digest(&bytes)),
    })
}

/// Collects provenance while a command runs.
pub struct Recorder {
    command: &'static str,
    started: u128,
    inputs: Vec<InputDigest>,
    seed: Option<u64>,
}

impl Recorder {
    pub fn start(command: &'static str) -> Self {
        Self {
            command,
            started: now_ms(),
            inputs: Vec::new(),
            seed: None,
        }
    }

    pub fn input(&mut self, path: &Path) -> anyhow::Result<()> {
        self.inputs.push(digest(path)?);
        Ok(())
    }

    pub fn seed(&mut self, seed: u64) {
        self.seed = Some(seed);
    }

    pub fn finish<C: Serialize>(self, config: &C, outputs: &[&Path], to: &Path) -> anyhow::Result<()> {
        let manifest = RunManifest {
            command: self.command,
            argv: std::env::args().collect(),
            config: serde_json::to_value(config)?,
            seed: self.seed,
            inputs: self.inputs,
            outputs: outputs.iter().map(|p| p.display().to_string()).collect(),
            tool_version: env!("CARGO_PKG_VERSION"),
            started_unix_ms: self.started,
            finished_unix_ms: now_ms(),
        };
        crate::io::write(to, crate::io::json_pretty(&manifest)?)
    }
}
