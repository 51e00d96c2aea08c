use std::path::Path;

use anyhow::Result;
use chrono::{SecondsFormat, Utc};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::output::sha256_file;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

/// Record of one command run. Passing the manifest back through `--config`
/// repeats the run with the same resolved parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub tool_version: String,
    pub command: String,
    /// Every resolved flag, keyed by flag name.
    pub config: Value,
    pub seed: Option<u64>,
    pub input: Option<FileDigest>,
    pub outputs: Vec<FileDigest>,
    /// Quantities computed from the inputs (split rows, window, ...).
    pub derived: Value,
    pub started_at: String,
    pub finished_at: String,
}

pub fn now() -> String {
    Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true)
}

impl RunManifest {
    pub fn new(command: &str, config: Value, seed: Option<u64>, input: Option<&Path>, started_at: String) -> Result<Self> {
        let input = match input {
            Some(p) => Some(FileDigest { path: p.display().to_string(), sha256: sha256_file(p)? }),
            None => None,
        };
        Ok(Self {
            tool: env!("CARGO_PKG_NAME").to_string(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            config,
            seed,
            input,
            outputs: Vec::new(),
            derived: Value::Null,
            started_at,
            finished_at: String::new(),
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes") + "\n"
    }
}
