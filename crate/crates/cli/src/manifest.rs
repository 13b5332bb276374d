use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::{CliError, Result};

/// Record of one subcommand run, written next to its outputs as
/// `manifest-<subcommand>.json`. Artifact paths are relative to the output
/// directory; input paths are as given.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub subcommand: String,
    pub seed: u64,
    pub config: RunConfig,
    pub inputs: BTreeMap<String, PathBuf>,
    pub artifacts: BTreeMap<String, PathBuf>,
}

impl RunManifest {
    pub fn new(subcommand: &str, config: &RunConfig) -> Self {
        Self {
            tool: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            subcommand: subcommand.to_string(),
            seed: config.seed,
            config: config.clone(),
            inputs: BTreeMap::new(),
            artifacts: BTreeMap::new(),
        }
    }

    pub fn file_name(subcommand: &str) -> String {
        format!("manifest-{subcommand}.json")
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }

    pub fn write(&self, out_dir: &Path) -> Result<PathBuf> {
        let path = out_dir.join(Self::file_name(&self.subcommand));
        std::fs::write(&path, self.to_json() + "\n")
            .map_err(|e| CliError::Runtime(format!("writing {}: {e}", path.display())))?;
        Ok(path)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("reading {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }
}
