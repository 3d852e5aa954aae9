//! Run manifests: a JSON sidecar written next to every output file holding
//! the fully resolved configuration, so any CSV or plot can be regenerated
//! by feeding the stored `config` object back via `--config`.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub subcommand: String,
    /// Resolved configuration after defaults ← config file ← flags merging;
    /// re-running the subcommand with exactly this object reproduces the
    /// outputs byte for byte.
    pub config: serde_json::Value,
    /// Seed driving any stochastic part of the run; absent for fully
    /// deterministic subcommands.
    pub seed: Option<u64>,
    /// Wall-clock write time (seconds since the Unix epoch). Recorded for
    /// provenance only — no output file content depends on it.
    pub timestamp_unix: u64,
    /// Files the run produced, relative to the manifest's directory.
    pub outputs: Vec<String>,
    /// Tool version string.
    pub version: String,
}

impl RunManifest {
    pub fn new<C: Serialize>(
        subcommand: &str,
        config: &C,
        seed: Option<u64>,
        outputs: &[&str],
    ) -> Result<Self, CliError> {
        Ok(RunManifest {
            subcommand: subcommand.into(),
            config: serde_json::to_value(config)
                .map_err(|e| CliError::config(format!("cannot serialize config: {e}")))?,
            seed,
            timestamp_unix: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
            outputs: outputs.iter().map(|s| s.to_string()).collect(),
            version: version_string(),
        })
    }

    /// Writes `<name>_manifest.json` into `dir` and returns its path.
    pub fn write(&self, dir: &Path, name: &str) -> Result<PathBuf, CliError> {
        let path = dir.join(format!("{name}_manifest.json"));
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| CliError::config(format!("cannot serialize manifest: {e}")))?;
        std::fs::write(&path, text + "\n")?;
        Ok(path)
    }
}

/// Tag-style version string baked in at compile time.
pub fn version_string() -> String {
    format!("pflow-v{}", env!("CARGO_PKG_VERSION"))
}
