//! Layered run configuration: built-in defaults, then the `--config` file,
//! then explicit flags.
//!
//! The config file is a JSON object with optional top-level `seed` and
//! `threads` and one optional object per subcommand holding that
//! subcommand's settings. A run manifest has the same shape, so passing a
//! previous run's `run.json` as `--config` repeats the run.

use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

/// Keys a manifest carries that are not settings.
const METADATA_KEYS: [&str; 3] = ["command", "tool", "version"];
const SUBCOMMANDS: [&str; 4] = ["generate", "normalize", "fit", "sample"];

#[derive(Debug, Clone, Default)]
pub struct ConfigFile {
    root: Map<String, Value>,
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let value: Value = serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        let Value::Object(root) = value else {
            bail!("config {} must be a JSON object", path.display());
        };
        for key in root.keys() {
            let known = key == "seed" || key == "threads" || METADATA_KEYS.contains(&key.as_str()) || SUBCOMMANDS.contains(&key.as_str());
            if !known {
                bail!("config {}: unknown key {key:?}", path.display());
            }
        }
        Ok(Self { root })
    }

    pub fn seed(&self) -> Result<Option<u64>> {
        self.root.get("seed").map(|v| serde_json::from_value(v.clone()).context("config seed")).transpose()
    }

    pub fn threads(&self) -> Result<Option<usize>> {
        self.root.get("threads").map(|v| serde_json::from_value(v.clone()).context("config threads")).transpose()
    }

    /// Defaults overlaid with the subcommand's section of the file.
    pub fn resolve<T: Serialize + DeserializeOwned>(&self, section: &str, defaults: T) -> Result<T> {
        let Some(overrides) = self.root.get(section) else {
            return Ok(defaults);
        };
        let Value::Object(overrides) = overrides else {
            bail!("config section {section:?} must be an object");
        };
        let Value::Object(mut merged) = serde_json::to_value(defaults)? else {
            unreachable!("settings serialize to objects");
        };
        for (k, v) in overrides {
            if !merged.contains_key(k) {
                bail!("config section {section:?}: unknown setting {k:?}");
            }
            merged.insert(k.clone(), v.clone());
        }
        serde_json::from_value(Value::Object(merged)).with_context(|| format!("config section {section:?}"))
    }
}

/// Record written to `run.json` in every output directory.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub seed: u64,
    pub threads: usize,
    #[serde(flatten)]
    pub settings: Map<String, Value>,
}

impl RunManifest {
    pub fn new<T: Serialize>(command: &str, seed: u64, threads: usize, settings: &T) -> Result<Self> {
        let mut map = Map::new();
        map.insert(command.to_string(), serde_json::to_value(settings)?);
        Ok(Self {
            tool: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            seed,
            threads,
            settings: map,
        })
    }
}
