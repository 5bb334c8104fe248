//! Run manifest written once into every output directory.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::{Error, Result, VERSION};

pub const MANIFEST_FILE: &str = "manifest.toml";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: String,
    pub command: Vec<String>,
    /// SHA-256 of the effective configuration text.
    pub config_digest: String,
    /// Effective configuration (command options or experiment config).
    pub config: String,
    /// Seeds as decimal strings; derived seeds use the full u64 range,
    /// which TOML integers cannot hold.
    pub seeds: BTreeMap<String, String>,
    /// SHA-256 of each input file, keyed by path.
    pub inputs: BTreeMap<String, String>,
    /// Seconds since the Unix epoch.
    pub started: u64,
    pub finished: u64,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

impl RunManifest {
    pub fn start(command: Vec<String>, config: String) -> Self {
        let t = now();
        Self {
            version: VERSION.to_owned(),
            command,
            config_digest: sha256_hex(config.as_bytes()),
            config,
            seeds: BTreeMap::new(),
            inputs: BTreeMap::new(),
            started: t,
            finished: t,
        }
    }

    pub fn seed(&mut self, name: &str, seed: u64) -> &mut Self {
        self.seeds.insert(name.to_owned(), seed.to_string());
        self
    }

    pub fn input(&mut self, path: impl AsRef<Path>) -> Result<&mut Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        self.inputs.insert(path.display().to_string(), sha256_hex(&bytes));
        Ok(self)
    }

    /// Record an in-memory input such as the embedded dataset.
    pub fn input_bytes(&mut self, name: &str, bytes: &[u8]) -> &mut Self {
        self.inputs.insert(name.to_owned(), sha256_hex(bytes));
        self
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("manifest serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Stamp the finish time and write `manifest.toml` into `dir`, replacing
    /// any earlier manifest.
    pub fn finish(&mut self, dir: impl AsRef<Path>) -> Result<()> {
        self.finished = now();
        let path = dir.as_ref().join(MANIFEST_FILE);
        std::fs::write(&path, self.to_toml()).map_err(|e| Error::io(&path, e))
    }
}
