//! Run manifests: the effective configuration, derived seeds and a SHA-256
//! of every artifact a run wrote. A manifest can be fed back as `--config`
//! to repeat the run.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use diffaudit::{Error, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;

pub const MANIFEST_VERSION: u32 = 1;
/// Version of every CSV layout the runner writes.
pub const CSV_FORMAT_VERSION: u32 = 1;
/// Version field carried by every JSON report.
pub const REPORT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub format_version: u32,
    pub tool: String,
    pub subcommand: String,
    pub master_seed: u64,
    pub stage_seeds: BTreeMap<String, u64>,
    pub csv_format_version: u32,
    pub config: ExperimentConfig,
    /// File name (relative to the output directory) to lowercase hex SHA-256.
    pub artifacts: BTreeMap<String, String>,
}

impl RunManifest {
    pub fn file_name(subcommand: &str) -> String {
        format!("manifest-{subcommand}.json")
    }

    /// Whether a JSON document is a manifest rather than a plain config.
    pub fn looks_like(doc: &serde_json::Value) -> bool {
        doc.get("artifacts").is_some()
            && doc.get("subcommand").is_some()
            && doc.get("config").is_some()
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Collects the artifacts a stage writes into one directory.
#[derive(Debug)]
pub struct ArtifactDir {
    dir: PathBuf,
    written: Vec<String>,
}

impl ArtifactDir {
    pub fn create(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir)?;
        Ok(ArtifactDir {
            dir: dir.to_path_buf(),
            written: Vec::new(),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    /// Registers a file some other routine wrote under `name`.
    pub fn register(&mut self, name: &str) -> Result<()> {
        if !self.path(name).is_file() {
            return Err(Error::State(format!("artifact {name} was not written")));
        }
        if !self.written.iter().any(|w| w == name) {
            self.written.push(name.to_string());
        }
        Ok(())
    }

    pub fn bytes(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        std::fs::write(self.path(name), bytes)?;
        self.register(name)
    }

    pub fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut text = serde_json::to_vec_pretty(value)?;
        text.push(b'\n');
        self.bytes(name, &text)
    }

    /// Writes through `f` into an in-memory buffer, then to `name`.
    pub fn with_writer(
        &mut self,
        name: &str,
        f: impl FnOnce(&mut Vec<u8>) -> Result<()>,
    ) -> Result<()> {
        let mut buf = Vec::new();
        f(&mut buf)?;
        self.bytes(name, &buf)
    }

    pub fn hashes(&self) -> Result<BTreeMap<String, String>> {
        self.written
            .iter()
            .map(|n| Ok((n.clone(), sha256_hex(&std::fs::read(self.path(n))?))))
            .collect()
    }
}
