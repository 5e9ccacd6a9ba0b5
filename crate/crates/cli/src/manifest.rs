//! Per-command run manifest: config hash, output checksums, wall time.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::Result;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OutputEntry {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub version: String,
    pub config_sha256: String,
    pub outputs: Vec<OutputEntry>,
    pub wall_ms: u128,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(bytes);
    hex_string(&h.finalize())
}

fn hex_string(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Collects output files while a command runs, then writes
/// `manifest_<command>.json` beside them.
pub struct ManifestBuilder {
    command: String,
    config_sha256: String,
    out_dir: PathBuf,
    outputs: Vec<OutputEntry>,
    notes: Vec<String>,
    started: Instant,
}

impl ManifestBuilder {
    pub fn new(command: &str, config_bytes: &[u8], out_dir: &Path) -> Self {
        Self {
            command: command.to_string(),
            config_sha256: sha256_hex(config_bytes),
            out_dir: out_dir.to_path_buf(),
            outputs: Vec::new(),
            notes: Vec::new(),
            started: Instant::now(),
        }
    }

    /// Write bytes to `out_dir/name` and record the checksum.
    pub fn write_file(&mut self, name: &str, bytes: &[u8]) -> Result<PathBuf> {
        std::fs::create_dir_all(&self.out_dir)?;
        let path = self.out_dir.join(name);
        std::fs::write(&path, bytes)?;
        self.outputs.push(OutputEntry {
            path: name.to_string(),
            sha256: sha256_hex(bytes),
            bytes: bytes.len() as u64,
        });
        Ok(path)
    }

    pub fn note(&mut self, text: impl Into<String>) {
        self.notes.push(text.into());
    }

    pub fn finish(self) -> Result<Manifest> {
        let manifest = Manifest {
            command: self.command.clone(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            config_sha256: self.config_sha256,
            outputs: self.outputs,
            wall_ms: self.started.elapsed().as_millis(),
            notes: self.notes,
        };
        let name = format!("manifest_{}.json", self.command);
        std::fs::create_dir_all(&self.out_dir)?;
        std::fs::write(
            self.out_dir.join(name),
            serde_json::to_vec_pretty(&manifest)?,
        )?;
        Ok(manifest)
    }
}
