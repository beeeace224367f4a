use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};
use skillagg::{Error, Result};

/// Provenance record written next to every command's outputs.
#[derive(Debug, Serialize)]
pub struct Manifest {
    tool: &'static str,
    version: &'static str,
    command: String,
    seed: u64,
    config_hash: Option<String>,
    /// Input path → sha256 of its bytes.
    inputs: BTreeMap<String, String>,
    /// Output file name (relative to the out dir) → sha256.
    outputs: BTreeMap<String, String>,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::Data(format!("cannot read {}: {e}", path.display())))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

impl Manifest {
    pub fn new(command: impl Into<String>, seed: u64, config_hash: Option<String>) -> Self {
        Self {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            command: command.into(),
            seed,
            config_hash,
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
        }
    }

    pub fn input(&mut self, path: &Path) -> Result<()> {
        self.inputs.insert(path.display().to_string(), sha256_file(path)?);
        Ok(())
    }

    pub fn output(&mut self, out_dir: &Path, path: &Path) -> Result<()> {
        let name = path.strip_prefix(out_dir).unwrap_or(path);
        self.outputs.insert(name.display().to_string(), sha256_file(path)?);
        Ok(())
    }

    /// Write `manifest.<tag>.json` into `out_dir`.
    pub fn write(&self, out_dir: &Path, tag: &str) -> Result<PathBuf> {
        let path = out_dir.join(format!("manifest.{tag}.json"));
        crate::commands::write_json(&path, self)?;
        Ok(path)
    }
}
