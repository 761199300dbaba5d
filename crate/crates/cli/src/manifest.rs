//! Run manifests and atomic file output.
//!
//! Every subcommand writes a manifest carrying the resolved configuration,
//! its hash, the master seed and the tool version: enough to reproduce the
//! outputs byte for byte. Nothing volatile (timestamps, wall-clock) goes in.

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};
use std::fs;
use std::path::Path;

#[derive(Serialize)]
pub struct Manifest<C: Serialize> {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub seed: u64,
    pub config_hash: String,
    pub config: C,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
}

pub fn config_hash<C: Serialize>(config: &C) -> Result<String> {
    let canonical = serde_json::to_vec(config).context("hashing config")?;
    Ok(hex(&Sha256::digest(&canonical)))
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn manifest<C: Serialize>(
    command: &str,
    seed: u64,
    config: C,
    inputs: Vec<String>,
    outputs: Vec<String>,
) -> Result<Manifest<C>> {
    let config_hash = config_hash(&config)?;
    Ok(Manifest {
        tool: "deepifsac".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        command: command.into(),
        seed,
        config_hash,
        config,
        inputs,
        outputs,
    })
}

/// Write via a sibling temp file and rename, so readers never observe a
/// partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).with_context(|| format!("writing {}", tmp.display()))?;
    fs::rename(&tmp, path).with_context(|| format!("renaming into {}", path.display()))?;
    Ok(())
}

pub fn write_manifest<C: Serialize>(path: &Path, m: &Manifest<C>) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(m).context("encoding manifest")?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}
