use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::{write_json, RunConfig};

pub fn sha256_file(path: &Path) -> anyhow::Result<String> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Record written next to an output file as `<file>.provenance.json`.
#[derive(Serialize)]
pub struct Provenance<'a, T: Serialize> {
    pub command: &'static str,
    pub tool_version: &'static str,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint_sha256: Option<String>,
    pub config: &'a RunConfig,
    pub details: T,
}

pub fn sidecar_path(output: &Path) -> PathBuf {
    let mut name = output.file_name().unwrap_or_default().to_os_string();
    name.push(".provenance.json");
    output.with_file_name(name)
}

pub fn write_sidecar<T: Serialize>(output: &Path, record: &Provenance<'_, T>) -> anyhow::Result<()> {
    write_json(&sidecar_path(output), record)
}
