//! Run manifests: one JSON file per invocation recording what went in and out.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::CliError;

pub const MANIFEST_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Serialize)]
pub struct InputFile {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub schema_version: u32,
    pub command: String,
    pub config_sha256: String,
    pub seed: u64,
    pub threads: usize,
    pub inputs: Vec<InputFile>,
    pub outputs: Vec<String>,
    pub wall_clock_seconds: f64,
    pub library_version: String,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn write(path: &Path, manifest: &RunManifest) -> Result<PathBuf, CliError> {
    let text = serde_json::to_string_pretty(manifest).map_err(|e| CliError::internal(e.to_string()))?;
    fs::write(path, text + "\n").map_err(|e| CliError::output(path, e))?;
    Ok(path.to_path_buf())
}
