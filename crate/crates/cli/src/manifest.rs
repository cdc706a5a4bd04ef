//! Provenance records written next to every artifact.

use std::path::{Path, PathBuf};
use std::time::Instant;

use hemo::error::{HemoError, Result};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

pub const MANIFEST: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Artifact {
    pub path: String,
    pub sha256: String,
    /// Digest of the manifest that produced this input, when it has one.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub manifest_sha256: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub tool_version: String,
    pub config: Value,
    pub seeds: Vec<u64>,
    pub inputs: Vec<Artifact>,
    pub outputs: Vec<Artifact>,
    pub wall_time_s: f64,
    #[serde(skip_serializing_if = "Value::is_null", default)]
    pub summary: Value,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| HemoError::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Where the manifest for an artifact lives: inside a directory artifact,
/// or as a `<file>.manifest.json` sidecar.
pub fn manifest_path(artifact: &Path) -> PathBuf {
    if artifact.is_dir() {
        artifact.join(MANIFEST)
    } else {
        let mut name = artifact.file_name().unwrap_or_default().to_os_string();
        name.push(".manifest.json");
        artifact.with_file_name(name)
    }
}

/// Digest of an artifact: the file itself, or a directory's
/// `metadata.json`, which in turn lists digests of every data file.
pub fn describe(path: &Path) -> Result<Artifact> {
    let target = if path.is_dir() { path.join("metadata.json") } else { path.to_path_buf() };
    let m = manifest_path(path);
    Ok(Artifact {
        path: path.display().to_string(),
        sha256: sha256_file(&target)?,
        manifest_sha256: if m.exists() { Some(sha256_file(&m)?) } else { None },
    })
}

pub struct Recorder {
    command: String,
    config: Value,
    seeds: Vec<u64>,
    inputs: Vec<Artifact>,
    start: Instant,
}

impl Recorder {
    pub fn new(command: &str, config: Value, seeds: Vec<u64>) -> Self {
        Recorder {
            command: command.into(),
            config,
            seeds,
            inputs: Vec::new(),
            start: Instant::now(),
        }
    }

    pub fn input(&mut self, path: &Path) -> Result<()> {
        self.inputs.push(describe(path)?);
        Ok(())
    }

    /// Write the manifest for `output` (a file or a directory).
    pub fn finish(self, output: &Path, extra_outputs: &[PathBuf], summary: Value) -> Result<RunManifest> {
        let mut outputs = Vec::new();
        if output.is_dir() {
            for p in extra_outputs {
                outputs.push(Artifact {
                    path: p.strip_prefix(output).unwrap_or(p).display().to_string(),
                    sha256: sha256_file(p)?,
                    manifest_sha256: None,
                });
            }
        } else {
            outputs.push(Artifact {
                path: output.display().to_string(),
                sha256: sha256_file(output)?,
                manifest_sha256: None,
            });
        }
        let manifest = RunManifest {
            command: self.command,
            tool_version: env!("CARGO_PKG_VERSION").into(),
            config: self.config,
            seeds: self.seeds,
            inputs: self.inputs,
            outputs,
            wall_time_s: self.start.elapsed().as_secs_f64(),
            summary,
        };
        let path = manifest_path(output);
        std::fs::write(&path, serde_json::to_string_pretty(&manifest)?).map_err(|e| HemoError::io(&path, e))?;
        Ok(manifest)
    }
}
