//! One JSON manifest per run, used to skip reruns whose inputs, arguments,
//! configuration and seed are unchanged.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use physasset::{canonical_json, sha256_hex};
use serde::{Deserialize, Serialize};
use walkdir::WalkDir;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobStatus {
    Succeeded,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobManifest {
    pub command: String,
    pub inputs: Vec<PathBuf>,
    pub config_hash: String,
    pub seed: u64,
    pub outputs: Vec<PathBuf>,
    pub status: JobStatus,
    /// Digest of command, arguments, input contents, config hash and seed.
    pub job_hash: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Content digest of a file, or of every file under a directory (sorted by
/// relative path). Missing paths hash to a fixed marker.
pub fn digest_path(path: &Path) -> Result<String> {
    if !path.exists() {
        return Ok("missing".into());
    }
    let mut parts = Vec::new();
    for entry in WalkDir::new(path).sort_by_file_name() {
        let entry = entry.with_context(|| format!("walking {}", path.display()))?;
        if entry.file_type().is_file() {
            let rel = entry.path().strip_prefix(path).unwrap_or(entry.path());
            let bytes = std::fs::read(entry.path()).with_context(|| format!("reading {}", entry.path().display()))?;
            parts.push(format!("{}:{}", rel.display(), sha256_hex(&bytes)));
        }
    }
    Ok(sha256_hex(parts.join("\n").as_bytes()))
}

pub fn job_hash(command: &str, args: &serde_json::Value, inputs: &[PathBuf], config_hash: &str, seed: u64) -> Result<String> {
    let digests = inputs.iter().map(|p| digest_path(p)).collect::<Result<Vec<_>>>()?;
    let key = serde_json::json!({
        "command": command,
        "args": args,
        "inputs": digests,
        "config_hash": config_hash,
        "seed": seed,
    });
    Ok(sha256_hex(canonical_json(&key).as_bytes()))
}

impl JobManifest {
    pub fn read(path: &Path) -> Option<Self> {
        let text = std::fs::read_to_string(path).ok()?;
        serde_json::from_str(&text).ok()
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        }
        std::fs::write(path, canonical_json(self)).with_context(|| format!("writing {}", path.display()))
    }

    /// A previous successful run with the same hash whose outputs still exist.
    pub fn satisfies(&self, hash: &str) -> bool {
        self.status == JobStatus::Succeeded && self.job_hash == hash && self.outputs.iter().all(|p| p.exists())
    }
}

/// `<out>.manifest.json` next to the output.
pub fn default_path(out: &Path) -> PathBuf {
    let mut name = out.file_name().map(|n| n.to_os_string()).unwrap_or_else(|| "job".into());
    name.push(".manifest.json");
    out.with_file_name(name)
}
