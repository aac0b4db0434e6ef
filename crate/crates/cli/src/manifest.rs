//! Run manifests: every command records its fully resolved configuration,
//! input digests and timing, and `mfg rerun` re-executes a manifest to
//! reproduce the output file byte for byte.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Resolved per-command configuration (the seed and horizon written here are
/// the values actually used, after defaulting).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub enum ManifestCommand {
    Validate,
    SolveMfe {
        tol_dp: f64,
        tol_fp: f64,
        max_iter: usize,
        damping: f64,
    },
    Verify {
        tol: f64,
    },
    Simulate {
        agents: usize,
        horizon: usize,
        reps: usize,
        seed: u64,
    },
    Convergence {
        agents: Vec<usize>,
        horizon: usize,
        reps: usize,
        seed: u64,
    },
    NashGap {
        agents: usize,
        horizon: usize,
        reps: usize,
        seed: u64,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    #[serde(flatten)]
    pub command: ManifestCommand,
    pub model_path: PathBuf,
    pub model_sha256: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub result_path: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub result_sha256: Option<String>,
    pub format: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output_path: Option<PathBuf>,
    pub duration_ms: u128,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes =
        std::fs::read(path).with_context(|| format!("reading {} for hashing", path.display()))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

impl RunManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading manifest {}", path.display()))?;
        serde_json::from_str(&text).context("parsing manifest")
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut bytes = serde_json::to_vec_pretty(self)?;
        bytes.push(b'\n');
        std::fs::write(path, bytes)
            .with_context(|| format!("writing manifest {}", path.display()))
    }

    /// Confirms the referenced input files still have the recorded digests.
    pub fn check_inputs(&self) -> Result<()> {
        let model_hash = sha256_file(&self.model_path)?;
        if model_hash != self.model_sha256 {
            bail!(
                "model file {} changed since the manifest was written",
                self.model_path.display()
            );
        }
        if let (Some(path), Some(expected)) = (&self.result_path, &self.result_sha256) {
            let hash = sha256_file(path)?;
            if hash != *expected {
                bail!(
                    "result file {} changed since the manifest was written",
                    path.display()
                );
            }
        }
        Ok(())
    }
}

/// Default manifest location: next to the output file, or a fixed name in
/// the working directory when output goes to stdout.
pub fn default_manifest_path(out: Option<&Path>) -> PathBuf {
    match out {
        Some(path) => {
            let mut name = path.file_name().unwrap_or_default().to_os_string();
            name.push(".manifest.json");
            path.with_file_name(name)
        }
        None => PathBuf::from("mfg-manifest.json"),
    }
}
