//! Run manifests: what went in, what came out, and under which seed.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::CliError;

#[derive(Debug, Clone, Serialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    /// Digest of the `--config` file, when one was given.
    pub config_sha256: Option<String>,
    pub seed: u64,
    /// Seed handed to the subcommand after label hashing.
    pub derived_seed: u64,
    pub versions: Vec<(String, String)>,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    pub started_unix: u64,
    pub finished_unix: u64,
}

pub fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

pub fn sha256_file(path: &Path) -> Result<String, CliError> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Stable per-subcommand seed: the first 8 bytes of sha256(seed || label).
pub fn derive_seed(seed: u64, label: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(label.as_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("digest has 32 bytes"))
}

/// Collects inputs and outputs while a command runs, then writes `manifest.json`.
#[derive(Debug)]
pub struct ManifestBuilder {
    command: String,
    config: Option<PathBuf>,
    seed: u64,
    derived_seed: u64,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
    started: u64,
}

impl ManifestBuilder {
    pub fn new(command: &str, config: Option<&Path>, seed: u64, derived_seed: u64) -> Self {
        ManifestBuilder {
            command: command.to_string(),
            config: config.map(Path::to_path_buf),
            seed,
            derived_seed,
            inputs: Vec::new(),
            outputs: Vec::new(),
            started: unix_now(),
        }
    }

    pub fn input(&mut self, path: &Path) {
        self.inputs.push(path.to_path_buf());
    }

    pub fn output(&mut self, path: &Path) {
        self.outputs.push(path.to_path_buf());
    }

    fn digests(paths: &[PathBuf]) -> Result<Vec<FileDigest>, CliError> {
        paths
            .iter()
            .map(|p| {
                Ok(FileDigest {
                    path: p.display().to_string(),
                    sha256: sha256_file(p)?,
                })
            })
            .collect()
    }

    pub fn finish(self, out_dir: &Path) -> Result<RunManifest, CliError> {
        let manifest = RunManifest {
            command: self.command,
            config_sha256: self.config.as_deref().map(sha256_file).transpose()?,
            seed: self.seed,
            derived_seed: self.derived_seed,
            versions: vec![
                ("jmrp-cli".to_string(), env!("CARGO_PKG_VERSION").to_string()),
                ("jmrp-core".to_string(), env!("CARGO_PKG_VERSION").to_string()),
            ],
            inputs: Self::digests(&self.inputs)?,
            outputs: Self::digests(&self.outputs)?,
            started_unix: self.started,
            finished_unix: unix_now(),
        };
        let path = out_dir.join("manifest.json");
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        std::fs::write(&path, text).map_err(|e| CliError::io(&path, e))?;
        Ok(manifest)
    }
}
