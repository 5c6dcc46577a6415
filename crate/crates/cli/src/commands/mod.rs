//! Subcommand implementations and the file helpers they share.

pub mod estimate;
pub mod evaluate;
pub mod fcs;
pub mod fit;
pub mod impute;
pub mod rake;
pub mod simulate;

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;

use crate::manifest::derive_seed;
use crate::{CliError, GlobalOpts};

pub(crate) fn read_text(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

/// Parses a JSON or TOML (by extension) config; unknown keys are reported by name.
pub(crate) fn parse_config<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = read_text(path)?;
    let parsed = match path.extension().and_then(|e| e.to_str()) {
        Some("toml") => toml::from_str(&text).map_err(|e| e.to_string()),
        _ => serde_json::from_str(&text).map_err(|e| e.to_string()),
    };
    parsed.map_err(|e| CliError::config(format!("config {}: {e}", path.display())))
}

/// (master, derived) seeds. `--seed` wins and is hashed with the subcommand label;
/// otherwise the seed stored in the config file is used unchanged.
pub(crate) fn resolve_seed(global: &GlobalOpts, label: &str, config_seed: u64) -> (u64, u64) {
    match global.seed {
        Some(s) => (s, derive_seed(s, label)),
        None => (config_seed, config_seed),
    }
}

pub(crate) fn out_path(global: &GlobalOpts, name: &str) -> PathBuf {
    global.out_dir.join(name)
}

pub(crate) fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).expect("value serializes");
    std::fs::write(path, text + "\n").map_err(|e| CliError::io(path, e))
}

pub(crate) fn create(path: &Path) -> Result<std::io::BufWriter<std::fs::File>, CliError> {
    std::fs::File::create(path)
        .map(std::io::BufWriter::new)
        .map_err(|e| CliError::io(path, e))
}

/// Fails with an I/O exit code before any parsing when an input is missing.
pub(crate) fn require_file(path: &Path) -> Result<(), CliError> {
    std::fs::metadata(path).map(|_| ()).map_err(|e| CliError::io(path, e))
}
