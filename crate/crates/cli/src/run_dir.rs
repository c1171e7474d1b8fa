//! Output-directory bookkeeping: the exclusive lock and the manifest.

use std::fs::{self, File, OpenOptions};
use std::io::{ErrorKind, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use symgan_core::config::ExperimentConfig;

pub const LOCK_FILE: &str = ".symgan.lock";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const CONFIG_FILE: &str = "config.toml";

/// Crate version plus the git revision the binary was built from.
pub fn code_version() -> String {
    format!("{}+{}", env!("CARGO_PKG_VERSION"), env!("SYMGAN_GIT_REV"))
}

/// Hex SHA-256 of the canonical TOML rendering of `cfg`.
pub fn config_hash(cfg: &ExperimentConfig) -> Result<String> {
    let text = cfg.to_toml()?;
    let digest = Sha256::digest(text.as_bytes());
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub config_hash: String,
    pub seed: u64,
    pub data_seed: u64,
    pub setting: String,
    pub data_root: PathBuf,
    pub code_version: String,
    pub created_unix: u64,
    pub argv: Vec<String>,
}

/// An output directory held exclusively for the lifetime of the value.
/// Dropping it removes the lock file.
pub struct RunDir {
    path: PathBuf,
    lock: PathBuf,
}

impl RunDir {
    pub fn acquire(path: &Path) -> Result<Self> {
        fs::create_dir_all(path).with_context(|| format!("cannot create output directory {}", path.display()))?;
        let lock = path.join(LOCK_FILE);
        let mut f: File = match OpenOptions::new().write(true).create_new(true).open(&lock) {
            Ok(f) => f,
            Err(e) if e.kind() == ErrorKind::AlreadyExists => {
                let holder = fs::read_to_string(&lock).unwrap_or_default();
                bail!(
                    "output directory {} is in use (lock file {} held by pid {}); \
                     use another directory, or delete the lock if that process is gone",
                    path.display(),
                    lock.display(),
                    holder.trim()
                );
            }
            Err(e) => return Err(e).with_context(|| format!("cannot create lock file {}", lock.display())),
        };
        writeln!(f, "{}", std::process::id()).with_context(|| format!("cannot write {}", lock.display()))?;
        Ok(RunDir { path: path.to_path_buf(), lock })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Writes the manifest and the resolved configuration.
    pub fn record(&self, command: &str, cfg: &ExperimentConfig) -> Result<Manifest> {
        let manifest = Manifest {
            command: command.to_string(),
            config_hash: config_hash(cfg)?,
            seed: cfg.schedule.seed,
            data_seed: cfg.data_seed,
            setting: cfg.setting.name().to_string(),
            data_root: cfg.resolved_data_root(),
            code_version: code_version(),
            created_unix: SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0),
            argv: std::env::args().collect(),
        };
        write_json(&self.path.join(MANIFEST_FILE), &manifest)?;
        write_text(&self.path.join(CONFIG_FILE), &cfg.to_toml()?)?;
        Ok(manifest)
    }
}

impl Drop for RunDir {
    fn drop(&mut self) {
        if let Err(e) = fs::remove_file(&self.lock) {
            log::warn!("could not remove lock file {}: {e}", self.lock.display());
        }
    }
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
}

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value).context("cannot encode JSON")?;
    write_text(path, &(text + "\n"))
}
