//! Output-directory handling: resolution, lock protection, config echo.

use etndnet_core::config::RunConfig;
use etndnet_core::{Error, Result};
use std::path::{Path, PathBuf};

pub const OUTPUT_ROOT_ENV: &str = "ETNDNET_OUTPUT_ROOT";

/// Explicit path, or `<output root>/<command>-seed<seed>` where the root
/// comes from the environment (default `runs`).
pub fn resolve_out_dir(explicit: Option<PathBuf>, command: &str, seed: u64) -> PathBuf {
    explicit.unwrap_or_else(|| {
        let root = std::env::var(OUTPUT_ROOT_ENV).unwrap_or_else(|_| "runs".to_string());
        Path::new(&root).join(format!("{command}-seed{seed}"))
    })
}

/// An output directory held under a lock file for the lifetime of the
/// command. A second process targeting the same directory fails fast.
pub struct OutDir {
    path: PathBuf,
    lock: PathBuf,
}

impl OutDir {
    pub fn acquire(path: PathBuf) -> Result<Self> {
        std::fs::create_dir_all(&path)?;
        let lock = path.join(".lock");
        match std::fs::OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(&lock)
        {
            Ok(_) => Ok(Self { path, lock }),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                Err(Error::InvalidConfig(format!(
                    "output directory {} is locked by another run (remove {} if stale)",
                    path.display(),
                    lock.display()
                )))
            }
            Err(e) => Err(e.into()),
        }
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn file(&self, name: &str) -> PathBuf {
        self.path.join(name)
    }

    /// Write the fully resolved configuration so the run can be replayed.
    pub fn write_config_echo(&self, cfg: &RunConfig) -> Result<()> {
        std::fs::write(self.file("config.resolved.cfg"), cfg.to_kv_string())?;
        Ok(())
    }

    pub fn write_json<T: serde::Serialize>(&self, name: &str, value: &T) -> Result<()> {
        std::fs::write(self.file(name), serde_json::to_string_pretty(value)?)?;
        Ok(())
    }
}

impl Drop for OutDir {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.lock);
    }
}
