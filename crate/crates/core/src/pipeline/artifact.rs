use std::fs::{File, OpenOptions};
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pipeline::{sha256_hex, RunConfig};

/// Sidecar written next to every artifact as `<file>.meta.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArtifactMeta {
    pub stage: String,
    pub config_hash: String,
    pub seed: u64,
    /// SHA-256 of the artifact bytes.
    pub sha256: String,
    pub config: RunConfig,
}

pub fn meta_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta.json");
    PathBuf::from(s)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Writes `bytes` and its sidecar.
pub fn write_artifact(path: &Path, bytes: &[u8], stage: &str, config_hash: &str, cfg: &RunConfig) -> Result<()> {
    write_file(path, bytes)?;
    let resolved = cfg.resolved();
    let meta = ArtifactMeta {
        stage: stage.to_string(),
        config_hash: config_hash.to_string(),
        seed: resolved.seed,
        sha256: sha256_hex(bytes),
        config: resolved,
    };
    let text = serde_json::to_string_pretty(&meta).expect("meta serializes");
    write_file(&meta_path(path), text.as_bytes())
}

pub fn read_meta(path: &Path) -> Result<ArtifactMeta> {
    let mp = meta_path(path);
    let text = std::fs::read_to_string(&mp).map_err(|e| Error::io(&mp, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Format {
        path: mp.display().to_string(),
        line: e.line(),
        message: e.to_string(),
    })
}

/// Reads an artifact after checking its content hash and, unless `force`,
/// that it was produced under `expected_hash`.
pub fn read_artifact(path: &Path, expected_hash: &str, force: bool) -> Result<Vec<u8>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let meta = read_meta(path)?;
    let actual = sha256_hex(&bytes);
    if actual != meta.sha256 {
        return Err(Error::ArtifactMismatch {
            path: path.to_path_buf(),
            expected: meta.sha256,
            found: actual,
        });
    }
    if !force && meta.config_hash != expected_hash {
        return Err(Error::ArtifactMismatch {
            path: path.to_path_buf(),
            expected: expected_hash.to_string(),
            found: meta.config_hash,
        });
    }
    Ok(bytes)
}

/// True when the artifact exists, is intact and matches `expected_hash`.
pub fn is_current(path: &Path, expected_hash: &str) -> bool {
    read_artifact(path, expected_hash, false).is_ok()
}

/// Exclusive claim on an output directory, released on drop.
#[derive(Debug)]
pub struct OutputLock {
    path: PathBuf,
}

impl OutputLock {
    pub fn acquire(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(".lock");
        let mut f: File = OpenOptions::new().write(true).create_new(true).open(&path).map_err(|e| {
            if e.kind() == std::io::ErrorKind::AlreadyExists {
                Error::config(format!(
                    "{} is locked by another run (remove {} if that run is gone)",
                    dir.display(),
                    path.display()
                ))
            } else {
                Error::io(&path, e)
            }
        })?;
        writeln!(f, "{}", std::process::id()).map_err(|e| Error::io(&path, e))?;
        Ok(Self { path })
    }
}

impl Drop for OutputLock {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.path);
    }
}
