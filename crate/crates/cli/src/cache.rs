//! Content-addressed store for stage outputs.
//!
//! A cell's outputs live in `<root>/<stage>/<fingerprint>/`. Files are
//! written to a temporary name and renamed into place, and a cell counts as
//! complete only once its `done.json` marker exists, so an interrupted run
//! never leaves a half-written cell that looks finished.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::CliError;

pub const DONE: &str = "done.json";

/// Hex SHA-256 of the canonical JSON encoding of `value`.
pub fn fingerprint<T: Serialize + ?Sized>(value: &T) -> String {
    let bytes = serde_json::to_vec(value).expect("fingerprint input serializes");
    hex::encode(Sha256::digest(&bytes))
}

pub fn fingerprint_bytes(parts: &[&[u8]]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    hex::encode(h.finalize())
}

static TMP_COUNTER: AtomicU64 = AtomicU64::new(0);

/// Writes `bytes` to `path` through a sibling temporary file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let dir = path.parent().unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let tmp = dir.join(format!(
        ".{}.tmp-{}-{}",
        path.file_name().and_then(|n| n.to_str()).unwrap_or("out"),
        std::process::id(),
        TMP_COUNTER.fetch_add(1, Ordering::Relaxed)
    ));
    fs::write(&tmp, bytes).map_err(|e| CliError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| CliError::io(path, e))
}

#[derive(Debug, Clone)]
pub struct Cache {
    root: PathBuf,
}

impl Cache {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Cache { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn dir(&self, stage: &str, fp: &str) -> PathBuf {
        self.root.join(stage).join(fp)
    }

    pub fn is_complete(&self, stage: &str, fp: &str) -> bool {
        self.dir(stage, fp).join(DONE).is_file()
    }

    pub fn write(&self, stage: &str, fp: &str, name: &str, bytes: &[u8]) -> Result<PathBuf, CliError> {
        let path = self.dir(stage, fp).join(name);
        write_atomic(&path, bytes)?;
        Ok(path)
    }

    pub fn read_string(&self, stage: &str, fp: &str, name: &str) -> Result<String, CliError> {
        let path = self.dir(stage, fp).join(name);
        fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))
    }

    /// Marks a cell complete; `meta` records what produced it.
    pub fn finish<T: Serialize>(&self, stage: &str, fp: &str, meta: &T) -> Result<(), CliError> {
        let json = serde_json::to_vec_pretty(meta).expect("metadata serializes");
        self.write(stage, fp, DONE, &json).map(|_| ())
    }
}
