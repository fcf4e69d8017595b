//! Content-hashed array cache keyed by model, dataset, subject and kind.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::store::{hash_bytes, read_file, write_atomic, FlatArray};

/// Environment variable naming the cache root.
pub const CACHE_ENV: &str = "FLIPSIDE_CACHE";

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CacheKey {
    pub model_id: String,
    pub dataset_id: String,
    /// A sample id or a class id.
    pub subject: String,
    pub kind: String,
}

impl CacheKey {
    pub fn new(
        model_id: impl Into<String>,
        dataset_id: impl Into<String>,
        subject: impl Into<String>,
        kind: impl Into<String>,
    ) -> Self {
        Self {
            model_id: model_id.into(),
            dataset_id: dataset_id.into(),
            subject: subject.into(),
            kind: kind.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub key: CacheKey,
    pub path: PathBuf,
    pub content_hash: String,
}

#[derive(Debug, Clone)]
pub struct Cache {
    root: PathBuf,
}

/// Filesystem-safe component that stays unique for distinct inputs.
fn component(raw: &str) -> String {
    let safe: String = raw
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' { c } else { '_' })
        .take(48)
        .collect();
    format!("{safe}-{}", &hash_bytes(raw.as_bytes())[..10])
}

impl Cache {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    /// Root from [`CACHE_ENV`], falling back to `default`.
    pub fn from_env(default: impl Into<PathBuf>) -> Self {
        match std::env::var_os(CACHE_ENV) {
            Some(root) if !root.is_empty() => Self::new(root),
            _ => Self::new(default),
        }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path_for(&self, key: &CacheKey) -> PathBuf {
        self.root
            .join(component(&key.model_id))
            .join(component(&key.dataset_id))
            .join(component(&key.subject))
            .join(format!("{}.bin", component(&key.kind)))
    }

    pub fn put(&self, key: &CacheKey, payload: &FlatArray) -> Result<CacheEntry> {
        let path = self.path_for(key);
        write_atomic(&path, &payload.encode())?;
        Ok(CacheEntry {
            key: key.clone(),
            path,
            content_hash: payload.content_hash(),
        })
    }

    /// Returns `None` on a miss. Entries that fail to decode or hash-check
    /// are deleted and reported as misses.
    pub fn get(&self, key: &CacheKey) -> Result<Option<FlatArray>> {
        let path = self.path_for(key);
        if !path.exists() {
            return Ok(None);
        }
        let bytes = read_file(&path)?;
        match FlatArray::decode(&bytes) {
            Ok(arr) => Ok(Some(arr)),
            Err(e) => {
                log::warn!("evicting corrupt cache entry {}: {e}", path.display());
                let _ = std::fs::remove_file(&path);
                Ok(None)
            }
        }
    }
}
