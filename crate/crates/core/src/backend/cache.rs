//! Content-addressed on-disk cache for completions.
//!
//! Layout: `{dir}/{first 2 hex of digest}/{digest}.json`, one JSON body per
//! entry. Writes go through a temp file and rename, so concurrent runs can
//! share a cache directory.

use super::{BackendError, CompletionRequest, TokenUsage};
use crate::util::{atomic_write, now_unix_ms};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CacheEntry {
    pub request: CompletionRequest,
    pub text: String,
    pub usage: Option<TokenUsage>,
    /// Unix milliseconds.
    #[serde(rename = "created_at")]
    pub created_at: u64,
}

#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct CacheStats {
    pub entries: usize,
    pub bytes: u64,
}

#[derive(Debug, Clone)]
pub struct DiskCache {
    dir: PathBuf,
}

impl DiskCache {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn entry_path(&self, digest: &str) -> PathBuf {
        let shard = digest.get(..2).unwrap_or("00");
        self.dir.join(shard).join(format!("{digest}.json"))
    }

    /// Look up an entry; unreadable or corrupt entries count as misses.
    pub fn get(&self, digest: &str) -> Option<CacheEntry> {
        let bytes = std::fs::read(self.entry_path(digest)).ok()?;
        serde_json::from_slice(&bytes).ok()
    }

    pub fn put(
        &self,
        digest: &str,
        request: &CompletionRequest,
        text: &str,
        usage: Option<TokenUsage>,
    ) -> Result<(), BackendError> {
        let entry = CacheEntry {
            request: request.clone(),
            text: text.to_string(),
            usage,
            created_at: now_unix_ms(),
        };
        let body = serde_json::to_vec_pretty(&entry)
            .map_err(|e| BackendError::Protocol(format!("cache serialization: {e}")))?;
        atomic_write(&self.entry_path(digest), &body).map_err(BackendError::Cache)
    }

    fn entry_files(&self) -> Vec<PathBuf> {
        let mut files = Vec::new();
        let Ok(shards) = std::fs::read_dir(&self.dir) else {
            return files;
        };
        for shard in shards.flatten() {
            if !shard.path().is_dir() {
                continue;
            }
            if let Ok(entries) = std::fs::read_dir(shard.path()) {
                for entry in entries.flatten() {
                    let path = entry.path();
                    if path.extension().is_some_and(|e| e == "json") {
                        files.push(path);
                    }
                }
            }
        }
        files
    }

    pub fn stats(&self) -> CacheStats {
        let files = self.entry_files();
        let bytes = files
            .iter()
            .filter_map(|p| std::fs::metadata(p).ok())
            .map(|m| m.len())
            .sum();
        CacheStats {
            entries: files.len(),
            bytes,
        }
    }

    /// Remove every entry; returns the number removed.
    pub fn clear(&self) -> Result<usize, BackendError> {
        let files = self.entry_files();
        let mut removed = 0;
        for file in files {
            std::fs::remove_file(&file).map_err(BackendError::Cache)?;
            removed += 1;
        }
        Ok(removed)
    }
}
