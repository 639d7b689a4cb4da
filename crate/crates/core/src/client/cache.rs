//! Content-addressed completion cache: one JSON file per completion at
//! `<dir>/<first two hex digits>/<digest>.json`.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::GenerationConfig;
use crate::error::ClientError;

/// Everything that determines a completion. Field order is fixed, so the
/// serialized form is canonical.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheKey {
    pub namespace: String,
    pub prompt: String,
    pub top_k: u32,
    pub temperature: f64,
    pub max_new_tokens: u32,
    pub stop: Vec<String>,
    pub samples_per_seed: u32,
    pub seed: u64,
    pub sample_index: u32,
}

impl CacheKey {
    pub fn new(
        namespace: &str,
        prompt: &str,
        config: &GenerationConfig,
        seed: u64,
        sample_index: u32,
    ) -> Self {
        Self {
            namespace: namespace.to_string(),
            prompt: prompt.to_string(),
            top_k: config.top_k,
            temperature: config.temperature,
            max_new_tokens: config.max_new_tokens,
            stop: config.stop_sequences.clone(),
            samples_per_seed: config.samples_per_seed,
            seed,
            sample_index,
        }
    }

    pub fn digest(&self) -> String {
        let canonical = serde_json::to_vec(self).expect("key serializes");
        hex::encode(Sha256::digest(&canonical))
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Entry {
    key: CacheKey,
    text: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct CacheStats {
    pub entries: usize,
    pub bytes: u64,
}

#[derive(Debug, Clone)]
pub struct DiskCache {
    dir: PathBuf,
}

static TMP_COUNTER: AtomicU64 = AtomicU64::new(0);

impl DiskCache {
    pub fn open(dir: &Path) -> Result<Self, ClientError> {
        fs::create_dir_all(dir).map_err(|source| ClientError::Cache {
            path: dir.display().to_string(),
            source,
        })?;
        Ok(Self {
            dir: dir.to_path_buf(),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn path_for(&self, digest: &str) -> PathBuf {
        self.dir.join(&digest[..2]).join(format!("{digest}.json"))
    }

    /// The cached text, or `None` on a miss. An entry whose stored key
    /// differs from `key` (digest collision or tampering) counts as a miss.
    pub fn get(&self, key: &CacheKey) -> Result<Option<String>, ClientError> {
        let path = self.path_for(&key.digest());
        let raw = match fs::read(&path) {
            Ok(raw) => raw,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(source) => {
                return Err(ClientError::Cache {
                    path: path.display().to_string(),
                    source,
                })
            }
        };
        match serde_json::from_slice::<Entry>(&raw) {
            Ok(entry) if entry.key == *key => Ok(Some(entry.text)),
            _ => Ok(None),
        }
    }

    /// Write through a temporary file and rename, so readers never see a
    /// partial entry.
    pub fn put(&self, key: &CacheKey, text: &str) -> Result<(), ClientError> {
        let path = self.path_for(&key.digest());
        let io_err = |source| ClientError::Cache {
            path: path.display().to_string(),
            source,
        };
        let parent = path.parent().expect("sharded path");
        fs::create_dir_all(parent).map_err(io_err)?;
        let tmp = parent.join(format!(
            ".tmp-{}-{}",
            std::process::id(),
            TMP_COUNTER.fetch_add(1, Ordering::Relaxed)
        ));
        let entry = Entry {
            key: key.clone(),
            text: text.to_string(),
        };
        let mut f = fs::File::create(&tmp).map_err(io_err)?;
        f.write_all(&serde_json::to_vec(&entry).expect("entry serializes"))
            .map_err(io_err)?;
        f.sync_all().map_err(io_err)?;
        fs::rename(&tmp, &path).map_err(io_err)
    }

    pub fn stats(&self) -> Result<CacheStats, ClientError> {
        let mut stats = CacheStats {
            entries: 0,
            bytes: 0,
        };
        let io_err = |source| ClientError::Cache {
            path: self.dir.display().to_string(),
            source,
        };
        for shard in fs::read_dir(&self.dir).map_err(io_err)? {
            let shard = shard.map_err(io_err)?;
            if !shard.file_type().map_err(io_err)?.is_dir() {
                continue;
            }
            for file in fs::read_dir(shard.path()).map_err(io_err)? {
                let file = file.map_err(io_err)?;
                if file.path().extension().is_some_and(|e| e == "json") {
                    stats.entries += 1;
                    stats.bytes += file.metadata().map_err(io_err)?.len();
                }
            }
        }
        Ok(stats)
    }

    /// Remove every entry; returns how many were removed.
    pub fn clear(&self) -> Result<usize, ClientError> {
        let n = self.stats()?.entries;
        let io_err = |source| ClientError::Cache {
            path: self.dir.display().to_string(),
            source,
        };
        for shard in fs::read_dir(&self.dir).map_err(io_err)? {
            let shard = shard.map_err(io_err)?;
            if shard.file_type().map_err(io_err)?.is_dir() {
                fs::remove_dir_all(shard.path()).map_err(io_err)?;
            }
        }
        Ok(n)
    }
}
