//! Content-addressed completion cache.
//!
//! One file per entry under `cache/`, named by the request key (64 hex
//! chars), body JSON `{text, finish_reason}`. Writes go to a temp file then
//! rename, so a killed process never leaves a torn entry, and entries are
//! immutable once written. Error completions are never cached: a transport
//! failure is not a completion, and caching it would freeze a transient
//! fault into every future resume.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use crate::client::{ChatRequest, Completer, Completion, EndpointConfig, FinishReason};

/// What a cache entry persists of a completion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CachedCompletion {
    pub text: String,
    pub finish_reason: FinishReason,
}

#[derive(Debug, thiserror::Error)]
pub enum CacheError {
    #[error("cache key {0:?} is not 64 hex chars")]
    InvalidKey(String),
    #[error("cache io at {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("corrupt cache entry {path}: {message}")]
    Corrupt { path: PathBuf, message: String },
}

/// Directory-backed cache keyed by request key.
#[derive(Debug)]
pub struct DiskCache {
    dir: PathBuf,
}

fn valid_key(key: &str) -> bool {
    key.len() == 64 && key.bytes().all(|b| b.is_ascii_hexdigit())
}

impl DiskCache {
    pub fn open(dir: &Path) -> Result<DiskCache, CacheError> {
        std::fs::create_dir_all(dir).map_err(|source| CacheError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
        Ok(DiskCache {
            dir: dir.to_path_buf(),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn entry_path(&self, key: &str) -> Result<PathBuf, CacheError> {
        if !valid_key(key) {
            return Err(CacheError::InvalidKey(key.to_string()));
        }
        Ok(self.dir.join(key))
    }

    pub fn get(&self, key: &str) -> Result<Option<CachedCompletion>, CacheError> {
        let path = self.entry_path(key)?;
        let bytes = match std::fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(source) => return Err(CacheError::Io { path, source }),
        };
        let entry = serde_json::from_slice(&bytes).map_err(|e| CacheError::Corrupt {
            path,
            message: e.to_string(),
        })?;
        Ok(Some(entry))
    }

    /// Write an entry unless one already exists (entries are immutable, and
    /// any concurrent writer of the same key writes identical bytes).
    pub fn put(&self, key: &str, value: &CachedCompletion) -> Result<(), CacheError> {
        let path = self.entry_path(key)?;
        if path.exists() {
            return Ok(());
        }
        let tmp = self.dir.join(format!(
            ".tmp-{key}-{}",
            std::process::id()
        ));
        let bytes = serde_json::to_vec(value).expect("entry serializes");
        std::fs::write(&tmp, &bytes).map_err(|source| CacheError::Io {
            path: tmp.clone(),
            source,
        })?;
        std::fs::rename(&tmp, &path).map_err(|source| CacheError::Io { path, source })?;
        Ok(())
    }

    /// Number of committed entries.
    pub fn entry_count(&self) -> Result<usize, CacheError> {
        let mut count = 0;
        let iter = std::fs::read_dir(&self.dir).map_err(|source| CacheError::Io {
            path: self.dir.clone(),
            source,
        })?;
        for entry in iter {
            let entry = entry.map_err(|source| CacheError::Io {
                path: self.dir.clone(),
                source,
            })?;
            if entry
                .file_name()
                .to_str()
                .is_some_and(valid_key)
            {
                count += 1;
            }
        }
        Ok(count)
    }
}

/// Completer that answers from the cache and forwards only misses.
///
/// Soundness rests on the request key pinning everything that selects a
/// completion: a hit is indistinguishable from a fresh identical call.
pub struct CachingCompleter<'a> {
    cache: &'a DiskCache,
    inner: &'a dyn Completer,
    endpoint_calls: AtomicU64,
    cache_hits: AtomicU64,
}

impl<'a> CachingCompleter<'a> {
    pub fn new(cache: &'a DiskCache, inner: &'a dyn Completer) -> Self {
        CachingCompleter {
            cache,
            inner,
            endpoint_calls: AtomicU64::new(0),
            cache_hits: AtomicU64::new(0),
        }
    }

    /// Requests forwarded to the wrapped completer so far.
    pub fn endpoint_calls(&self) -> u64 {
        self.endpoint_calls.load(Ordering::SeqCst)
    }

    pub fn cache_hits(&self) -> u64 {
        self.cache_hits.load(Ordering::SeqCst)
    }
}

impl Completer for CachingCompleter<'_> {
    fn complete_batch(&self, endpoint: &EndpointConfig, reqs: &[ChatRequest]) -> Vec<Completion> {
        let mut results: Vec<Option<Completion>> = vec![None; reqs.len()];
        let mut miss_positions: Vec<usize> = Vec::new();

        for (i, req) in reqs.iter().enumerate() {
            match self.cache.get(&req.request_tag) {
                Ok(Some(entry)) => {
                    self.cache_hits.fetch_add(1, Ordering::SeqCst);
                    results[i] = Some(Completion {
                        text: entry.text,
                        finish_reason: entry.finish_reason,
                        latency: std::time::Duration::ZERO,
                        error: None,
                    });
                }
                Ok(None) => miss_positions.push(i),
                Err(e) => {
                    // Surface cache corruption as a failed completion rather
                    // than silently recomputing what should be immutable.
                    results[i] = Some(Completion {
                        text: String::new(),
                        finish_reason: FinishReason::Error,
                        latency: std::time::Duration::ZERO,
                        error: Some(e.to_string()),
                    });
                }
            }
        }

        if !miss_positions.is_empty() {
            let missing: Vec<ChatRequest> =
                miss_positions.iter().map(|&i| reqs[i].clone()).collect();
            self.endpoint_calls
                .fetch_add(missing.len() as u64, Ordering::SeqCst);
            let fresh = self.inner.complete_batch(endpoint, &missing);
            for (&i, completion) in miss_positions.iter().zip(fresh) {
                if completion.finish_reason != FinishReason::Error {
                    let entry = CachedCompletion {
                        text: completion.text.clone(),
                        finish_reason: completion.finish_reason,
                    };
                    if let Err(e) = self.cache.put(&reqs[i].request_tag, &entry) {
                        results[i] = Some(Completion {
                            text: String::new(),
                            finish_reason: FinishReason::Error,
                            latency: completion.latency,
                            error: Some(e.to_string()),
                        });
                        continue;
                    }
                }
                results[i] = Some(completion);
            }
        }

        results
            .into_iter()
            .map(|c| c.expect("every position filled"))
            .collect()
    }
}
