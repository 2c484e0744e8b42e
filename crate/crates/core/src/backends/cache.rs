//! Append-only completion cache.
//!
//! Each line of the cache file is one [`CacheRecord`]. Records are immutable:
//! writing a different completion under an existing key is a conflict. A
//! truncated final line (from a crash mid-write) is ignored on load.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{BackendError, CompletionRequest, DecisionBackend};

/// Hex SHA-256 over the backend identity, sampling settings, seed and prompt.
pub fn cache_key(backend_id: &str, model_id: &str, request: &CompletionRequest) -> String {
    let mut h = Sha256::new();
    for part in [backend_id, model_id] {
        h.update((part.len() as u64).to_le_bytes());
        h.update(part.as_bytes());
    }
    h.update(request.temperature.to_bits().to_le_bytes());
    match request.seed {
        Some(s) => {
            h.update([1u8]);
            h.update(s.to_le_bytes());
        }
        None => h.update([0u8]),
    }
    h.update((request.prompt.len() as u64).to_le_bytes());
    h.update(request.prompt.as_bytes());
    hex::encode(h.finalize())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheRecord {
    pub key: String,
    pub backend: String,
    pub model: String,
    pub response: String,
}

impl CacheRecord {
    pub fn from_line(line: &str) -> Result<Self, BackendError> {
        serde_json::from_str(line).map_err(|e| BackendError::Storage(e.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CacheMode {
    /// Serve hits, forward misses to the inner backend and record them.
    Record,
    /// Serve hits only; a miss is an error.
    Replay,
}

/// In-memory view of a cache file plus an append handle.
#[derive(Debug)]
pub struct CacheStore {
    path: PathBuf,
    entries: HashMap<String, String>,
    file: File,
}

impl CacheStore {
    pub fn open(path: impl AsRef<Path>) -> Result<Self, BackendError> {
        let path = path.as_ref().to_path_buf();
        let storage = |e: std::io::Error| BackendError::Storage(format!("{}: {e}", path.display()));
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(storage)?;
        }
        let mut entries = HashMap::new();
        let mut valid_len = 0u64;
        if path.exists() {
            let reader = BufReader::new(File::open(&path).map_err(storage)?);
            let mut lines = reader.split(b'\n').peekable();
            while let Some(line) = lines.next() {
                let line = line.map_err(storage)?;
                let last = lines.peek().is_none();
                let parsed = std::str::from_utf8(&line).ok().map(CacheRecord::from_line);
                match parsed {
                    Some(Ok(rec)) => {
                        if let Some(prev) = entries.get(&rec.key) {
                            if prev != &rec.response {
                                return Err(BackendError::Conflict { key: rec.key });
                            }
                        }
                        entries.insert(rec.key, rec.response);
                        valid_len += line.len() as u64 + 1;
                    }
                    _ if last => {
                        log::warn!("ignoring truncated trailing record in {}", path.display());
                    }
                    Some(Err(e)) => return Err(e),
                    None => return Err(BackendError::Storage("cache line is not UTF-8".into())),
                }
            }
        }
        let mut file = OpenOptions::new().create(true).append(true).open(&path).map_err(storage)?;
        // Drop a torn tail so the next append starts on a fresh line.
        let len = file.metadata().map_err(storage)?.len();
        if len > valid_len {
            file.set_len(valid_len).map_err(storage)?;
        } else if len + 1 == valid_len {
            file.write_all(b"\n").map_err(storage)?;
        }
        Ok(CacheStore { path, entries, file })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    /// Appends a record. Re-inserting the same completion is a no-op.
    pub fn insert(&mut self, record: CacheRecord) -> Result<(), BackendError> {
        match self.entries.get(&record.key) {
            Some(prev) if prev == &record.response => return Ok(()),
            Some(_) => return Err(BackendError::Conflict { key: record.key }),
            None => {}
        }
        let mut line = serde_json::to_string(&record).map_err(|e| BackendError::Storage(e.to_string()))?;
        line.push('\n');
        self.file.write_all(line.as_bytes()).map_err(|e| BackendError::Storage(e.to_string()))?;
        self.file.flush().map_err(|e| BackendError::Storage(e.to_string()))?;
        self.entries.insert(record.key, record.response);
        Ok(())
    }
}

/// Wraps a backend with the completion cache.
pub struct CachingBackend {
    inner: Option<Arc<dyn DecisionBackend>>,
    backend_id: String,
    model_id: String,
    mode: CacheMode,
    store: Mutex<CacheStore>,
}

impl CachingBackend {
    /// Read-through cache in front of `inner`.
    pub fn record(inner: Arc<dyn DecisionBackend>, path: impl AsRef<Path>) -> Result<Self, BackendError> {
        let store = CacheStore::open(path)?;
        Ok(CachingBackend {
            backend_id: inner.backend_id().to_string(),
            model_id: inner.model_id().to_string(),
            inner: Some(inner),
            mode: CacheMode::Record,
            store: Mutex::new(store),
        })
    }

    /// Strict replay under the identity of the backend that recorded the cache.
    pub fn replay(path: impl AsRef<Path>, backend_id: &str, model_id: &str) -> Result<Self, BackendError> {
        let path = path.as_ref();
        if !path.exists() {
            return Err(BackendError::Storage(format!("{}: no such cache file", path.display())));
        }
        Ok(CachingBackend {
            inner: None,
            backend_id: backend_id.to_string(),
            model_id: model_id.to_string(),
            mode: CacheMode::Replay,
            store: Mutex::new(CacheStore::open(path)?),
        })
    }

    pub fn mode(&self) -> CacheMode {
        self.mode
    }

    pub fn len(&self) -> usize {
        self.store.lock().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl DecisionBackend for CachingBackend {
    fn backend_id(&self) -> &str {
        &self.backend_id
    }

    fn model_id(&self) -> &str {
        &self.model_id
    }

    fn complete(&self, request: &CompletionRequest) -> Result<String, BackendError> {
        let key = cache_key(&self.backend_id, &self.model_id, request);
        if let Some(hit) = self.store.lock().expect("cache lock").get(&key) {
            return Ok(hit.to_string());
        }
        let inner = match (&self.inner, self.mode) {
            (Some(inner), CacheMode::Record) => inner,
            _ => return Err(BackendError::CacheMiss { key }),
        };
        // The lock is not held across the inner call, so two workers may race
        // on the same key. Identical completions are accepted; a differing
        // second completion surfaces as a conflict.
        let response = inner.complete(request)?;
        let record = CacheRecord {
            key,
            backend: self.backend_id.clone(),
            model: self.model_id.clone(),
            response: response.clone(),
        };
        self.store.lock().expect("cache lock").insert(record)?;
        Ok(response)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::CannedBackend;

    fn req(prompt: &str, seed: u64) -> CompletionRequest {
        CompletionRequest { seed: Some(seed), ..CompletionRequest::new(prompt) }
    }

    #[test]
    fn key_depends_on_every_field() {
        let base = cache_key("b", "m", &req("p", 1));
        assert_ne!(base, cache_key("b2", "m", &req("p", 1)));
        assert_ne!(base, cache_key("b", "m2", &req("p", 1)));
        assert_ne!(base, cache_key("b", "m", &req("p2", 1)));
        assert_ne!(base, cache_key("b", "m", &req("p", 2)));
        let mut hot = req("p", 1);
        hot.temperature = 0.5;
        assert_ne!(base, cache_key("b", "m", &hot));
        // Boundary ambiguity between id fields.
        assert_ne!(cache_key("ab", "c", &req("p", 1)), cache_key("a", "bc", &req("p", 1)));
    }

    #[test]
    fn record_then_replay() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cache.jsonl");
        let inner = Arc::new(CannedBackend::new(["one", "two"]));
        let cached = CachingBackend::record(inner.clone(), &path).unwrap();
        assert_eq!(cached.complete(&req("a", 1)).unwrap(), "one");
        assert_eq!(cached.complete(&req("a", 1)).unwrap(), "one");
        assert_eq!(cached.complete(&req("b", 1)).unwrap(), "two");
        assert_eq!(inner.calls(), 2);
        drop(cached);

        let replay = CachingBackend::replay(&path, "canned", "canned").unwrap();
        assert_eq!(replay.complete(&req("b", 1)).unwrap(), "two");
        assert!(matches!(replay.complete(&req("c", 1)), Err(BackendError::CacheMiss { .. })));
    }

    #[test]
    fn conflicting_insert_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let mut store = CacheStore::open(dir.path().join("c.jsonl")).unwrap();
        let rec = |r: &str| CacheRecord { key: "k".into(), backend: "b".into(), model: "m".into(), response: r.into() };
        store.insert(rec("x")).unwrap();
        store.insert(rec("x")).unwrap();
        assert_eq!(store.insert(rec("y")), Err(BackendError::Conflict { key: "k".into() }));
    }

    #[test]
    fn torn_tail_is_dropped() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.jsonl");
        let good = serde_json::to_string(&CacheRecord {
            key: "k".into(),
            backend: "b".into(),
            model: "m".into(),
            response: "r".into(),
        })
        .unwrap();
        std::fs::write(&path, format!("{good}\n{{\"key\":\"k2\",\"resp")).unwrap();
        let mut store = CacheStore::open(&path).unwrap();
        assert_eq!(store.len(), 1);
        store
            .insert(CacheRecord { key: "k3".into(), backend: "b".into(), model: "m".into(), response: "s".into() })
            .unwrap();
        drop(store);
        assert_eq!(CacheStore::open(&path).unwrap().len(), 2);
    }

    #[test]
    fn missing_final_newline_is_repaired() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.jsonl");
        let rec = |k: &str| CacheRecord { key: k.into(), backend: "b".into(), model: "m".into(), response: "r".into() };
        std::fs::write(&path, serde_json::to_string(&rec("k")).unwrap()).unwrap();
        let mut store = CacheStore::open(&path).unwrap();
        store.insert(rec("k2")).unwrap();
        drop(store);
        assert_eq!(CacheStore::open(&path).unwrap().len(), 2);
    }
}
