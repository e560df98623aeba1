//! Response cache and replay backend.
//!
//! The cache is an append-only JSONL file of fingerprint→response records.
//! Recording the same (request, response) pair twice is a no-op; replaying a
//! request whose fingerprint is absent is a hard error naming the
//! fingerprint, so silent fallthrough to a live backend cannot happen.

use std::collections::HashMap;
use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{BackendError, CompletionRequest, Transport};

/// One recorded completion.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub fingerprint: String,
    pub model_id: String,
    pub text: String,
}

/// Append-only store of recorded responses, keyed by request fingerprint.
pub struct ResponseCache {
    path: PathBuf,
    entries: HashMap<String, CacheEntry>,
}

impl ResponseCache {
    /// Loads a cache file; a missing file is an empty cache. When the same
    /// fingerprint appears more than once the last record wins.
    pub fn load(path: &Path) -> Result<Self, BackendError> {
        let mut entries = HashMap::new();
        match std::fs::read_to_string(path) {
            Ok(contents) => {
                for (idx, line) in contents.lines().enumerate() {
                    if line.trim().is_empty() {
                        continue;
                    }
                    let entry: CacheEntry = serde_json::from_str(line).map_err(|e| {
                        BackendError::Cache(format!(
                            "{} line {}: {e}",
                            path.display(),
                            idx + 1
                        ))
                    })?;
                    entries.insert(entry.fingerprint.clone(), entry);
                }
            }
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {}
            Err(e) => return Err(BackendError::Cache(format!("{}: {e}", path.display()))),
        }
        Ok(Self { path: path.to_path_buf(), entries })
    }

    /// Loads the cache and keeps the path open for appending new records.
    pub fn open_for_append(path: PathBuf) -> Result<Self, BackendError> {
        Self::load(&path)
    }

    /// Records a (request, response) pair under its fingerprint.
    pub fn record_response(
        &mut self,
        model_id: &str,
        request: &CompletionRequest,
        text: &str,
    ) -> Result<bool, BackendError> {
        self.record(CacheEntry {
            fingerprint: request.fingerprint(model_id),
            model_id: model_id.to_string(),
            text: text.to_string(),
        })
    }

    /// Appends an entry unless an identical fingerprint is already recorded.
    /// Returns whether a line was written.
    pub fn record(&mut self, entry: CacheEntry) -> Result<bool, BackendError> {
        if self.entries.contains_key(&entry.fingerprint) {
            return Ok(false);
        }
        let line = serde_json::to_string(&entry)
            .map_err(|e| BackendError::Cache(format!("serialize cache entry: {e}")))?;
        let mut file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&self.path)
            .map_err(|e| BackendError::Cache(format!("{}: {e}", self.path.display())))?;
        writeln!(file, "{line}")
            .map_err(|e| BackendError::Cache(format!("{}: {e}", self.path.display())))?;
        self.entries.insert(entry.fingerprint.clone(), entry);
        Ok(true)
    }

    pub fn get(&self, fingerprint: &str) -> Option<&CacheEntry> {
        self.entries.get(fingerprint)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

pub(super) struct ReplayTransport {
    cache: ResponseCache,
    model_id: String,
}

impl ReplayTransport {
    pub(super) fn new(cache: ResponseCache, model_id: String) -> Self {
        Self { cache, model_id }
    }
}

impl Transport for ReplayTransport {
    fn call(&self, request: &CompletionRequest) -> Result<String, BackendError> {
        let fingerprint = request.fingerprint(&self.model_id);
        match self.cache.get(&fingerprint) {
            Some(entry) => Ok(entry.text.clone()),
            None => Err(BackendError::ReplayMiss { fingerprint }),
        }
    }

    fn is_live(&self) -> bool {
        false
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn temp_cache() -> (tempfile::TempDir, PathBuf) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cache.jsonl");
        (dir, path)
    }

    #[test]
    fn replay_hit_returns_recorded_text() {
        let (_dir, path) = temp_cache();
        let req = CompletionRequest::for_label("prompt");
        let mut cache = ResponseCache::open_for_append(path.clone()).unwrap();
        cache.record_response("m", &req, "HIGH").unwrap();

        let replay = ReplayTransport::new(ResponseCache::load(&path).unwrap(), "m".into());
        assert_eq!(replay.call(&req).unwrap(), "HIGH");
        assert!(!replay.is_live());
    }

    #[test]
    fn replay_miss_names_the_fingerprint() {
        let (_dir, path) = temp_cache();
        let req = CompletionRequest::for_label("never recorded");
        let replay = ReplayTransport::new(ResponseCache::load(&path).unwrap(), "m".into());
        match replay.call(&req).unwrap_err() {
            BackendError::ReplayMiss { fingerprint } => {
                assert_eq!(fingerprint, req.fingerprint("m"));
            }
            other => panic!("unexpected error: {other:?}"),
        }
    }

    #[test]
    fn re_recording_identical_pair_is_idempotent() {
        let (_dir, path) = temp_cache();
        let entry = CacheEntry {
            fingerprint: "abc".into(),
            model_id: "m".into(),
            text: "HIGH".into(),
        };
        let mut cache = ResponseCache::open_for_append(path.clone()).unwrap();
        assert!(cache.record(entry.clone()).unwrap());
        assert!(!cache.record(entry.clone()).unwrap());
        drop(cache);

        let reloaded = ResponseCache::load(&path).unwrap();
        assert_eq!(reloaded.len(), 1);
        let lines = std::fs::read_to_string(&path).unwrap().lines().count();
        assert_eq!(lines, 1);
    }

    proptest! {
        // Record/replay round-trip is exact for arbitrary request contents.
        #[test]
        fn record_replay_round_trip(prompt in ".{0,200}", response in ".{0,100}") {
            let (_dir, path) = temp_cache();
            let req = CompletionRequest::for_label(prompt);
            let mut cache = ResponseCache::open_for_append(path.clone()).unwrap();
            cache.record(CacheEntry {
                fingerprint: req.fingerprint("m"),
                model_id: "m".into(),
                text: response.clone(),
            }).unwrap();
            drop(cache);

            let replay = ReplayTransport::new(ResponseCache::load(&path).unwrap(), "m".into());
            prop_assert_eq!(replay.call(&req).unwrap(), response);
        }
    }
}
