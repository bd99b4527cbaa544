//! On-disk completion cache.
//!
//! Entries are keyed by the SHA-256 of the canonical request JSON (model,
//! messages, sampling params, sample index). Each entry is two files named
//! by the hex digest: `<key>.txt` holds the raw response text and
//! `<key>.json` a metadata sidecar (model, creation time, token counts,
//! latency). A hit replays the stored telemetry, so a cached run serializes
//! exactly like the run that filled the cache.

use std::collections::HashMap;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use super::{
    canonical_request_json, text_digest, BackendError, BackendInfo, Completion,
    CompletionBackend, CompletionRequest, SampleSpec,
};

#[derive(Debug, Serialize, Deserialize)]
struct Sidecar {
    model: String,
    created_unix: u64,
    prompt_tokens: Option<u32>,
    completion_tokens: Option<u32>,
    latency_ms: u64,
}

/// Directory of cached completions.
#[derive(Debug)]
pub struct CacheStore {
    dir: PathBuf,
    tmp_counter: AtomicU64,
}

impl CacheStore {
    pub fn open(dir: impl Into<PathBuf>) -> io::Result<Self> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir)?;
        Ok(CacheStore { dir, tmp_counter: AtomicU64::new(0) })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn text_path(&self, key: &str) -> PathBuf {
        self.dir.join(format!("{key}.txt"))
    }

    fn meta_path(&self, key: &str) -> PathBuf {
        self.dir.join(format!("{key}.json"))
    }

    /// Look up an entry. Any unreadable or corrupt entry is a miss.
    pub fn get(&self, key: &str) -> Option<Completion> {
        let text = std::fs::read_to_string(self.text_path(key)).ok()?;
        let raw_meta = match std::fs::read_to_string(self.meta_path(key)) {
            Ok(raw) => raw,
            Err(e) => {
                log::warn!("cache entry {key} has no readable sidecar ({e}); treating as miss");
                return None;
            }
        };
        let meta: Sidecar = match serde_json::from_str(&raw_meta) {
            Ok(meta) => meta,
            Err(e) => {
                log::warn!("cache entry {key} has a corrupt sidecar ({e}); treating as miss");
                return None;
            }
        };
        Some(Completion {
            text,
            prompt_tokens: meta.prompt_tokens,
            completion_tokens: meta.completion_tokens,
            latency_ms: meta.latency_ms,
        })
    }

    /// Store an entry. Writes go to a temporary file first and are renamed
    /// into place, so readers never observe a half-written entry.
    pub fn put(&self, key: &str, model: &str, completion: &Completion) -> io::Result<()> {
        let meta = Sidecar {
            model: model.to_string(),
            created_unix: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
            prompt_tokens: completion.prompt_tokens,
            completion_tokens: completion.completion_tokens,
            latency_ms: completion.latency_ms,
        };
        self.write_atomic(&self.text_path(key), completion.text.as_bytes())?;
        self.write_atomic(
            &self.meta_path(key),
            serde_json::to_string_pretty(&meta).expect("sidecar serializes").as_bytes(),
        )
    }

    fn write_atomic(&self, path: &Path, bytes: &[u8]) -> io::Result<()> {
        let unique = self.tmp_counter.fetch_add(1, Ordering::Relaxed);
        let tmp = self.dir.join(format!(".tmp-{}-{unique}", std::process::id()));
        std::fs::write(&tmp, bytes)?;
        std::fs::rename(&tmp, path)
    }

    /// Number of stored entries.
    pub fn entry_count(&self) -> usize {
        let Ok(entries) = std::fs::read_dir(&self.dir) else { return 0 };
        entries
            .filter_map(|e| e.ok())
            .filter(|e| e.path().extension().is_some_and(|ext| ext == "txt"))
            .count()
    }
}

/// Wraps any backend with the read-through cache in [`CacheStore`].
///
/// `SampleSpec::Index` requests are cached under exactly that index.
/// `SampleSpec::Auto` requests are numbered per request shape in arrival
/// order, so repeating the same prompt fetches fresh samples within one
/// process but replays them on the next.
pub struct CachedBackend<B> {
    inner: B,
    store: CacheStore,
    auto_counters: Mutex<HashMap<String, u32>>,
    hits: AtomicUsize,
    misses: AtomicUsize,
}

impl<B: CompletionBackend> CachedBackend<B> {
    pub fn new(inner: B, dir: impl Into<PathBuf>) -> io::Result<Self> {
        Ok(CachedBackend {
            inner,
            store: CacheStore::open(dir)?,
            auto_counters: Mutex::new(HashMap::new()),
            hits: AtomicUsize::new(0),
            misses: AtomicUsize::new(0),
        })
    }

    pub fn store(&self) -> &CacheStore {
        &self.store
    }

    pub fn inner(&self) -> &B {
        &self.inner
    }

    /// Requests answered from disk.
    pub fn hits(&self) -> usize {
        self.hits.load(Ordering::SeqCst)
    }

    /// Requests forwarded to the wrapped backend.
    pub fn misses(&self) -> usize {
        self.misses.load(Ordering::SeqCst)
    }

    fn resolve_index(&self, request: &CompletionRequest<'_>, model: &str) -> u32 {
        match request.sample {
            SampleSpec::Index(i) => i,
            SampleSpec::Auto => {
                let shape =
                    canonical_request_json(model, request.messages, request.params, None);
                let mut counters = self.auto_counters.lock().expect("counters poisoned");
                let counter = counters.entry(text_digest(&shape)).or_insert(0);
                let index = *counter;
                *counter += 1;
                index
            }
        }
    }
}

impl<B: CompletionBackend> CompletionBackend for CachedBackend<B> {
    fn complete(&self, request: &CompletionRequest<'_>) -> Result<Completion, BackendError> {
        let model = self.inner.info().model;
        let index = self.resolve_index(request, &model);
        let key = text_digest(&canonical_request_json(
            &model,
            request.messages,
            request.params,
            Some(index),
        ));
        if let Some(hit) = self.store.get(&key) {
            self.hits.fetch_add(1, Ordering::SeqCst);
            return Ok(hit);
        }
        let pinned = CompletionRequest {
            messages: request.messages,
            params: request.params,
            sample: SampleSpec::Index(index),
        };
        let completion = self.inner.complete(&pinned)?;
        self.misses.fetch_add(1, Ordering::SeqCst);
        if let Err(e) = self.store.put(&key, &model, &completion) {
            // A broken cache directory must not fail the run; degrade to
            // pass-through.
            log::warn!("cache write for {key} failed ({e}); continuing uncached");
        }
        Ok(completion)
    }

    fn info(&self) -> BackendInfo {
        self.inner.info()
    }
}
