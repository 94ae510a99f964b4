use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Instant;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};

use super::{Backend, BackendError, CacheKey, GenerationRequest, GenerationResponse};

#[derive(Debug, Serialize, Deserialize)]
struct CacheEntry {
    key: String,
    model_id: String,
    temperature: f64,
    attempt: u32,
    raw_text: String,
    backend_id: String,
}

/// Content-addressed on-disk response cache, one JSON file per key.
/// Writes go to a temporary file that is renamed into place.
pub struct CachedBackend<B> {
    inner: B,
    dir: PathBuf,
    hits: AtomicUsize,
    misses: AtomicUsize,
    writes: AtomicUsize,
}

impl<B: Backend> CachedBackend<B> {
    pub fn new(inner: B, dir: impl Into<PathBuf>) -> Result<Self, BackendError> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(|e| BackendError::Cache(format!("{}: {e}", dir.display())))?;
        Ok(Self {
            inner,
            dir,
            hits: AtomicUsize::new(0),
            misses: AtomicUsize::new(0),
            writes: AtomicUsize::new(0),
        })
    }

    pub fn inner(&self) -> &B {
        &self.inner
    }

    pub fn hits(&self) -> usize {
        self.hits.load(Ordering::Relaxed)
    }

    pub fn misses(&self) -> usize {
        self.misses.load(Ordering::Relaxed)
    }

    pub fn writes(&self) -> usize {
        self.writes.load(Ordering::Relaxed)
    }

    fn path_for(&self, key: &CacheKey) -> PathBuf {
        self.dir.join(&key.0[..2]).join(format!("{}.json", key.0))
    }

    fn read(&self, path: &Path, key: &CacheKey) -> Option<CacheEntry> {
        let bytes = fs::read(path).ok()?;
        match serde_json::from_slice::<CacheEntry>(&bytes) {
            Ok(e) if e.key == key.0 => Some(e),
            _ => {
                tracing::warn!(path = %path.display(), "ignoring unreadable cache entry");
                None
            }
        }
    }

    fn write(&self, path: &Path, entry: &CacheEntry) -> Result<(), BackendError> {
        let err = |e: std::io::Error| BackendError::Cache(format!("{}: {e}", path.display()));
        let parent = path.parent().expect("cache path has a parent");
        fs::create_dir_all(parent).map_err(err)?;
        let mut tmp = tempfile::NamedTempFile::new_in(parent).map_err(err)?;
        serde_json::to_writer(&mut tmp, entry).map_err(|e| BackendError::Cache(e.to_string()))?;
        tmp.flush().map_err(err)?;
        tmp.persist(path).map_err(|e| err(e.error))?;
        self.writes.fetch_add(1, Ordering::Relaxed);
        Ok(())
    }
}

#[async_trait]
impl<B: Backend> Backend for CachedBackend<B> {
    fn backend_id(&self) -> String {
        self.inner.backend_id()
    }

    async fn generate(&self, req: &GenerationRequest) -> Result<GenerationResponse, BackendError> {
        req.validate()?;
        let started = Instant::now();
        let key = req.cache_key();
        let path = self.path_for(&key);
        if let Some(entry) = self.read(&path, &key) {
            self.hits.fetch_add(1, Ordering::Relaxed);
            return Ok(GenerationResponse {
                raw_text: entry.raw_text,
                latency_ms: started.elapsed().as_millis() as u64,
                cache_hit: true,
                backend_id: entry.backend_id,
            });
        }
        self.misses.fetch_add(1, Ordering::Relaxed);
        let resp = self.inner.generate(req).await?;
        self.write(
            &path,
            &CacheEntry {
                key: key.0.clone(),
                model_id: req.model_id.clone(),
                temperature: req.temperature,
                attempt: req.attempt,
                raw_text: resp.raw_text.clone(),
                backend_id: resp.backend_id.clone(),
            },
        )?;
        Ok(resp)
    }

    fn network_calls(&self) -> usize {
        self.inner.network_calls()
    }
}
