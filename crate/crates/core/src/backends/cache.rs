use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use serde::de::DeserializeOwned;
use serde::Serialize;
use sha2::{Digest, Sha256};

use super::{
    BatchResult, ItemResult, ModelRef, QePair, QeScore, QualityEstimator, Scorer, TokenLogprobs,
    Translator,
};

/// Content-addressed store of successful backend responses.
///
/// Entries live in memory and, when a directory is configured, on disk as
/// `<dir>/<service>/<aa>/<digest>.json`.
#[derive(Debug, Default)]
pub struct ResponseCache {
    dir: Option<PathBuf>,
    mem: Mutex<HashMap<String, String>>,
}

impl ResponseCache {
    pub fn in_memory() -> Self {
        Self::default()
    }

    pub fn on_disk(dir: impl Into<PathBuf>) -> Self {
        ResponseCache {
            dir: Some(dir.into()),
            mem: Mutex::default(),
        }
    }

    pub fn dir(&self) -> Option<&Path> {
        self.dir.as_deref()
    }

    /// Digest of a request: service kind, provider, parameters and text.
    pub fn key(service: &str, provider: &str, params: &[&str], text: &str) -> String {
        let mut h = Sha256::new();
        for part in [service, provider].into_iter().chain(params.iter().copied()).chain([text]) {
            h.update((part.len() as u64).to_le_bytes());
            h.update(part.as_bytes());
        }
        hex::encode(h.finalize())
    }

    fn path(&self, service: &str, key: &str) -> Option<PathBuf> {
        self.dir
            .as_ref()
            .map(|d| d.join(service).join(&key[..2]).join(format!("{key}.json")))
    }

    pub fn get<T: DeserializeOwned>(&self, service: &str, key: &str) -> Option<T> {
        if let Some(raw) = self.mem.lock().expect("cache lock").get(key) {
            return serde_json::from_str(raw).ok();
        }
        let raw = std::fs::read_to_string(self.path(service, key)?).ok()?;
        let value = serde_json::from_str(&raw).ok()?;
        self.mem.lock().expect("cache lock").insert(key.to_string(), raw);
        Some(value)
    }

    pub fn put<T: Serialize>(&self, service: &str, key: &str, value: &T) {
        let Ok(raw) = serde_json::to_string(value) else { return };
        if let Some(path) = self.path(service, key) {
            if let Err(e) = write_atomic(&path, raw.as_bytes()) {
                tracing::warn!(path = %path.display(), error = %e, "failed to persist cache entry");
            }
        }
        self.mem.lock().expect("cache lock").insert(key.to_string(), raw);
    }

    pub fn len(&self) -> usize {
        self.mem.lock().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let parent = path.parent().expect("cache path has a parent");
    std::fs::create_dir_all(parent)?;
    let tmp = path.with_extension(format!("tmp{}", std::process::id()));
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(tmp, path)
}

/// Looks up every key, sends the misses to `fetch` in one batch and stores
/// the successful answers.
fn cached_batch<T, F>(
    cache: &ResponseCache,
    service: &str,
    keys: Vec<String>,
    fetch: F,
) -> BatchResult<T>
where
    T: Serialize + DeserializeOwned,
    F: FnOnce(&[usize]) -> BatchResult<T>,
{
    let mut out: Vec<Option<ItemResult<T>>> = keys
        .iter()
        .map(|k| cache.get::<T>(service, k).map(Ok))
        .collect();
    let misses: Vec<usize> = (0..keys.len()).filter(|&i| out[i].is_none()).collect();
    if !misses.is_empty() {
        let fetched = fetch(&misses)?;
        if fetched.len() != misses.len() {
            return Err(super::BackendError::InvalidResponse(format!(
                "backend returned {} results for {} inputs",
                fetched.len(),
                misses.len()
            )));
        }
        for (i, r) in misses.into_iter().zip(fetched) {
            if let Ok(v) = &r {
                cache.put(service, &keys[i], v);
            }
            out[i] = Some(r);
        }
    }
    Ok(out.into_iter().map(|r| r.expect("every slot filled")).collect())
}

pub struct CachedTranslator<T> {
    inner: T,
    cache: Arc<ResponseCache>,
}

impl<T: Translator> CachedTranslator<T> {
    pub fn new(inner: T, cache: Arc<ResponseCache>) -> Self {
        CachedTranslator { inner, cache }
    }

    pub fn inner(&self) -> &T {
        &self.inner
    }
}

impl<T: Translator> Translator for CachedTranslator<T> {
    fn provider_id(&self) -> String {
        self.inner.provider_id()
    }

    fn translate_batch(&self, texts: &[String], src: &str, tgt: &str) -> BatchResult<String> {
        let provider = self.inner.provider_id();
        let keys = texts
            .iter()
            .map(|t| ResponseCache::key("translate", &provider, &[src, tgt], t))
            .collect();
        cached_batch(&self.cache, "translate", keys, |misses| {
            let batch: Vec<String> = misses.iter().map(|&i| texts[i].clone()).collect();
            self.inner.translate_batch(&batch, src, tgt)
        })
    }
}

pub struct CachedQe<Q> {
    inner: Q,
    cache: Arc<ResponseCache>,
}

impl<Q: QualityEstimator> CachedQe<Q> {
    pub fn new(inner: Q, cache: Arc<ResponseCache>) -> Self {
        CachedQe { inner, cache }
    }

    pub fn inner(&self) -> &Q {
        &self.inner
    }
}

impl<Q: QualityEstimator> QualityEstimator for CachedQe<Q> {
    fn provider_id(&self) -> String {
        self.inner.provider_id()
    }

    fn qe_batch(&self, pairs: &[QePair], tgt: &str) -> BatchResult<QeScore> {
        let provider = self.inner.provider_id();
        let keys = pairs
            .iter()
            .map(|p| ResponseCache::key("qe", &provider, &[tgt, &p.src], &p.mt))
            .collect();
        cached_batch(&self.cache, "qe", keys, |misses| {
            let batch: Vec<QePair> = misses.iter().map(|&i| pairs[i].clone()).collect();
            self.inner.qe_batch(&batch, tgt)
        })
    }
}

pub struct CachedScorer<S> {
    inner: S,
    cache: Arc<ResponseCache>,
}

impl<S: Scorer> CachedScorer<S> {
    pub fn new(inner: S, cache: Arc<ResponseCache>) -> Self {
        CachedScorer { inner, cache }
    }

    pub fn inner(&self) -> &S {
        &self.inner
    }
}

impl<S: Scorer> Scorer for CachedScorer<S> {
    fn provider_id(&self) -> String {
        self.inner.provider_id()
    }

    fn conditioning(&self) -> String {
        self.inner.conditioning()
    }

    fn score_batch(&self, texts: &[String], model: &ModelRef) -> BatchResult<TokenLogprobs> {
        let provider = self.inner.provider_id();
        let params = serde_json::to_string(&model.params).unwrap_or_default();
        let keys = texts
            .iter()
            .map(|t| ResponseCache::key("score", &provider, &[&model.model_id, &params], t))
            .collect();
        cached_batch(&self.cache, "score", keys, |misses| {
            let batch: Vec<String> = misses.iter().map(|&i| texts[i].clone()).collect();
            self.inner.score_batch(&batch, model)
        })
    }
}
