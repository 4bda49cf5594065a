//! Client contracts for the external services the pipeline depends on:
//! machine translation, reference-free quality estimation, and token-level
//! log-probability scoring.
//!
//! Every batch operation is order-preserving and reports failures per item,
//! so one bad request never sinks the rest of a batch. The outer `Result`
//! is reserved for fatal misconfiguration (for example a scoring endpoint
//! that does not return log-probabilities at all).

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

mod cache;
mod http;
pub mod mock;

pub use cache::{CachedQe, CachedScorer, CachedTranslator, ResponseCache};
pub use http::{HttpQe, HttpScorer, HttpTranslator, RetryPolicy};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BackendError {
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("http status {status}: {body}")]
    Status { status: u16, body: String },
    #[error("language `{0}` is not supported by the backend")]
    UnsupportedLanguage(String),
    #[error("endpoint does not provide log-probabilities: {0}")]
    LogprobsRefused(String),
    #[error("input exceeds the backend's length limit")]
    Truncated,
    #[error("invalid response: {0}")]
    InvalidResponse(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
}

impl BackendError {
    /// Transient errors worth another attempt.
    pub fn is_retryable(&self) -> bool {
        match self {
            BackendError::Transport(_) => true,
            BackendError::Status { status, .. } => *status == 429 || *status >= 500,
            _ => false,
        }
    }

    /// Errors that invalidate the whole backend configuration.
    pub fn is_fatal(&self) -> bool {
        matches!(self, BackendError::LogprobsRefused(_))
    }
}

pub type ItemResult<T> = Result<T, BackendError>;
pub type BatchResult<T> = Result<Vec<ItemResult<T>>, BackendError>;

/// Reference-free translation quality estimate in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct QeScore(f64);

impl QeScore {
    pub fn new(value: f64) -> Result<Self, BackendError> {
        if (0.0..=1.0).contains(&value) {
            Ok(QeScore(value))
        } else {
            Err(BackendError::InvalidResponse(format!("qe score {value} outside [0, 1]")))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for QeScore {
    type Error = BackendError;
    fn try_from(v: f64) -> Result<Self, BackendError> {
        QeScore::new(v)
    }
}

impl From<QeScore> for f64 {
    fn from(q: QeScore) -> f64 {
        q.0
    }
}

/// Per-token natural-log probabilities for one text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawLogprobs")]
pub struct TokenLogprobs {
    tokens: Vec<String>,
    logprobs: Vec<f64>,
}

#[derive(Deserialize)]
struct RawLogprobs {
    tokens: Vec<String>,
    logprobs: Vec<f64>,
}

impl TryFrom<RawLogprobs> for TokenLogprobs {
    type Error = BackendError;
    fn try_from(r: RawLogprobs) -> Result<Self, BackendError> {
        TokenLogprobs::new(r.tokens, r.logprobs)
    }
}

impl TokenLogprobs {
    pub fn new(tokens: Vec<String>, logprobs: Vec<f64>) -> Result<Self, BackendError> {
        if tokens.len() != logprobs.len() {
            return Err(BackendError::InvalidResponse(format!(
                "{} tokens but {} logprobs",
                tokens.len(),
                logprobs.len()
            )));
        }
        if tokens.is_empty() {
            return Err(BackendError::InvalidResponse("no scored tokens".into()));
        }
        if let Some(bad) = logprobs.iter().find(|lp| !(lp.is_finite() && **lp <= 0.0)) {
            return Err(BackendError::InvalidResponse(format!("invalid logprob {bad}")));
        }
        Ok(TokenLogprobs { tokens, logprobs })
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn logprobs(&self) -> &[f64] {
        &self.logprobs
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// A model served behind a scoring endpoint. Decoding parameters are passed
/// through untouched; an empty map means the model's defaults.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelRef {
    pub model_id: String,
    #[serde(default)]
    pub endpoint: Option<String>,
    #[serde(default)]
    pub params: BTreeMap<String, String>,
}

impl ModelRef {
    pub fn new(model_id: impl Into<String>) -> Self {
        ModelRef {
            model_id: model_id.into(),
            endpoint: None,
            params: BTreeMap::new(),
        }
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        if self.model_id.trim().is_empty() {
            Err(BackendError::Precondition("empty model id".into()))
        } else {
            Ok(())
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QePair {
    pub src: String,
    pub mt: String,
}

impl QePair {
    pub fn new(src: impl Into<String>, mt: impl Into<String>) -> Self {
        QePair {
            src: src.into(),
            mt: mt.into(),
        }
    }
}

pub trait Translator: Send + Sync {
    fn provider_id(&self) -> String;

    fn translate_batch(&self, texts: &[String], source_lang: &str, target_lang: &str)
        -> BatchResult<String>;
}

pub trait QualityEstimator: Send + Sync {
    fn provider_id(&self) -> String;

    fn qe_batch(&self, pairs: &[QePair], target_lang: &str) -> BatchResult<QeScore>;
}

pub trait Scorer: Send + Sync {
    fn provider_id(&self) -> String;

    /// How the first token is conditioned (e.g. on a begin-of-sequence
    /// marker). Recorded alongside scores.
    fn conditioning(&self) -> String {
        "unspecified".into()
    }

    fn score_batch(&self, texts: &[String], model: &ModelRef) -> BatchResult<TokenLogprobs>;
}

impl<T: Translator + ?Sized> Translator for std::sync::Arc<T> {
    fn provider_id(&self) -> String {
        (**self).provider_id()
    }
    fn translate_batch(&self, texts: &[String], s: &str, t: &str) -> BatchResult<String> {
        (**self).translate_batch(texts, s, t)
    }
}

impl<T: QualityEstimator + ?Sized> QualityEstimator for std::sync::Arc<T> {
    fn provider_id(&self) -> String {
        (**self).provider_id()
    }
    fn qe_batch(&self, pairs: &[QePair], t: &str) -> BatchResult<QeScore> {
        (**self).qe_batch(pairs, t)
    }
}

impl<T: Scorer + ?Sized> Scorer for std::sync::Arc<T> {
    fn provider_id(&self) -> String {
        (**self).provider_id()
    }
    fn conditioning(&self) -> String {
        (**self).conditioning()
    }
    fn score_batch(&self, texts: &[String], model: &ModelRef) -> BatchResult<TokenLogprobs> {
        (**self).score_batch(texts, model)
    }
}

/// Splits `items` into chunks of `chunk_size` and runs `f` over them with at
/// most `max_inflight` chunks in flight. Results come back in input order.
pub fn run_chunked<T, R, F>(items: &[T], chunk_size: usize, max_inflight: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&[T]) -> Vec<R> + Sync,
{
    let chunks: Vec<&[T]> = items.chunks(chunk_size.max(1)).collect();
    if chunks.len() <= 1 || max_inflight <= 1 {
        return chunks.into_iter().flat_map(&f).collect();
    }
    let slots: Vec<Mutex<Option<Vec<R>>>> = chunks.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    std::thread::scope(|scope| {
        for _ in 0..max_inflight.min(chunks.len()) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(chunk) = chunks.get(i) else { break };
                let out = f(chunk);
                *slots[i].lock().expect("slot lock") = Some(out);
            });
        }
    });
    slots
        .into_iter()
        .flat_map(|s| s.into_inner().expect("slot lock").expect("chunk processed"))
        .collect()
}
