//! JSON-over-HTTP clients.
//!
//! | service   | request                                               | response                                         |
//! |-----------|-------------------------------------------------------|--------------------------------------------------|
//! | translate | `POST /translate {source_lang, target_lang, texts}`   | `{translations: [str]}`                          |
//! | qe        | `POST /qe {target_lang, pairs: [{src, mt}]}`          | `{scores: [num]}`, 422 `{error: "unsupported_language"}` |
//! | score     | `POST /score {model, texts}`                          | `{results: [{tokens, logprobs}]}`                |

use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::{
    run_chunked, BackendError, BatchResult, ItemResult, ModelRef, QePair, QeScore,
    QualityEstimator, Scorer, TokenLogprobs, Translator,
};

/// Bounded exponential backoff for idempotent requests.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub base_delay_ms: u64,
    pub max_delay_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_retries: 3,
            base_delay_ms: 250,
            max_delay_ms: 8_000,
        }
    }
}

impl RetryPolicy {
    pub fn none() -> Self {
        RetryPolicy {
            max_retries: 0,
            base_delay_ms: 0,
            max_delay_ms: 0,
        }
    }

    pub fn delay(&self, attempt: u32) -> Duration {
        let ms = self
            .base_delay_ms
            .saturating_mul(1u64 << attempt.min(20))
            .min(self.max_delay_ms);
        Duration::from_millis(ms)
    }

    fn run<T>(&self, mut op: impl FnMut() -> ItemResult<T>) -> ItemResult<T> {
        let mut attempt = 0;
        loop {
            match op() {
                Err(e) if e.is_retryable() && attempt < self.max_retries => {
                    tracing::debug!(attempt, error = %e, "retrying request");
                    std::thread::sleep(self.delay(attempt));
                    attempt += 1;
                }
                other => return other,
            }
        }
    }
}

#[derive(Debug, Clone)]
struct Endpoint {
    base_url: String,
    api_key: Option<String>,
    batch_size: usize,
    max_inflight: usize,
    retry: RetryPolicy,
    client: reqwest::blocking::Client,
}

impl Endpoint {
    fn new(base_url: &str) -> Self {
        Endpoint {
            base_url: base_url.trim_end_matches('/').to_string(),
            api_key: None,
            batch_size: 32,
            max_inflight: 4,
            retry: RetryPolicy::default(),
            client: reqwest::blocking::Client::builder()
                .timeout(Duration::from_secs(120))
                .build()
                .expect("http client"),
        }
    }

    fn post_once<B: Serialize, R: DeserializeOwned>(&self, path: &str, body: &B) -> ItemResult<R> {
        let mut req = self.client.post(format!("{}{path}", self.base_url)).json(body);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| BackendError::Transport(e.to_string()))?;
        let status = resp.status();
        let text = resp.text().map_err(|e| BackendError::Transport(e.to_string()))?;
        if !status.is_success() {
            return Err(BackendError::Status {
                status: status.as_u16(),
                body: text,
            });
        }
        serde_json::from_str(&text).map_err(|e| BackendError::InvalidResponse(e.to_string()))
    }

    fn post<B: Serialize, R: DeserializeOwned>(&self, path: &str, body: &B) -> ItemResult<R> {
        self.retry.run(|| self.post_once(path, body))
    }

    /// Sends `items` in chunks; a failed chunk is retried item by item so
    /// that one bad input only fails itself.
    fn batched<T, R, F>(&self, items: &[T], request: F) -> BatchResult<R>
    where
        T: Sync + Clone,
        R: Send,
        F: Fn(&[T]) -> ItemResult<Vec<ItemResult<R>>> + Sync,
    {
        let out = run_chunked(items, self.batch_size, self.max_inflight, |chunk| {
            match request(chunk) {
                Ok(results) if results.len() == chunk.len() => results,
                Ok(results) => {
                    let e = BackendError::InvalidResponse(format!(
                        "{} results for {} inputs",
                        results.len(),
                        chunk.len()
                    ));
                    chunk.iter().map(|_| Err(e.clone())).collect()
                }
                Err(e) if e.is_fatal() || chunk.len() == 1 => {
                    chunk.iter().map(|_| Err(e.clone())).collect()
                }
                Err(_) => chunk
                    .iter()
                    .map(|item| match request(std::slice::from_ref(item)) {
                        Ok(mut r) if r.len() == 1 => r.pop().expect("one result"),
                        Ok(r) => Err(BackendError::InvalidResponse(format!(
                            "{} results for 1 input",
                            r.len()
                        ))),
                        Err(e) => Err(e),
                    })
                    .collect(),
            }
        });
        if let Some(Err(fatal)) = out.iter().find(|r| matches!(r, Err(e) if e.is_fatal())) {
            return Err(fatal.clone());
        }
        Ok(out)
    }
}

macro_rules! endpoint_builders {
    ($ty:ty) => {
        impl $ty {
            pub fn with_api_key(mut self, key: impl Into<String>) -> Self {
                self.endpoint.api_key = Some(key.into());
                self
            }

            pub fn with_batch_size(mut self, n: usize) -> Self {
                self.endpoint.batch_size = n.max(1);
                self
            }

            pub fn with_max_inflight(mut self, n: usize) -> Self {
                self.endpoint.max_inflight = n.max(1);
                self
            }

            pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
                self.endpoint.retry = retry;
                self
            }

            pub fn base_url(&self) -> &str {
                &self.endpoint.base_url
            }
        }
    };
}

#[derive(Serialize)]
struct TranslateRequest<'a> {
    source_lang: &'a str,
    target_lang: &'a str,
    texts: &'a [String],
}

#[derive(Deserialize)]
struct TranslateResponse {
    translations: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct HttpTranslator {
    endpoint: Endpoint,
    provider: String,
}

impl HttpTranslator {
    pub fn new(base_url: &str, provider: impl Into<String>) -> Self {
        HttpTranslator {
            endpoint: Endpoint::new(base_url),
            provider: provider.into(),
        }
    }
}

endpoint_builders!(HttpTranslator);

impl Translator for HttpTranslator {
    fn provider_id(&self) -> String {
        self.provider.clone()
    }

    fn translate_batch(&self, texts: &[String], src: &str, tgt: &str) -> BatchResult<String> {
        self.endpoint.batched(texts, |chunk| {
            let body = TranslateRequest {
                source_lang: src,
                target_lang: tgt,
                texts: chunk,
            };
            let r: TranslateResponse = self.endpoint.post("/translate", &body)?;
            Ok(r.translations.into_iter().map(Ok).collect())
        })
    }
}

#[derive(Serialize)]
struct QeRequest<'a> {
    target_lang: &'a str,
    pairs: &'a [QePair],
}

#[derive(Deserialize)]
struct QeResponse {
    scores: Vec<f64>,
}

#[derive(Deserialize)]
struct ErrorBody {
    error: String,
}

#[derive(Debug, Clone)]
pub struct HttpQe {
    endpoint: Endpoint,
    provider: String,
}

impl HttpQe {
    pub fn new(base_url: &str, provider: impl Into<String>) -> Self {
        HttpQe {
            endpoint: Endpoint::new(base_url),
            provider: provider.into(),
        }
    }
}

endpoint_builders!(HttpQe);

impl QualityEstimator for HttpQe {
    fn provider_id(&self) -> String {
        self.provider.clone()
    }

    fn qe_batch(&self, pairs: &[QePair], tgt: &str) -> BatchResult<QeScore> {
        self.endpoint.batched(pairs, |chunk| {
            let body = QeRequest {
                target_lang: tgt,
                pairs: chunk,
            };
            match self.endpoint.post::<_, QeResponse>("/qe", &body) {
                Ok(r) => Ok(r.scores.into_iter().map(QeScore::new).collect()),
                Err(BackendError::Status { status: 422, body })
                    if serde_json::from_str::<ErrorBody>(&body)
                        .is_ok_and(|b| b.error == "unsupported_language") =>
                {
                    let e = BackendError::UnsupportedLanguage(tgt.to_string());
                    Ok(chunk.iter().map(|_| Err(e.clone())).collect())
                }
                Err(e) => Err(e),
            }
        })
    }
}

#[derive(Serialize)]
struct ScoreRequest<'a> {
    model: &'a str,
    texts: &'a [String],
}

#[derive(Deserialize)]
struct ScoreResponse {
    results: Vec<ScoreResult>,
}

#[derive(Deserialize)]
struct ScoreResult {
    #[serde(default)]
    tokens: Option<Vec<String>>,
    #[serde(default)]
    logprobs: Option<Vec<f64>>,
    #[serde(default)]
    truncated: bool,
}

#[derive(Debug, Clone)]
pub struct HttpScorer {
    endpoint: Endpoint,
    provider: String,
    conditioning: String,
}

impl HttpScorer {
    pub fn new(base_url: &str, provider: impl Into<String>) -> Self {
        HttpScorer {
            endpoint: Endpoint::new(base_url),
            provider: provider.into(),
            conditioning: "declared by endpoint /meta".into(),
        }
    }

    pub fn with_conditioning(mut self, c: impl Into<String>) -> Self {
        self.conditioning = c.into();
        self
    }
}

endpoint_builders!(HttpScorer);

impl Scorer for HttpScorer {
    fn provider_id(&self) -> String {
        self.provider.clone()
    }

    fn conditioning(&self) -> String {
        self.conditioning.clone()
    }

    fn score_batch(&self, texts: &[String], model: &ModelRef) -> BatchResult<TokenLogprobs> {
        model.validate()?;
        let endpoint = match &model.endpoint {
            Some(url) => {
                let mut e = self.endpoint.clone();
                e.base_url = url.trim_end_matches('/').to_string();
                e
            }
            None => self.endpoint.clone(),
        };
        // Empty texts never leave the process.
        let sendable: Vec<(usize, String)> = texts
            .iter()
            .enumerate()
            .filter(|(_, t)| !t.is_empty())
            .map(|(i, t)| (i, t.clone()))
            .collect();
        let scored = endpoint.batched(&sendable, |chunk| {
            let batch: Vec<String> = chunk.iter().map(|(_, t)| t.clone()).collect();
            let body = ScoreRequest {
                model: &model.model_id,
                texts: &batch,
            };
            let r: ScoreResponse = match endpoint.post("/score", &body) {
                Err(BackendError::Status { status: 413, .. }) => return Err(BackendError::Truncated),
                other => other?,
            };
            Ok(r.results.into_iter().map(into_logprobs).collect())
        })?;
        let mut out: Vec<ItemResult<TokenLogprobs>> = texts
            .iter()
            .map(|_| Err(BackendError::Precondition("empty text".into())))
            .collect();
        for ((i, _), r) in sendable.into_iter().zip(scored) {
            out[i] = r;
        }
        Ok(out)
    }
}

fn into_logprobs(r: ScoreResult) -> ItemResult<TokenLogprobs> {
    if r.truncated {
        return Err(BackendError::Truncated);
    }
    match (r.tokens, r.logprobs) {
        (Some(tokens), Some(lps)) => TokenLogprobs::new(tokens, lps),
        _ => Err(BackendError::LogprobsRefused("result without tokens/logprobs".into())),
    }
}
