//! In-process backends for tests, examples and offline dry runs.
//!
//! The `Fn*` backends wrap a closure. The `Fixture*` backends are
//! deterministic stand-ins driven by a content hash, so a whole pipeline can
//! be exercised without network access and with reproducible output.

use std::collections::BTreeSet;
use std::sync::atomic::{AtomicUsize, Ordering};

use sha2::{Digest, Sha256};

use super::{
    BackendError, BatchResult, ItemResult, ModelRef, QePair, QeScore, QualityEstimator, Scorer,
    TokenLogprobs, Translator,
};
use crate::templating::TemplateRegistry;

pub(crate) fn stable_u64(parts: &[&str]) -> u64 {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p.as_bytes());
    }
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
}

fn unit(parts: &[&str]) -> f64 {
    (stable_u64(parts) >> 11) as f64 / (1u64 << 53) as f64
}

/// Translator backed by a closure `(text, source_lang, target_lang)`.
pub struct FnTranslator<F> {
    id: String,
    f: F,
    calls: AtomicUsize,
}

impl<F> FnTranslator<F>
where
    F: Fn(&str, &str, &str) -> ItemResult<String> + Send + Sync,
{
    pub fn new(id: impl Into<String>, f: F) -> Self {
        FnTranslator {
            id: id.into(),
            f,
            calls: AtomicUsize::new(0),
        }
    }

    /// Number of texts sent to this backend so far.
    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl<F> Translator for FnTranslator<F>
where
    F: Fn(&str, &str, &str) -> ItemResult<String> + Send + Sync,
{
    fn provider_id(&self) -> String {
        self.id.clone()
    }

    fn translate_batch(&self, texts: &[String], src: &str, tgt: &str) -> BatchResult<String> {
        self.calls.fetch_add(texts.len(), Ordering::SeqCst);
        Ok(texts.iter().map(|t| (self.f)(t, src, tgt)).collect())
    }
}

/// Quality estimator backed by a closure `(pair, target_lang)`.
pub struct FnQe<F> {
    id: String,
    f: F,
    calls: AtomicUsize,
}

impl<F> FnQe<F>
where
    F: Fn(&QePair, &str) -> ItemResult<QeScore> + Send + Sync,
{
    pub fn new(id: impl Into<String>, f: F) -> Self {
        FnQe {
            id: id.into(),
            f,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl<F> QualityEstimator for FnQe<F>
where
    F: Fn(&QePair, &str) -> ItemResult<QeScore> + Send + Sync,
{
    fn provider_id(&self) -> String {
        self.id.clone()
    }

    fn qe_batch(&self, pairs: &[QePair], tgt: &str) -> BatchResult<QeScore> {
        self.calls.fetch_add(pairs.len(), Ordering::SeqCst);
        Ok(pairs.iter().map(|p| (self.f)(p, tgt)).collect())
    }
}

/// Scorer that treats every `char` as a token, with a closure giving the
/// log-probability of `(token, position)`.
pub struct CharScorer<F> {
    f: F,
    calls: AtomicUsize,
}

impl CharScorer<fn(&str, usize) -> f64> {
    pub fn constant(logprob: f64) -> CharScorer<impl Fn(&str, usize) -> f64 + Send + Sync> {
        CharScorer::new(move |_: &str, _: usize| logprob)
    }
}

impl<F> CharScorer<F>
where
    F: Fn(&str, usize) -> f64 + Send + Sync,
{
    pub fn new(f: F) -> Self {
        CharScorer {
            f,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl<F> Scorer for CharScorer<F>
where
    F: Fn(&str, usize) -> f64 + Send + Sync,
{
    fn provider_id(&self) -> String {
        "char-mock".into()
    }

    fn conditioning(&self) -> String {
        "first token unconditioned".into()
    }

    fn score_batch(&self, texts: &[String], model: &ModelRef) -> BatchResult<TokenLogprobs> {
        model.validate()?;
        self.calls.fetch_add(texts.len(), Ordering::SeqCst);
        Ok(texts
            .iter()
            .map(|t| {
                if t.is_empty() {
                    return Err(BackendError::Precondition("empty text".into()));
                }
                let tokens: Vec<String> = t.chars().map(String::from).collect();
                let lps = tokens.iter().enumerate().map(|(i, tok)| (self.f)(tok, i)).collect();
                TokenLogprobs::new(tokens, lps)
            })
            .collect())
    }
}

/// Deterministic fake translator.
///
/// A sentence wrapped in one of the target profile's initial templates comes
/// back as `[lang] man|woman: <open>inner<close>` using the profile's primary
/// quotes. The inner translation is the source text prefixed with the
/// language code, and a content hash decides how gender shows up in it:
/// unchanged (neutral), a one-letter suffix on the last word (gendered), or an
/// extra word on the feminine side (too different to pair). Unwrapped text is
/// translated as the plain inner translation.
pub struct FixtureTranslator {
    registry: TemplateRegistry,
    failure_permille: u64,
    calls: AtomicUsize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FixtureGenderClass {
    Neutral,
    Gendered,
    Divergent,
}

impl FixtureTranslator {
    pub fn new(registry: TemplateRegistry) -> Self {
        FixtureTranslator {
            registry,
            failure_permille: 0,
            calls: AtomicUsize::new(0),
        }
    }

    /// Makes roughly `permille`/1000 of the requests fail with a transport error.
    pub fn with_failures(mut self, permille: u64) -> Self {
        self.failure_permille = permille;
        self
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn gender_class(text: &str, target_lang: &str) -> FixtureGenderClass {
        match stable_u64(&["class", target_lang, text]) % 100 {
            0..=54 => FixtureGenderClass::Neutral,
            55..=84 => FixtureGenderClass::Gendered,
            _ => FixtureGenderClass::Divergent,
        }
    }

    fn inner(text: &str, tgt: &str, masculine: bool, gendered_lang: bool) -> String {
        let base = format!("[{tgt}] {text}");
        if !gendered_lang {
            return base;
        }
        match Self::gender_class(text, tgt) {
            FixtureGenderClass::Neutral => base,
            FixtureGenderClass::Gendered => {
                let trimmed = base.trim_end_matches(|c: char| c.is_ascii_punctuation());
                let punct = &base[trimmed.len()..];
                let suffix = if masculine { "o" } else { "a" };
                format!("{trimmed}{suffix}{punct}")
            }
            FixtureGenderClass::Divergent if masculine => base,
            FixtureGenderClass::Divergent => format!("{base} ella"),
        }
    }

    fn translate_one(&self, text: &str, tgt: &str) -> ItemResult<String> {
        if self.failure_permille > 0
            && stable_u64(&["fail", tgt, text]) % 1000 < self.failure_permille
        {
            return Err(BackendError::Transport("simulated outage".into()));
        }
        let profile = self
            .registry
            .get(tgt)
            .map_err(|_| BackendError::UnsupportedLanguage(tgt.to_string()))?;
        let t = &profile.templates;
        let wrapped = t
            .initial_masc
            .match_region(text)
            .map(|s| (s, true))
            .or_else(|| t.initial_fem.match_region(text).map(|s| (s, false)));
        match wrapped {
            Some((inner, masculine)) => {
                let (open, close) = profile.primary_quotes();
                let who = if masculine { "man" } else { "woman" };
                let inner = Self::inner(inner, tgt, masculine, profile.gendered_morphology);
                Ok(format!("[{tgt}] {who}: {open}{inner}{close}"))
            }
            None => Ok(Self::inner(text, tgt, true, false)),
        }
    }
}

impl Translator for FixtureTranslator {
    fn provider_id(&self) -> String {
        "fixture-translator".into()
    }

    fn translate_batch(&self, texts: &[String], _src: &str, tgt: &str) -> BatchResult<String> {
        self.calls.fetch_add(texts.len(), Ordering::SeqCst);
        Ok(texts.iter().map(|t| self.translate_one(t, tgt)).collect())
    }
}

/// Deterministic fake quality estimator: 1.0 when the translation equals the
/// source, 0.0 for an empty translation, otherwise a hash-derived value in
/// `[low, high]`. Languages in the unsupported set are refused.
pub struct FixtureQe {
    low: f64,
    high: f64,
    unsupported: BTreeSet<String>,
    calls: AtomicUsize,
}

impl FixtureQe {
    pub fn new(low: f64, high: f64) -> Self {
        assert!((0.0..=high).contains(&low) && high <= 1.0, "bad fixture qe range");
        FixtureQe {
            low,
            high,
            unsupported: BTreeSet::new(),
            calls: AtomicUsize::new(0),
        }
    }

    /// Every non-identity pair gets `value`.
    pub fn constant(value: f64) -> Self {
        Self::new(value, value)
    }

    pub fn with_unsupported<I, S>(mut self, langs: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.unsupported.extend(langs.into_iter().map(Into::into));
        self
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl Default for FixtureQe {
    fn default() -> Self {
        FixtureQe::new(0.80, 1.0).with_unsupported(["mt"])
    }
}

impl QualityEstimator for FixtureQe {
    fn provider_id(&self) -> String {
        "fixture-qe".into()
    }

    fn qe_batch(&self, pairs: &[QePair], tgt: &str) -> BatchResult<QeScore> {
        self.calls.fetch_add(pairs.len(), Ordering::SeqCst);
        if self.unsupported.contains(tgt) {
            return Ok(pairs
                .iter()
                .map(|_| Err(BackendError::UnsupportedLanguage(tgt.to_string())))
                .collect());
        }
        Ok(pairs
            .iter()
            .map(|p| {
                let v = if p.mt.is_empty() {
                    0.0
                } else if p.mt == p.src {
                    1.0
                } else {
                    self.low + (self.high - self.low) * unit(&["qe", tgt, &p.src, &p.mt])
                };
                QeScore::new(v)
            })
            .collect())
    }
}

/// Deterministic fake language model. Tokens are whitespace-led word pieces
/// (their concatenation is the input text) and each token's log-probability
/// is a hash of `(model, token)` in `[-3.2, -0.2)`.
#[derive(Default)]
pub struct FixtureScorer {
    calls: AtomicUsize,
}

impl FixtureScorer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn tokenize(text: &str) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        let mut cur = String::new();
        let mut prev_space = false;
        for c in text.chars() {
            let space = c.is_whitespace();
            if !space && prev_space && !cur.trim().is_empty() {
                out.push(std::mem::take(&mut cur));
            }
            cur.push(c);
            prev_space = space;
        }
        if !cur.is_empty() {
            out.push(cur);
        }
        out
    }
}

impl Scorer for FixtureScorer {
    fn provider_id(&self) -> String {
        "fixture-scorer".into()
    }

    fn conditioning(&self) -> String {
        "first token unconditioned".into()
    }

    fn score_batch(&self, texts: &[String], model: &ModelRef) -> BatchResult<TokenLogprobs> {
        model.validate()?;
        self.calls.fetch_add(texts.len(), Ordering::SeqCst);
        Ok(texts
            .iter()
            .map(|t| {
                if t.is_empty() {
                    return Err(BackendError::Precondition("empty text".into()));
                }
                let tokens = Self::tokenize(t);
                let lps = tokens
                    .iter()
                    .map(|tok| -0.2 - 3.0 * unit(&["lp", &model.model_id, tok]))
                    .collect();
                TokenLogprobs::new(tokens, lps)
            })
            .collect())
    }
}
