//! Length-normalised log-likelihoods and the relative masculine likelihood
//! of each dataset entry.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::backends::{BackendError, ModelRef, Scorer, TokenLogprobs};
use crate::corpus::{write_jsonl, DatasetEntry, EntryKind};
use crate::error::{Error, Result};
use crate::templating::{
    select_template_mode, wrap_final, Gender, LanguageProfile, TemplateMode, TemplateRegistry,
};

pub const SCORE_SCHEMA_VERSION: u32 = 1;

/// How the two variants of an entry were produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScoreMode {
    /// A natively gendered minimal pair, scored as-is.
    GenderedPair,
    Noun,
    Pronoun,
}

impl ScoreMode {
    pub fn as_str(self) -> &'static str {
        match self {
            ScoreMode::GenderedPair => "gendered-pair",
            ScoreMode::Noun => "noun",
            ScoreMode::Pronoun => "pronoun",
        }
    }

    fn template(self) -> Option<TemplateMode> {
        match self {
            ScoreMode::GenderedPair => None,
            ScoreMode::Noun => Some(TemplateMode::Noun),
            ScoreMode::Pronoun => Some(TemplateMode::Pronoun),
        }
    }
}

impl fmt::Display for ScoreMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl From<TemplateMode> for ScoreMode {
    fn from(m: TemplateMode) -> Self {
        match m {
            TemplateMode::Noun => ScoreMode::Noun,
            TemplateMode::Pronoun => ScoreMode::Pronoun,
        }
    }
}

/// Mode requested for a scoring run. `Auto` scores gendered pairs directly
/// and wraps neutral sentences with pronoun templates where the language has
/// them, noun templates otherwise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModeRequest {
    GenderedPair,
    Noun,
    Pronoun,
    Auto,
}

impl std::str::FromStr for ModeRequest {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gendered-pair" => Ok(ModeRequest::GenderedPair),
            "noun" => Ok(ModeRequest::Noun),
            "pronoun" => Ok(ModeRequest::Pronoun),
            "auto" => Ok(ModeRequest::Auto),
            other => Err(Error::Config(format!("unknown mode `{other}`"))),
        }
    }
}

impl ModeRequest {
    /// The concrete mode for `entry`, or `None` when the entry is not
    /// scored under this request.
    pub fn resolve(self, entry: &DatasetEntry, profile: &LanguageProfile) -> Option<ScoreMode> {
        match (self, entry.kind) {
            (ModeRequest::GenderedPair | ModeRequest::Auto, EntryKind::Gendered) => {
                Some(ScoreMode::GenderedPair)
            }
            (ModeRequest::Auto, EntryKind::Neutral) => Some(select_template_mode(profile).into()),
            (ModeRequest::Noun, EntryKind::Neutral) => Some(ScoreMode::Noun),
            (ModeRequest::Pronoun, EntryKind::Neutral) => Some(ScoreMode::Pronoun),
            _ => None,
        }
    }

    /// Rejects requests that can never be satisfied for `profile`.
    pub fn check(self, profile: &LanguageProfile) -> Result<()> {
        if self == ModeRequest::Pronoun && !profile.pronoun_templates_available {
            return Err(Error::NoPronounTemplates(profile.code.clone()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SentenceScore {
    pub entry_id: String,
    pub model_id: String,
    pub lang: String,
    pub stereotype_id: u8,
    pub template_mode: ScoreMode,
    /// Average log-likelihood per token, in nats.
    pub ll_masc: f64,
    pub ll_fem: f64,
    pub tokens_masc: usize,
    pub tokens_fem: usize,
    pub r_masc: f64,
    pub scorer: String,
    pub conditioning: String,
}

impl SentenceScore {
    pub fn validate(&self) -> std::result::Result<(), String> {
        if self.tokens_masc == 0 || self.tokens_fem == 0 {
            return Err("zero token count".into());
        }
        if !(self.r_masc > 0.0 && self.r_masc < 1.0) {
            return Err(format!("r_masc {} outside (0, 1)", self.r_masc));
        }
        match r_masc(self.ll_masc, self.ll_fem) {
            Ok(r) if r == self.r_masc => Ok(()),
            Ok(r) => Err(format!("r_masc {} does not match log-likelihoods ({r})", self.r_masc)),
            Err(e) => Err(e.to_string()),
        }
    }
}

/// Mean per-token log-probability.
pub fn avg_loglik(tl: &TokenLogprobs) -> Result<f64> {
    mean_logprob(tl.logprobs())
}

pub fn mean_logprob(logprobs: &[f64]) -> Result<f64> {
    if logprobs.is_empty() {
        return Err(Error::Precondition("no tokens to average".into()));
    }
    Ok(logprobs.iter().sum::<f64>() / logprobs.len() as f64)
}

/// Largest double below one.
const ONE_MINUS_ULP: f64 = 1.0 - f64::EPSILON / 2.0;

fn logistic_upper(x: f64) -> f64 {
    debug_assert!(x >= 0.0);
    (1.0 / (1.0 + (-x).exp())).min(ONE_MINUS_ULP)
}

/// Logistic function with `logistic(-x) == 1 - logistic(x)` holding exactly
/// and the result kept strictly inside (0, 1).
pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        logistic_upper(x)
    } else {
        1.0 - logistic_upper(-x)
    }
}

/// Relative likelihood of the masculine variant: the logistic of the
/// difference in average log-likelihoods, masculine minus feminine.
pub fn r_masc(ll_masc_avg: f64, ll_fem_avg: f64) -> Result<f64> {
    if !ll_masc_avg.is_finite() || !ll_fem_avg.is_finite() {
        return Err(Error::Precondition(format!(
            "non-finite log-likelihood ({ll_masc_avg}, {ll_fem_avg})"
        )));
    }
    Ok(logistic(ll_masc_avg - ll_fem_avg))
}

/// The two texts scored for `entry` under `mode`.
pub fn variant_texts(
    entry: &DatasetEntry,
    mode: ScoreMode,
    profile: &LanguageProfile,
) -> Result<(String, String)> {
    match (entry.kind, mode.template()) {
        (EntryKind::Gendered, None) => Ok((entry.masc_text.clone(), entry.fem_text.clone())),
        (EntryKind::Neutral, Some(t)) => Ok((
            wrap_final(&entry.masc_text, Gender::Masculine, t, profile)?,
            wrap_final(&entry.fem_text, Gender::Feminine, t, profile)?,
        )),
        (kind, _) => Err(Error::Precondition(format!(
            "{} entry `{}` cannot be scored in {mode} mode",
            kind.as_str(),
            entry.entry_id
        ))),
    }
}

fn assemble(
    entry: &DatasetEntry,
    model: &ModelRef,
    mode: ScoreMode,
    scorer: &(impl Scorer + ?Sized),
    masc: &TokenLogprobs,
    fem: &TokenLogprobs,
) -> Result<SentenceScore> {
    let ll_masc = avg_loglik(masc)?;
    let ll_fem = avg_loglik(fem)?;
    Ok(SentenceScore {
        entry_id: entry.entry_id.clone(),
        model_id: model.model_id.clone(),
        lang: entry.lang.clone(),
        stereotype_id: entry.stereotype_id,
        template_mode: mode,
        ll_masc,
        ll_fem,
        tokens_masc: masc.len(),
        tokens_fem: fem.len(),
        r_masc: r_masc(ll_masc, ll_fem)?,
        scorer: scorer.provider_id(),
        conditioning: scorer.conditioning(),
    })
}

/// Scores one entry end-to-end.
pub fn score_entry<S: Scorer + ?Sized>(
    entry: &DatasetEntry,
    model: &ModelRef,
    mode: ScoreMode,
    profile: &LanguageProfile,
    scorer: &S,
) -> Result<SentenceScore> {
    if mode == ScoreMode::Pronoun && !profile.pronoun_templates_available {
        return Err(Error::NoPronounTemplates(profile.code.clone()));
    }
    let (m, f) = variant_texts(entry, mode, profile)?;
    let mut out = scorer.score_batch(&[m, f], model)?;
    if out.len() != 2 {
        return Err(Error::Backend(BackendError::InvalidResponse(format!(
            "{} results for 2 inputs",
            out.len()
        ))));
    }
    let fem = out.pop().expect("two results")?;
    let masc = out.pop().expect("two results")?;
    assemble(entry, model, mode, scorer, &masc, &fem)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkippedEntry {
    pub entry_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScoreRun {
    pub scores: Vec<SentenceScore>,
    pub skipped: Vec<SkippedEntry>,
}

/// Scores every entry the request applies to, in one backend batch. Entries
/// whose variants fail to score are skipped with a reason; only a fatal
/// backend error aborts the run.
pub fn score_entries<S: Scorer + ?Sized>(
    entries: &[DatasetEntry],
    model: &ModelRef,
    request: ModeRequest,
    registry: &TemplateRegistry,
    scorer: &S,
) -> Result<ScoreRun> {
    model.validate()?;
    let mut jobs = Vec::new();
    let mut texts = Vec::new();
    let mut run = ScoreRun::default();
    for entry in entries {
        let profile = registry.get(&entry.lang)?;
        request.check(profile)?;
        let Some(mode) = request.resolve(entry, profile) else { continue };
        match variant_texts(entry, mode, profile) {
            Ok((m, f)) => {
                jobs.push((entry, mode));
                texts.push(m);
                texts.push(f);
            }
            Err(e) => run.skipped.push(SkippedEntry {
                entry_id: entry.entry_id.clone(),
                reason: e.to_string(),
            }),
        }
    }
    if jobs.is_empty() {
        return Ok(run);
    }
    let results = scorer.score_batch(&texts, model)?;
    if results.len() != texts.len() {
        return Err(Error::Backend(BackendError::InvalidResponse(format!(
            "{} results for {} inputs",
            results.len(),
            texts.len()
        ))));
    }
    let mut results = results.into_iter();
    for (entry, mode) in jobs {
        let m = results.next().expect("masc result");
        let f = results.next().expect("fem result");
        let scored = match (m, f) {
            (Ok(m), Ok(f)) => assemble(entry, model, mode, scorer, &m, &f),
            (Err(e), _) | (_, Err(e)) => Err(Error::Backend(e)),
        };
        match scored {
            Ok(s) => run.scores.push(s),
            Err(e) => run.skipped.push(SkippedEntry {
                entry_id: entry.entry_id.clone(),
                reason: e.to_string(),
            }),
        }
    }
    Ok(run)
}

#[derive(Serialize)]
struct ScoreOut<'a> {
    schema_version: u32,
    #[serde(flatten)]
    score: &'a SentenceScore,
}

#[derive(Deserialize)]
struct ScoreIn {
    schema_version: u32,
    #[serde(flatten)]
    score: SentenceScore,
}

pub fn write_scores(scores: &[SentenceScore], path: impl AsRef<Path>) -> Result<()> {
    write_jsonl(
        path.as_ref(),
        scores.iter().map(|score| ScoreOut {
            schema_version: SCORE_SCHEMA_VERSION,
            score,
        }),
    )
}

/// Reads a score dump, rejecting records that break the score invariants.
pub fn read_scores(path: impl AsRef<Path>) -> Result<Vec<SentenceScore>> {
    let path = path.as_ref();
    let raw = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in raw.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: ScoreIn =
            serde_json::from_str(line).map_err(|e| Error::parse(path, i + 1, e.to_string()))?;
        if rec.schema_version != SCORE_SCHEMA_VERSION {
            return Err(Error::parse(
                path,
                i + 1,
                format!("unsupported schema version {}", rec.schema_version),
            ));
        }
        rec.score.validate().map_err(|e| Error::parse(path, i + 1, e))?;
        out.push(rec.score);
    }
    Ok(out)
}
