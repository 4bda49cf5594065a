//! Expansion of the English seed corpus into a target language.
//!
//! Genderless languages get a direct translation of every seed sentence,
//! kept when its quality estimate clears the threshold. Gendered languages
//! get two translations per sentence, one wrapped in a masculine and one in
//! a feminine initial template; the inner sentences are pulled back out and
//! compared. Identical inner sentences become neutral entries, sentences
//! that differ by a small edit on a single word become gendered minimal
//! pairs, anything else is discarded.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::backends::{BackendError, QePair, QualityEstimator, Translator};
use crate::corpus::{
    entry_id, DatasetEntry, DiffLocation, EntryKind, Provenance, SourceSentence,
};
use crate::error::{Error, Result};
use crate::templating::{extract_quoted, wrap_initial, Gender, LanguageProfile};

/// Unit-cost edit distance over Unicode scalar values.
pub fn levenshtein(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    if a.is_empty() {
        return b.len();
    }
    let mut row: Vec<usize> = (0..=b.len()).collect();
    for (i, ca) in a.iter().enumerate() {
        let mut diag = row[0];
        row[0] = i + 1;
        for (j, cb) in b.iter().enumerate() {
            let up = row[j + 1];
            row[j + 1] = if ca == cb {
                diag
            } else {
                1 + diag.min(up).min(row[j])
            };
            diag = up;
        }
    }
    row[b.len()]
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum WordDiff {
    Equal,
    OneWord {
        index: usize,
        word_a: String,
        word_b: String,
    },
    Other,
}

/// Whitespace-token alignment of two sentences. Punctuation stays attached
/// to its token and comparison is case-sensitive.
pub fn word_diff(a: &str, b: &str) -> WordDiff {
    let ta: Vec<&str> = a.split_whitespace().collect();
    let tb: Vec<&str> = b.split_whitespace().collect();
    if ta.len() != tb.len() {
        return WordDiff::Other;
    }
    let mut diffs = ta.iter().zip(&tb).enumerate().filter(|(_, (x, y))| x != y);
    match (diffs.next(), diffs.next()) {
        (None, _) => WordDiff::Equal,
        (Some((index, (x, y))), None) => WordDiff::OneWord {
            index,
            word_a: x.to_string(),
            word_b: y.to_string(),
        },
        _ => WordDiff::Other,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PairHeuristicConfig {
    pub max_differing_words: usize,
    pub max_char_edit: usize,
    pub qe_threshold: f64,
}

impl Default for PairHeuristicConfig {
    fn default() -> Self {
        PairHeuristicConfig {
            max_differing_words: 1,
            max_char_edit: 2,
            qe_threshold: 0.85,
        }
    }
}

impl PairHeuristicConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_differing_words < 1 {
            return Err(Error::Config("max_differing_words must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.qe_threshold) {
            return Err(Error::Config(format!(
                "qe_threshold {} outside [0, 1]",
                self.qe_threshold
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PairClass {
    Neutral,
    Gendered(DiffLocation),
    TooDifferent(String),
}

/// Sorts a masculine/feminine translation pair into neutral, gendered, or
/// too different to be a minimal pair.
pub fn classify_pair(masc_text: &str, fem_text: &str, cfg: &PairHeuristicConfig) -> PairClass {
    let ta: Vec<&str> = masc_text.split_whitespace().collect();
    let tb: Vec<&str> = fem_text.split_whitespace().collect();
    if ta.len() != tb.len() {
        return PairClass::TooDifferent(format!(
            "word counts differ ({} vs {})",
            ta.len(),
            tb.len()
        ));
    }
    let diffs: Vec<(usize, &str, &str)> = ta
        .iter()
        .zip(&tb)
        .enumerate()
        .filter(|(_, (x, y))| x != y)
        .map(|(i, (x, y))| (i, *x, *y))
        .collect();
    let Some(&(index, wa, wb)) = diffs.first() else {
        return PairClass::Neutral;
    };
    if diffs.len() > cfg.max_differing_words {
        return PairClass::TooDifferent(format!("{} words differ", diffs.len()));
    }
    let mut first_edits = 0;
    for (k, &(i, x, y)) in diffs.iter().enumerate() {
        let d = levenshtein(x, y);
        if d > cfg.max_char_edit {
            return PairClass::TooDifferent(format!(
                "word {i} differs by {d} characters (`{x}` / `{y}`)"
            ));
        }
        if k == 0 {
            first_edits = d;
        }
    }
    PairClass::Gendered(DiffLocation {
        word_index: index,
        masc_word: wa.to_string(),
        fem_word: wb.to_string(),
        char_edits: first_edits,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DiscardReason {
    QeBelowThreshold,
    NoQuotedSpan,
    PairTooDifferent,
    TranslationFailed,
    BackendUnsupported,
}

impl DiscardReason {
    pub const ALL: [DiscardReason; 5] = [
        DiscardReason::QeBelowThreshold,
        DiscardReason::NoQuotedSpan,
        DiscardReason::PairTooDifferent,
        DiscardReason::TranslationFailed,
        DiscardReason::BackendUnsupported,
    ];

    pub fn code(self) -> &'static str {
        match self {
            DiscardReason::QeBelowThreshold => "qe-below-threshold",
            DiscardReason::NoQuotedSpan => "no-quoted-span",
            DiscardReason::PairTooDifferent => "pair-too-different",
            DiscardReason::TranslationFailed => "translation-failed",
            DiscardReason::BackendUnsupported => "backend-unsupported",
        }
    }
}

impl fmt::Display for DiscardReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiscardRecord {
    pub source_id: String,
    pub lang: String,
    pub stereotype_id: u8,
    pub reason: DiscardReason,
    pub detail: String,
}

pub fn write_discards(discards: &[DiscardRecord], path: impl AsRef<std::path::Path>) -> Result<()> {
    crate::corpus::write_jsonl(path.as_ref(), discards)
}

pub fn read_discards(path: impl AsRef<std::path::Path>) -> Result<Vec<DiscardRecord>> {
    let path = path.as_ref();
    let raw = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    raw.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| Error::parse(path, i + 1, e.to_string())))
        .collect()
}

/// What to do for a language the quality estimator does not support.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum UnsupportedQePolicy {
    /// Keep translations unfiltered and flag the run.
    #[default]
    SkipQe,
    DiscardAll,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExpansionConfig {
    pub heuristic: PairHeuristicConfig,
    pub source_lang: String,
    pub unsupported_qe: UnsupportedQePolicy,
}

impl Default for ExpansionConfig {
    fn default() -> Self {
        ExpansionConfig {
            heuristic: PairHeuristicConfig::default(),
            source_lang: "en".into(),
            unsupported_qe: UnsupportedQePolicy::SkipQe,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Expansion {
    pub entries: Vec<DatasetEntry>,
    pub discards: Vec<DiscardRecord>,
    pub warnings: Vec<String>,
    /// Digest over every backend response the run consumed, in input order.
    pub responses_digest: String,
}

impl Expansion {
    pub fn count(&self, kind: EntryKind) -> usize {
        self.entries.iter().filter(|e| e.kind == kind).count()
    }

    pub fn discard_counts(&self) -> BTreeMap<DiscardReason, usize> {
        let mut out: BTreeMap<DiscardReason, usize> =
            DiscardReason::ALL.iter().map(|r| (*r, 0)).collect();
        for d in &self.discards {
            *out.entry(d.reason).or_default() += 1;
        }
        out
    }
}

enum QeOutcome {
    Pass(Option<f64>),
    Below(f64),
    Unsupported,
    Failed(String),
}

struct Run<'a> {
    profile: &'a LanguageProfile,
    cfg: &'a ExpansionConfig,
    translator_id: String,
    qe_id: String,
    digest: Sha256,
    out: Expansion,
    unsupported_seen: bool,
}

impl Run<'_> {
    fn discard(&mut self, s: &SourceSentence, reason: DiscardReason, detail: impl Into<String>) {
        self.out.discards.push(DiscardRecord {
            source_id: s.id.clone(),
            lang: self.profile.code.clone(),
            stereotype_id: s.stereotype_id,
            reason,
            detail: detail.into(),
        });
    }

    fn keep(&mut self, s: &SourceSentence, kind: EntryKind, masc: String, fem: String, prov: Provenance) {
        let lang = self.profile.code.clone();
        self.out.entries.push(DatasetEntry {
            entry_id: entry_id(&s.id, &lang, kind),
            source_id: s.id.clone(),
            lang,
            kind,
            masc_text: masc,
            fem_text: fem,
            stereotype_id: s.stereotype_id,
            provenance: prov,
        });
    }

    fn provenance(&self) -> Provenance {
        Provenance {
            translator: Some(self.translator_id.clone()),
            qe_provider: Some(self.qe_id.clone()),
            ..Provenance::default()
        }
    }

    fn absorb(&mut self, part: &str) {
        self.digest.update((part.len() as u64).to_le_bytes());
        self.digest.update(part.as_bytes());
    }

    fn judge(&mut self, r: &std::result::Result<crate::backends::QeScore, BackendError>) -> QeOutcome {
        match r {
            Ok(q) => {
                self.absorb(&q.value().to_string());
                if q.value() >= self.cfg.heuristic.qe_threshold {
                    QeOutcome::Pass(Some(q.value()))
                } else {
                    QeOutcome::Below(q.value())
                }
            }
            Err(BackendError::UnsupportedLanguage(_)) => {
                self.unsupported_seen = true;
                match self.cfg.unsupported_qe {
                    UnsupportedQePolicy::SkipQe => QeOutcome::Pass(None),
                    UnsupportedQePolicy::DiscardAll => QeOutcome::Unsupported,
                }
            }
            Err(e) => QeOutcome::Failed(e.to_string()),
        }
    }
}

fn shape_error<T>(what: &str, got: &[T], want: usize) -> Result<()> {
    if got.len() == want {
        Ok(())
    } else {
        Err(Error::Backend(BackendError::InvalidResponse(format!(
            "{what}: {} results for {want} inputs",
            got.len()
        ))))
    }
}

/// Expands `corpus` into `profile`'s language. Every seed sentence ends up
/// as exactly one entry or one discard record.
pub fn expand_language<T, Q>(
    corpus: &[SourceSentence],
    profile: &LanguageProfile,
    translator: &T,
    qe: &Q,
    cfg: &ExpansionConfig,
) -> Result<Expansion>
where
    T: Translator + ?Sized,
    Q: QualityEstimator + ?Sized,
{
    cfg.heuristic.validate()?;
    profile.validate()?;
    let mut run = Run {
        profile,
        cfg,
        translator_id: translator.provider_id(),
        qe_id: qe.provider_id(),
        digest: Sha256::new(),
        out: Expansion::default(),
        unsupported_seen: false,
    };

    if profile.code == cfg.source_lang {
        for s in corpus {
            let mut prov = Provenance::default();
            prov.notes.push("source language; no translation".into());
            run.keep(s, EntryKind::Neutral, s.text.clone(), s.text.clone(), prov);
        }
    } else if !profile.gendered_morphology {
        expand_genderless(&mut run, corpus, translator, qe)?;
    } else {
        expand_gendered(&mut run, corpus, translator, qe)?;
    }

    if run.unsupported_seen {
        let policy = match cfg.unsupported_qe {
            UnsupportedQePolicy::SkipQe => "translations kept without quality filtering",
            UnsupportedQePolicy::DiscardAll => "all translations discarded",
        };
        run.out.warnings.push(format!(
            "quality estimation unsupported for `{}`: {policy}",
            profile.code
        ));
    }
    run.out.warnings.extend(profile.warnings.iter().cloned());
    run.out.responses_digest = hex::encode(run.digest.clone().finalize());

    debug_assert_eq!(run.out.entries.len() + run.out.discards.len(), corpus.len());
    Ok(run.out)
}

fn expand_genderless<T, Q>(run: &mut Run<'_>, corpus: &[SourceSentence], tr: &T, qe: &Q) -> Result<()>
where
    T: Translator + ?Sized,
    Q: QualityEstimator + ?Sized,
{
    let lang = run.profile.code.clone();
    let texts: Vec<String> = corpus.iter().map(|s| s.text.clone()).collect();
    let translated = tr.translate_batch(&texts, &run.cfg.source_lang, &lang)?;
    shape_error("translate", &translated, texts.len())?;

    let ok: Vec<usize> = (0..corpus.len()).filter(|&i| translated[i].is_ok()).collect();
    let pairs: Vec<QePair> = ok
        .iter()
        .map(|&i| QePair::new(texts[i].clone(), translated[i].clone().expect("ok")))
        .collect();
    let scores = if pairs.is_empty() { Vec::new() } else { qe.qe_batch(&pairs, &lang)? };
    shape_error("qe", &scores, pairs.len())?;
    let mut scores = ok.into_iter().zip(scores).collect::<BTreeMap<_, _>>();

    for (i, s) in corpus.iter().enumerate() {
        let t = match &translated[i] {
            Ok(t) => t.clone(),
            Err(e) => {
                run.discard(s, DiscardReason::TranslationFailed, e.to_string());
                continue;
            }
        };
        run.absorb(&t);
        let score = scores.remove(&i).expect("scored");
        let mut prov = run.provenance();
        match run.judge(&score) {
            QeOutcome::Pass(v) => {
                prov.qe_masc = v;
                prov.qe_fem = v;
                prov.qe_skipped = v.is_none();
                run.keep(s, EntryKind::Neutral, t.clone(), t, prov);
            }
            QeOutcome::Below(v) => run.discard(
                s,
                DiscardReason::QeBelowThreshold,
                format!("qe {v} < {}", run.cfg.heuristic.qe_threshold),
            ),
            QeOutcome::Unsupported => {
                run.discard(s, DiscardReason::BackendUnsupported, "quality estimation unsupported")
            }
            QeOutcome::Failed(e) => run.discard(
                s,
                DiscardReason::TranslationFailed,
                format!("quality estimation failed: {e}"),
            ),
        }
    }
    Ok(())
}

fn expand_gendered<T, Q>(run: &mut Run<'_>, corpus: &[SourceSentence], tr: &T, qe: &Q) -> Result<()>
where
    T: Translator + ?Sized,
    Q: QualityEstimator + ?Sized,
{
    let profile = run.profile;
    let lang = profile.code.clone();
    let mut wrapped = Vec::with_capacity(corpus.len() * 2);
    for s in corpus {
        wrapped.push(wrap_initial(&s.text, Gender::Masculine, profile)?);
        wrapped.push(wrap_initial(&s.text, Gender::Feminine, profile)?);
    }
    let translated = tr.translate_batch(&wrapped, &run.cfg.source_lang, &lang)?;
    shape_error("translate", &translated, wrapped.len())?;

    let ok: Vec<usize> = (0..wrapped.len()).filter(|&i| translated[i].is_ok()).collect();
    let pairs: Vec<QePair> = ok
        .iter()
        .map(|&i| QePair::new(wrapped[i].clone(), translated[i].clone().expect("ok")))
        .collect();
    let scores = if pairs.is_empty() { Vec::new() } else { qe.qe_batch(&pairs, &lang)? };
    shape_error("qe", &scores, pairs.len())?;
    let mut scores = ok.into_iter().zip(scores).collect::<BTreeMap<_, _>>();

    for (k, s) in corpus.iter().enumerate() {
        let (mi, fi) = (2 * k, 2 * k + 1);
        let (mt, ft) = match (&translated[mi], &translated[fi]) {
            (Ok(m), Ok(f)) => (m.clone(), f.clone()),
            (Err(e), _) | (_, Err(e)) => {
                run.discard(s, DiscardReason::TranslationFailed, e.to_string());
                continue;
            }
        };
        run.absorb(&mt);
        run.absorb(&ft);
        let qm = scores.remove(&mi).expect("scored");
        let qf = scores.remove(&fi).expect("scored");
        let mut prov = run.provenance();
        let (om, of) = (run.judge(&qm), run.judge(&qf));
        match (&om, &of) {
            (QeOutcome::Pass(a), QeOutcome::Pass(b)) => {
                prov.qe_masc = *a;
                prov.qe_fem = *b;
                prov.qe_skipped = a.is_none() || b.is_none();
            }
            (QeOutcome::Failed(e), _) | (_, QeOutcome::Failed(e)) => {
                run.discard(
                    s,
                    DiscardReason::TranslationFailed,
                    format!("quality estimation failed: {e}"),
                );
                continue;
            }
            (QeOutcome::Unsupported, _) | (_, QeOutcome::Unsupported) => {
                run.discard(s, DiscardReason::BackendUnsupported, "quality estimation unsupported");
                continue;
            }
            _ => {
                let show = |o: &QeOutcome| match o {
                    QeOutcome::Pass(Some(v)) | QeOutcome::Below(v) => v.to_string(),
                    _ => "n/a".into(),
                };
                run.discard(
                    s,
                    DiscardReason::QeBelowThreshold,
                    format!(
                        "qe masc {} / fem {} (threshold {})",
                        show(&om),
                        show(&of),
                        run.cfg.heuristic.qe_threshold
                    ),
                );
                continue;
            }
        }

        let (masc, fem) = match (extract_quoted(&mt, profile), extract_quoted(&ft, profile)) {
            (Ok(m), Ok(f)) => (m, f),
            (Err(e), _) | (_, Err(e)) => {
                run.discard(s, DiscardReason::NoQuotedSpan, format!("{e}: `{mt}` / `{ft}`"));
                continue;
            }
        };
        match classify_pair(&masc, &fem, &run.cfg.heuristic) {
            PairClass::Neutral => run.keep(s, EntryKind::Neutral, masc, fem, prov),
            PairClass::Gendered(diff) => {
                prov.diff = Some(diff);
                run.keep(s, EntryKind::Gendered, masc, fem, prov);
            }
            PairClass::TooDifferent(detail) => {
                run.discard(s, DiscardReason::PairTooDifferent, detail)
            }
        }
    }
    Ok(())
}
