//! Human validation: annotation ingest, inter-annotator agreement and
//! stratified sampling of entries to annotate.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{DatasetEntry, EntryKind};
use crate::error::{Error, Result};

pub const DEFAULT_PERMUTATIONS: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pearson {
    pub rho: f64,
    pub p_value: f64,
    pub n: usize,
}

fn centered(v: &[f64]) -> Vec<f64> {
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    v.iter().map(|x| x - mean).collect()
}

fn rho_centered(x: &[f64], y: &[f64], sxx: f64, syy: f64) -> f64 {
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0)
}

/// Sample correlation with a two-sided permutation p-value.
///
/// `p = (1 + #{|rho_perm| >= |rho|}) / (1 + permutations)`.
pub fn pearson(xs: &[f64], ys: &[f64], permutations: usize, seed: u64) -> Result<Pearson> {
    if xs.len() != ys.len() {
        return Err(Error::Precondition(format!(
            "pearson: length mismatch {} vs {}",
            xs.len(),
            ys.len()
        )));
    }
    if xs.len() < 3 {
        return Err(Error::Precondition("pearson: need at least 3 pairs".into()));
    }
    if xs.iter().chain(ys).any(|v| !v.is_finite()) {
        return Err(Error::Precondition("pearson: non-finite input".into()));
    }
    let x = centered(xs);
    let mut y = centered(ys);
    let sxx: f64 = x.iter().map(|a| a * a).sum();
    let syy: f64 = y.iter().map(|a| a * a).sum();
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::Undefined("pearson: zero variance".into()));
    }
    let rho = rho_centered(&x, &y, sxx, syy);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let threshold = rho.abs() - 1e-12;
    let mut hits = 0usize;
    for _ in 0..permutations {
        y.shuffle(&mut rng);
        if rho_centered(&x, &y, sxx, syy).abs() >= threshold {
            hits += 1;
        }
    }
    Ok(Pearson {
        rho,
        p_value: (hits + 1) as f64 / (permutations + 1) as f64,
        n: xs.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", content = "value", rename_all = "lowercase")]
pub enum Kappa {
    Value(f64),
    /// Chance agreement is 1: both annotators used one shared category.
    Undefined,
}

impl Kappa {
    pub fn value(self) -> Option<f64> {
        match self {
            Kappa::Value(v) => Some(v),
            Kappa::Undefined => None,
        }
    }
}

impl fmt::Display for Kappa {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Kappa::Value(v) => write!(f, "{v}"),
            Kappa::Undefined => f.write_str("-"),
        }
    }
}

pub fn cohen_kappa<L: Ord>(a: &[L], b: &[L]) -> Result<Kappa> {
    if a.len() != b.len() {
        return Err(Error::Precondition(format!(
            "kappa: length mismatch {} vs {}",
            a.len(),
            b.len()
        )));
    }
    if a.is_empty() {
        return Err(Error::Precondition("kappa: no labels".into()));
    }
    let n = a.len() as f64;
    let agree = a.iter().zip(b).filter(|(x, y)| x == y).count() as f64;
    let mut counts: BTreeMap<&L, (usize, usize)> = BTreeMap::new();
    for l in a {
        counts.entry(l).or_default().0 += 1;
    }
    for l in b {
        counts.entry(l).or_default().1 += 1;
    }
    if counts.len() == 1 {
        return Ok(Kappa::Undefined);
    }
    let p_o = agree / n;
    let p_e: f64 = counts
        .values()
        .map(|&(ca, cb)| (ca as f64 / n) * (cb as f64 / n))
        .sum();
    if p_e >= 1.0 {
        return Ok(Kappa::Undefined);
    }
    Ok(Kappa::Value((p_o - p_e) / (1.0 - p_e)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GenderLabel {
    Neutral,
    Masculine,
    Feminine,
    Unsure,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub sentence_id: String,
    pub annotator_id: String,
    pub da_score: u8,
    pub gender_label: GenderLabel,
}

#[derive(Deserialize)]
struct RawAnnotation {
    sentence_id: String,
    annotator_id: String,
    da_score: String,
    gender_label: String,
}

/// Reads a spreadsheet-exported CSV with columns
/// `sentence_id, annotator_id, da_score, gender_label`.
pub fn load_annotations(path: impl AsRef<Path>) -> Result<Vec<AnnotationRecord>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    let mut out = Vec::new();
    let mut seen = BTreeSet::new();
    for (i, row) in reader.deserialize::<RawAnnotation>().enumerate() {
        let line = i + 2;
        let raw = row.map_err(|e| Error::parse(path, line, e.to_string()))?;
        let da_score = raw
            .da_score
            .parse::<u8>()
            .ok()
            .filter(|v| *v <= 100)
            .ok_or_else(|| {
                Error::parse(path, line, format!("da_score `{}` not in 0..=100", raw.da_score))
            })?;
        let gender_label = match raw.gender_label.to_ascii_lowercase().as_str() {
            "neutral" => GenderLabel::Neutral,
            "masculine" => GenderLabel::Masculine,
            "feminine" => GenderLabel::Feminine,
            "unsure" => GenderLabel::Unsure,
            other => {
                return Err(Error::parse(path, line, format!("unknown gender_label `{other}`")))
            }
        };
        if raw.sentence_id.is_empty() || raw.annotator_id.is_empty() {
            return Err(Error::parse(path, line, "empty sentence_id or annotator_id"));
        }
        if !seen.insert((raw.annotator_id.clone(), raw.sentence_id.clone())) {
            return Err(Error::parse(
                path,
                line,
                format!("duplicate annotation of {} by {}", raw.sentence_id, raw.annotator_id),
            ));
        }
        out.push(AnnotationRecord {
            sentence_id: raw.sentence_id,
            annotator_id: raw.annotator_id,
            da_score,
            gender_label,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotatorPairAgreement {
    pub annotator_a: String,
    pub annotator_b: String,
    pub n_common: usize,
    pub da_pearson: Option<Pearson>,
    pub da_note: Option<String>,
    pub label_kappa: Option<Kappa>,
    pub label_disagreements: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementReport {
    pub n_records: usize,
    pub mean_da: BTreeMap<String, f64>,
    pub pairs: Vec<AnnotatorPairAgreement>,
    /// Mean over pairs with a defined kappa.
    pub mean_kappa: Option<f64>,
}

/// Pairwise agreement between every two annotators over their shared
/// sentences.
pub fn agreement_report(
    records: &[AnnotationRecord],
    permutations: usize,
    seed: u64,
) -> Result<AgreementReport> {
    let mut by_annotator: BTreeMap<&str, BTreeMap<&str, &AnnotationRecord>> = BTreeMap::new();
    for r in records {
        by_annotator
            .entry(&r.annotator_id)
            .or_default()
            .insert(&r.sentence_id, r);
    }
    let mean_da = by_annotator
        .iter()
        .map(|(a, rs)| {
            let sum: f64 = rs.values().map(|r| f64::from(r.da_score)).sum();
            (a.to_string(), sum / rs.len() as f64)
        })
        .collect();
    let annotators: Vec<&str> = by_annotator.keys().copied().collect();
    let mut pairs = Vec::new();
    for (i, a) in annotators.iter().enumerate() {
        for b in &annotators[i + 1..] {
            let (ra, rb) = (&by_annotator[a], &by_annotator[b]);
            let common: Vec<(&AnnotationRecord, &AnnotationRecord)> = ra
                .iter()
                .filter_map(|(s, x)| rb.get(s).map(|y| (*x, *y)))
                .collect();
            if common.is_empty() {
                continue;
            }
            let xs: Vec<f64> = common.iter().map(|(x, _)| f64::from(x.da_score)).collect();
            let ys: Vec<f64> = common.iter().map(|(_, y)| f64::from(y.da_score)).collect();
            let (da_pearson, da_note) = match pearson(&xs, &ys, permutations, seed) {
                Ok(p) => (Some(p), None),
                Err(e) => (None, Some(e.to_string())),
            };
            let la: Vec<GenderLabel> = common.iter().map(|(x, _)| x.gender_label).collect();
            let lb: Vec<GenderLabel> = common.iter().map(|(_, y)| y.gender_label).collect();
            pairs.push(AnnotatorPairAgreement {
                annotator_a: a.to_string(),
                annotator_b: b.to_string(),
                n_common: common.len(),
                da_pearson,
                da_note,
                label_kappa: Some(cohen_kappa(&la, &lb)?),
                label_disagreements: la.iter().zip(&lb).filter(|(x, y)| x != y).count(),
            });
        }
    }
    let defined: Vec<f64> = pairs
        .iter()
        .filter_map(|p| p.label_kappa.and_then(Kappa::value))
        .collect();
    let mean_kappa = (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64);
    Ok(AgreementReport {
        n_records: records.len(),
        mean_da,
        pairs,
        mean_kappa,
    })
}

/// Stratified sample of `n` entries whose gendered share matches the
/// dataset's, rounded half up. Entries come back in dataset order.
pub fn sample_validation_batch(
    entries: &[DatasetEntry],
    n: usize,
    seed: u64,
) -> Result<Vec<DatasetEntry>> {
    if entries.is_empty() {
        return Err(Error::Precondition("empty dataset".into()));
    }
    if n > entries.len() {
        return Err(Error::Precondition(format!(
            "sample of {n} requested from {} entries",
            entries.len()
        )));
    }
    let langs: BTreeSet<&str> = entries.iter().map(|e| e.lang.as_str()).collect();
    if langs.len() > 1 {
        return Err(Error::Precondition(format!("sample spans languages {langs:?}")));
    }
    let gendered: Vec<usize> = (0..entries.len())
        .filter(|&i| entries[i].kind == EntryKind::Gendered)
        .collect();
    let neutral: Vec<usize> = (0..entries.len())
        .filter(|&i| entries[i].kind == EntryKind::Neutral)
        .collect();
    let total = entries.len();
    let n_g = (2 * n * gendered.len() + total) / (2 * total);
    let n_n = n - n_g;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked: Vec<usize> = index::sample(&mut rng, gendered.len(), n_g)
        .into_iter()
        .map(|k| gendered[k])
        .chain(
            index::sample(&mut rng, neutral.len(), n_n)
                .into_iter()
                .map(|k| neutral[k]),
        )
        .collect();
    picked.sort_unstable();
    Ok(picked.into_iter().map(|i| entries[i].clone()).collect())
}
