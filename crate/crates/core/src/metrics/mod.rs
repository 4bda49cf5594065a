//! Aggregation of per-sentence scores into per-stereotype masculine rates,
//! ranks, inclinations and the overall stereotype rate.
//!
//! Every aggregate is computed for one `(model, language, mode)` group:
//!
//! * `q_i` is the mean `r_masc` over the group's sentences of stereotype `i`;
//! * the masculine rank orders the sixteen `q_i`, rank 1 being the highest;
//! * the proxy default is the mean of the feminine-set mean and the
//!   masculine-set mean of `q_i`;
//! * inclination is `proxy - q_i` for feminine stereotypes and `q_i - proxy`
//!   for masculine ones, so positive values lean stereotypical;
//! * `g_s = q_m / q_f`, the ratio of the masculine and feminine means.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::corpus::{feminine_ids, masculine_ids, stereotype, StereotypeGender, STEREOTYPES};
use crate::error::{Error, Result};
use crate::scoring::{ScoreMode, SentenceScore};

mod agreement;

pub use agreement::{
    agreement_report, cohen_kappa, load_annotations, pearson, sample_validation_batch,
    AgreementReport, AnnotationRecord, AnnotatorPairAgreement, GenderLabel, Kappa, Pearson,
    DEFAULT_PERMUTATIONS,
};

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct GroupKey {
    pub model_id: String,
    pub lang: String,
    pub mode: ScoreMode,
}

impl GroupKey {
    pub fn of(s: &SentenceScore) -> Self {
        GroupKey {
            model_id: s.model_id.clone(),
            lang: s.lang.clone(),
            mode: s.template_mode,
        }
    }
}

/// Splits scores into `(model, language, mode)` groups.
pub fn group_scores(scores: &[SentenceScore]) -> BTreeMap<GroupKey, Vec<SentenceScore>> {
    let mut out: BTreeMap<GroupKey, Vec<SentenceScore>> = BTreeMap::new();
    for s in scores {
        out.entry(GroupKey::of(s)).or_default().push(s.clone());
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QScore {
    pub q: f64,
    pub n: usize,
}

/// Mean `r_masc` per stereotype. Stereotypes without sentences are absent
/// from the map; see [`missing_stereotypes`].
pub fn q_scores(scores: &[SentenceScore]) -> Result<BTreeMap<u8, QScore>> {
    if let Some(first) = scores.first() {
        let key = GroupKey::of(first);
        if let Some(other) = scores.iter().find(|s| GroupKey::of(s) != key) {
            return Err(Error::MixedGroup(format!(
                "{}/{}/{} vs {}/{}/{}",
                key.model_id, key.lang, key.mode, other.model_id, other.lang, other.template_mode
            )));
        }
    }
    let mut sums: BTreeMap<u8, (f64, usize)> = BTreeMap::new();
    for s in scores {
        let slot = sums.entry(s.stereotype_id).or_insert((0.0, 0));
        slot.0 += s.r_masc;
        slot.1 += 1;
    }
    Ok(sums
        .into_iter()
        .map(|(id, (sum, n))| (id, QScore { q: sum / n as f64, n }))
        .collect())
}

pub fn q_values(q: &BTreeMap<u8, QScore>) -> BTreeMap<u8, f64> {
    q.iter().map(|(id, s)| (*id, s.q)).collect()
}

pub fn missing_stereotypes<V>(q: &BTreeMap<u8, V>) -> Vec<u8> {
    STEREOTYPES
        .iter()
        .map(|s| s.id)
        .filter(|id| !q.contains_key(id))
        .collect()
}

/// Rank 1 for the largest `q_i`; ties go to the smaller stereotype id.
pub fn masculine_rank(q: &BTreeMap<u8, f64>) -> Result<BTreeMap<u8, u8>> {
    let missing = missing_stereotypes(q);
    if !missing.is_empty() {
        return Err(Error::MissingStereotypes(missing));
    }
    let mut ids: Vec<(u8, f64)> = STEREOTYPES.iter().map(|s| (s.id, q[&s.id])).collect();
    ids.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    Ok(ids
        .into_iter()
        .enumerate()
        .map(|(i, (id, _))| (id, (i + 1) as u8))
        .collect())
}

fn mean_over(q: &BTreeMap<u8, f64>, ids: &[u8], what: &str) -> Result<f64> {
    if ids.is_empty() {
        return Err(Error::Precondition(format!("empty {what} stereotype set")));
    }
    let mut sum = 0.0;
    for id in ids {
        sum += q.get(id).ok_or_else(|| {
            Error::Precondition(format!("stereotype {id} in the {what} set has no q value"))
        })?;
    }
    Ok(sum / ids.len() as f64)
}

/// Balanced macro-average of the feminine-set and masculine-set means.
pub fn proxy_default(q: &BTreeMap<u8, f64>, fem_ids: &[u8], masc_ids: &[u8]) -> Result<f64> {
    let f = mean_over(q, fem_ids, "feminine")?;
    let m = mean_over(q, masc_ids, "masculine")?;
    Ok((f + m) / 2.0)
}

/// Signed lean of each `q_i` towards its stereotype's gender.
pub fn inclination(q: &BTreeMap<u8, f64>, proxy: f64) -> Result<BTreeMap<u8, f64>> {
    if !(0.0..=1.0).contains(&proxy) {
        return Err(Error::Precondition(format!("proxy {proxy} outside [0, 1]")));
    }
    q.iter()
        .map(|(&id, &qi)| {
            let info = stereotype(id).ok_or(Error::UnknownStereotype(i64::from(id)))?;
            let v = match info.gender {
                StereotypeGender::Feminine => proxy - qi,
                StereotypeGender::Masculine => qi - proxy,
            };
            Ok((id, v))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StereotypeRate {
    pub q_f: f64,
    pub q_m: f64,
    pub g_s: f64,
}

/// `g_s = q_m / q_f` over the given stereotype sets.
pub fn stereotype_rate(
    q: &BTreeMap<u8, f64>,
    fem_ids: &[u8],
    masc_ids: &[u8],
) -> Result<StereotypeRate> {
    let q_f = mean_over(q, fem_ids, "feminine")?;
    let q_m = mean_over(q, masc_ids, "masculine")?;
    if q_f <= 0.0 {
        return Err(Error::Undefined("feminine mean q is zero; g_s undefined".into()));
    }
    Ok(StereotypeRate {
        q_f,
        q_m,
        g_s: q_m / q_f,
    })
}

/// Stereotype sets averaged for the proxy default masculine rate.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProxySets {
    pub feminine: Vec<u8>,
    pub masculine: Vec<u8>,
}

impl Default for ProxySets {
    fn default() -> Self {
        ProxySets {
            feminine: feminine_ids(),
            masculine: masculine_ids(),
        }
    }
}

impl ProxySets {
    pub fn validate(&self) -> Result<()> {
        for (ids, gender) in [
            (&self.feminine, StereotypeGender::Feminine),
            (&self.masculine, StereotypeGender::Masculine),
        ] {
            if ids.is_empty() {
                return Err(Error::Config("empty proxy stereotype set".into()));
            }
            for id in ids {
                match stereotype(*id) {
                    Some(s) if s.gender == gender => {}
                    _ => {
                        return Err(Error::Config(format!(
                            "stereotype {id} cannot be in the {gender:?} proxy set"
                        )))
                    }
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StereotypeSummary {
    pub stereotype_id: u8,
    pub q_i: f64,
    pub n: usize,
    pub rank: u8,
    pub inclination: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelLanguageSummary {
    pub model_id: String,
    pub lang: String,
    pub template_mode: ScoreMode,
    pub q_f: f64,
    pub q_m: f64,
    pub proxy_default: f64,
    pub g_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub overall: ModelLanguageSummary,
    pub stereotypes: Vec<StereotypeSummary>,
    pub n_scores: usize,
}

/// All aggregates for one group. Requires every stereotype to be present.
pub fn summarize(scores: &[SentenceScore], proxy_sets: &ProxySets) -> Result<GroupSummary> {
    let first = scores
        .first()
        .ok_or_else(|| Error::Precondition("no scores to summarize".into()))?;
    let key = GroupKey::of(first);
    let q = q_scores(scores)?;
    let qv = q_values(&q);
    let ranks = masculine_rank(&qv)?;
    let proxy = proxy_default(&qv, &proxy_sets.feminine, &proxy_sets.masculine)?;
    let incl = inclination(&qv, proxy)?;
    let rate = stereotype_rate(&qv, &feminine_ids(), &masculine_ids())?;
    let stereotypes = q
        .iter()
        .map(|(&id, s)| StereotypeSummary {
            stereotype_id: id,
            q_i: s.q,
            n: s.n,
            rank: ranks[&id],
            inclination: incl[&id],
        })
        .collect();
    Ok(GroupSummary {
        overall: ModelLanguageSummary {
            model_id: key.model_id,
            lang: key.lang,
            template_mode: key.mode,
            q_f: rate.q_f,
            q_m: rate.q_m,
            proxy_default: proxy,
            g_s: rate.g_s,
        },
        stereotypes,
        n_scores: scores.len(),
    })
}
