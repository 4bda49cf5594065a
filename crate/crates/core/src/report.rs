//! Tables and figure data: dataset statistics, rank heatmaps, `q_i` charts,
//! stereotype-rate summaries, agreement tables and the run manifest.
//!
//! Reports are first rendered into memory as a map from relative path to
//! bytes; writing and verification both work from that map.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{stereotype, DatasetEntry, EntryKind, STEREOTYPES};
use crate::error::{Error, Result};
use crate::expansion::{DiscardReason, DiscardRecord};
use crate::metrics::{
    group_scores, summarize, AgreementReport, GroupKey, GroupSummary, Kappa, ProxySets,
};
use crate::scoring::{ScoreMode, SentenceScore};

pub const REPORT_SCHEMA_VERSION: u32 = 1;
pub const GS_REFERENCE: f64 = 1.0;
pub const SUBDIRS: [&str; 4] = ["stats", "ranks", "gs", "agreement"];
pub const MANIFEST: &str = "manifest.json";

/// Relative path to file contents.
pub type Rendered = BTreeMap<String, Vec<u8>>;

fn csv_bytes(header: &[&str], rows: Vec<Vec<String>>) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    w.into_inner()
        .map_err(|e| Error::Precondition(format!("csv flush: {e}")))
}

fn num(v: f64) -> String {
    format!("{v}")
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn file_stem(s: &str) -> String {
    s.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '.' { c } else { '_' })
        .collect()
}

/// Feminine stereotype ids first, then masculine, as in the heatmap columns.
pub fn heatmap_columns() -> Vec<u8> {
    let mut ids: Vec<_> = STEREOTYPES.iter().collect();
    ids.sort_by_key(|s| (s.gender, s.id));
    ids.into_iter().map(|s| s.id).collect()
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LanguageCounts {
    pub gendered: usize,
    pub neutral: usize,
    pub discards: BTreeMap<DiscardReason, usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DatasetStats {
    pub languages: BTreeMap<String, LanguageCounts>,
    /// `(lang, stereotype)` to `(gendered, neutral)`.
    pub stereotypes: BTreeMap<(String, u8), (usize, usize)>,
}

impl DatasetStats {
    pub fn total(&self, kind: EntryKind) -> usize {
        self.languages
            .values()
            .map(|c| match kind {
                EntryKind::Gendered => c.gendered,
                EntryKind::Neutral => c.neutral,
            })
            .sum()
    }
}

pub fn dataset_stats(entries: &[DatasetEntry], discards: &[DiscardRecord]) -> DatasetStats {
    let mut stats = DatasetStats::default();
    for e in entries {
        let c = stats.languages.entry(e.lang.clone()).or_default();
        let s = stats
            .stereotypes
            .entry((e.lang.clone(), e.stereotype_id))
            .or_default();
        match e.kind {
            EntryKind::Gendered => {
                c.gendered += 1;
                s.0 += 1;
            }
            EntryKind::Neutral => {
                c.neutral += 1;
                s.1 += 1;
            }
        }
    }
    for d in discards {
        *stats
            .languages
            .entry(d.lang.clone())
            .or_default()
            .discards
            .entry(d.reason)
            .or_default() += 1;
    }
    stats
}

pub fn render_dataset_stats(stats: &DatasetStats) -> Result<Rendered> {
    let mut header = vec!["lang", "gendered", "neutral"];
    header.extend(DiscardReason::ALL.iter().map(|r| r.code()));
    header.push("discarded");
    let mut rows = Vec::new();
    let mut totals = vec![0usize; DiscardReason::ALL.len() + 3];
    for (lang, c) in &stats.languages {
        let mut vals = vec![c.gendered, c.neutral];
        vals.extend(
            DiscardReason::ALL
                .iter()
                .map(|r| c.discards.get(r).copied().unwrap_or(0)),
        );
        vals.push(c.discards.values().sum());
        for (t, v) in totals.iter_mut().zip(&vals) {
            *t += v;
        }
        let mut row = vec![lang.clone()];
        row.extend(vals.iter().map(usize::to_string));
        rows.push(row);
    }
    let mut total_row = vec!["all".to_string()];
    total_row.extend(totals.iter().map(usize::to_string));
    rows.push(total_row);

    let mut srows = Vec::new();
    for ((lang, id), (g, n)) in &stats.stereotypes {
        let info = stereotype(*id).ok_or(Error::UnknownStereotype(i64::from(*id)))?;
        srows.push(vec![
            lang.clone(),
            id.to_string(),
            info.label.to_string(),
            format!("{:?}", info.gender).to_lowercase(),
            g.to_string(),
            n.to_string(),
        ]);
    }
    let mut out = Rendered::new();
    out.insert("stats/languages.csv".into(), csv_bytes(&header, rows)?);
    out.insert(
        "stats/stereotypes.csv".into(),
        csv_bytes(
            &["lang", "stereotype_id", "stereotype", "gender", "gendered", "neutral"],
            srows,
        )?,
    );
    Ok(out)
}

/// Writes `stats/` under `dir` and returns the counts.
pub fn emit_dataset_stats(
    entries: &[DatasetEntry],
    discards: &[DiscardRecord],
    dir: impl AsRef<Path>,
) -> Result<DatasetStats> {
    let stats = dataset_stats(entries, discards);
    write_rendered(dir, &render_dataset_stats(&stats)?)?;
    Ok(stats)
}

/// One heatmap per `(model, mode)`: rows are languages, columns the
/// stereotypes in [`heatmap_columns`] order, cells masculine ranks.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankMatrix {
    pub model_id: String,
    pub mode: ScoreMode,
    pub columns: Vec<u8>,
    pub rows: BTreeMap<String, Vec<u8>>,
}

pub fn rank_matrices(
    summaries: &[GroupSummary],
    languages: Option<&[String]>,
) -> Result<Vec<RankMatrix>> {
    let columns = heatmap_columns();
    let mut out: BTreeMap<(String, ScoreMode), RankMatrix> = BTreeMap::new();
    for s in summaries {
        let ranks: BTreeMap<u8, u8> = s
            .stereotypes
            .iter()
            .map(|x| (x.stereotype_id, x.rank))
            .collect();
        let row = columns
            .iter()
            .map(|id| {
                ranks.get(id).copied().ok_or_else(|| {
                    Error::Precondition(format!(
                        "{}/{} has no rank for stereotype {id}",
                        s.overall.model_id, s.overall.lang
                    ))
                })
            })
            .collect::<Result<Vec<u8>>>()?;
        let m = out
            .entry((s.overall.model_id.clone(), s.overall.template_mode))
            .or_insert_with(|| RankMatrix {
                model_id: s.overall.model_id.clone(),
                mode: s.overall.template_mode,
                columns: columns.clone(),
                rows: BTreeMap::new(),
            });
        m.rows.insert(s.overall.lang.clone(), row);
    }
    if let Some(langs) = languages {
        for m in out.values() {
            let missing: Vec<&String> = langs.iter().filter(|l| !m.rows.contains_key(*l)).collect();
            if !missing.is_empty() {
                return Err(Error::Precondition(format!(
                    "rank heatmap {}/{} lacks languages {missing:?}",
                    m.model_id, m.mode
                )));
            }
        }
    }
    Ok(out.into_values().collect())
}

pub fn render_rank_heatmaps(matrices: &[RankMatrix]) -> Result<Rendered> {
    let mut out = Rendered::new();
    for m in matrices {
        let cols: Vec<String> = m.columns.iter().map(|id| format!("s{id}")).collect();
        let mut header = vec!["lang"];
        header.extend(cols.iter().map(String::as_str));
        let rows = m
            .rows
            .iter()
            .map(|(lang, ranks)| {
                let mut r = vec![lang.clone()];
                r.extend(ranks.iter().map(u8::to_string));
                r
            })
            .collect();
        out.insert(
            format!("ranks/{}__{}.csv", file_stem(&m.model_id), m.mode),
            csv_bytes(&header, rows)?,
        );
    }
    Ok(out)
}

/// Per-stereotype `q_i`, rank and inclination for every group.
pub fn render_q_scores(summaries: &[GroupSummary]) -> Result<Rendered> {
    let mut rows = Vec::new();
    for s in summaries {
        for st in &s.stereotypes {
            rows.push(vec![
                s.overall.model_id.clone(),
                s.overall.lang.clone(),
                s.overall.template_mode.to_string(),
                st.stereotype_id.to_string(),
                st.n.to_string(),
                num(st.q_i),
                st.rank.to_string(),
                num(st.inclination),
            ]);
        }
    }
    let mut out = Rendered::new();
    out.insert(
        "ranks/q_scores.csv".into(),
        csv_bytes(
            &["model", "lang", "mode", "stereotype_id", "n", "q_i", "rank", "inclination"],
            rows,
        )?,
    );
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelGs {
    pub model_id: String,
    pub mode: ScoreMode,
    pub n_languages: usize,
    pub mean_g_s: f64,
    pub flag: String,
}

pub fn gs_flag(g: f64) -> &'static str {
    if g == GS_REFERENCE {
        "no stereotyping"
    } else if g > GS_REFERENCE {
        "stereotypical"
    } else {
        "anti-stereotypical"
    }
}

/// Per-model mean of `g_s` over languages.
pub fn gs_by_model(summaries: &[GroupSummary]) -> Vec<ModelGs> {
    let mut acc: BTreeMap<(String, ScoreMode), Vec<f64>> = BTreeMap::new();
    for s in summaries {
        acc.entry((s.overall.model_id.clone(), s.overall.template_mode))
            .or_default()
            .push(s.overall.g_s);
    }
    acc.into_iter()
        .map(|((model_id, mode), gs)| {
            let mean = gs.iter().sum::<f64>() / gs.len() as f64;
            ModelGs {
                model_id,
                mode,
                n_languages: gs.len(),
                mean_g_s: mean,
                flag: gs_flag(mean).to_string(),
            }
        })
        .collect()
}

#[derive(Serialize)]
struct GsChart<'a> {
    reference_line: f64,
    by_model: &'a [ModelGs],
    by_language: Vec<GsPoint<'a>>,
}

#[derive(Serialize)]
struct GsPoint<'a> {
    model_id: &'a str,
    lang: &'a str,
    mode: ScoreMode,
    g_s: f64,
}

pub fn render_gs_report(summaries: &[GroupSummary]) -> Result<Rendered> {
    let rows = summaries
        .iter()
        .map(|s| {
            let o = &s.overall;
            vec![
                o.model_id.clone(),
                o.lang.clone(),
                o.template_mode.to_string(),
                num(o.q_f),
                num(o.q_m),
                num(o.proxy_default),
                num(o.g_s),
            ]
        })
        .collect();
    let by_model = gs_by_model(summaries);
    let model_rows = by_model
        .iter()
        .map(|m| {
            vec![
                m.model_id.clone(),
                m.mode.to_string(),
                m.n_languages.to_string(),
                num(m.mean_g_s),
                num(GS_REFERENCE),
                m.flag.clone(),
            ]
        })
        .collect();
    let chart = GsChart {
        reference_line: GS_REFERENCE,
        by_model: &by_model,
        by_language: summaries
            .iter()
            .map(|s| GsPoint {
                model_id: &s.overall.model_id,
                lang: &s.overall.lang,
                mode: s.overall.template_mode,
                g_s: s.overall.g_s,
            })
            .collect(),
    };
    let mut out = Rendered::new();
    out.insert(
        "gs/by_language.csv".into(),
        csv_bytes(&["model", "lang", "mode", "q_f", "q_m", "proxy_default", "g_s"], rows)?,
    );
    out.insert(
        "gs/by_model.csv".into(),
        csv_bytes(
            &["model", "mode", "n_languages", "mean_g_s", "reference", "flag"],
            model_rows,
        )?,
    );
    let mut json = serde_json::to_vec_pretty(&chart)?;
    json.push(b'\n');
    out.insert("gs/chart.json".into(), json);
    Ok(out)
}

pub fn render_agreement(name: &str, report: &AgreementReport) -> Result<Rendered> {
    let rows = report
        .pairs
        .iter()
        .map(|p| {
            vec![
                p.annotator_a.clone(),
                p.annotator_b.clone(),
                p.n_common.to_string(),
                p.da_pearson.map(|x| num(x.rho)).unwrap_or_default(),
                p.da_pearson.map(|x| num(x.p_value)).unwrap_or_default(),
                p.label_kappa.unwrap_or(Kappa::Undefined).to_string(),
                p.label_disagreements.to_string(),
            ]
        })
        .collect();
    let stem = file_stem(name);
    let mut out = Rendered::new();
    out.insert(
        format!("agreement/{stem}.csv"),
        csv_bytes(
            &["annotator_a", "annotator_b", "n", "pearson_rho", "pearson_p", "kappa", "label_disagreements"],
            rows,
        )?,
    );
    out.insert(format!("agreement/{stem}.txt"), agreement_text(name, report).into_bytes());
    Ok(out)
}

/// Plain-text agreement summary.
pub fn agreement_text(name: &str, report: &AgreementReport) -> String {
    let mut s = format!("agreement: {name}\nrecords: {}\n", report.n_records);
    for (a, m) in &report.mean_da {
        s.push_str(&format!("mean DA {a}: {m:.2}\n"));
    }
    for p in &report.pairs {
        let rho = match (&p.da_pearson, &p.da_note) {
            (Some(x), _) => format!("rho {:.4} (p {:.4})", x.rho, x.p_value),
            (None, Some(note)) => format!("rho - ({note})"),
            (None, None) => "rho -".into(),
        };
        let kappa = match p.label_kappa {
            Some(Kappa::Value(k)) => format!("kappa {k:.4}"),
            _ => "kappa - (no label variation)".into(),
        };
        s.push_str(&format!(
            "{} vs {}: n {}, {rho}, {kappa}, label disagreements {}\n",
            p.annotator_a, p.annotator_b, p.n_common, p.label_disagreements
        ));
    }
    match report.mean_kappa {
        Some(k) => s.push_str(&format!("mean kappa: {k:.4}\n")),
        None => s.push_str("mean kappa: -\n"),
    }
    s
}

#[derive(Debug, Clone)]
pub struct ReportInputs {
    pub entries: Vec<DatasetEntry>,
    pub discards: Vec<DiscardRecord>,
    pub scores: Vec<SentenceScore>,
    pub proxy_sets: ProxySets,
    /// Named agreement reports, e.g. one per language.
    pub agreements: Vec<(String, AgreementReport)>,
    /// Languages every rank heatmap must contain.
    pub languages: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkippedGroup {
    pub model_id: String,
    pub lang: String,
    pub mode: ScoreMode,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportManifest {
    pub schema_version: u32,
    pub proxy_sets: ProxySets,
    pub notes: Vec<String>,
    pub inputs: BTreeMap<String, String>,
    pub groups: Vec<GroupKey>,
    pub skipped_groups: Vec<SkippedGroup>,
    pub files: BTreeMap<String, String>,
}

fn digest_rows<T: Serialize>(rows: &[T]) -> Result<String> {
    let mut h = Sha256::new();
    for r in rows {
        h.update(serde_json::to_vec(r)?);
        h.update(b"\n");
    }
    Ok(hex::encode(h.finalize()))
}

/// Summaries for every group that has all sixteen stereotypes and a
/// non-zero feminine mean; the rest are reported as skipped.
pub fn summarize_all(
    scores: &[SentenceScore],
    proxy_sets: &ProxySets,
) -> Result<(Vec<GroupSummary>, Vec<SkippedGroup>)> {
    let mut done = Vec::new();
    let mut skipped = Vec::new();
    for (key, group) in group_scores(scores) {
        match summarize(&group, proxy_sets) {
            Ok(s) => done.push(s),
            Err(e @ (Error::MissingStereotypes(_) | Error::Undefined(_) | Error::Precondition(_))) => {
                skipped.push(SkippedGroup {
                    model_id: key.model_id,
                    lang: key.lang,
                    mode: key.mode,
                    reason: e.to_string(),
                })
            }
            Err(e) => return Err(e),
        }
    }
    Ok((done, skipped))
}

pub fn render_report(inputs: &ReportInputs) -> Result<(Rendered, ReportManifest)> {
    inputs.proxy_sets.validate()?;
    let mut out = render_dataset_stats(&dataset_stats(&inputs.entries, &inputs.discards))?;
    let (summaries, skipped_groups) = summarize_all(&inputs.scores, &inputs.proxy_sets)?;
    let matrices = rank_matrices(&summaries, inputs.languages.as_deref())?;
    out.extend(render_rank_heatmaps(&matrices)?);
    out.extend(render_q_scores(&summaries)?);
    out.extend(render_gs_report(&summaries)?);
    for (name, rep) in &inputs.agreements {
        out.extend(render_agreement(name, rep)?);
    }

    let mut notes = Vec::new();
    let all_masc = crate::corpus::masculine_ids();
    if inputs.proxy_sets.masculine.len() != 7 {
        notes.push(format!(
            "proxy default averages {} feminine and {} masculine stereotypes; a seven-and-seven split is ambiguous because {} masculine stereotypes exist",
            inputs.proxy_sets.feminine.len(),
            inputs.proxy_sets.masculine.len(),
            all_masc.len()
        ));
    }
    let mut input_digests = BTreeMap::new();
    input_digests.insert("dataset".to_string(), digest_rows(&inputs.entries)?);
    input_digests.insert("discards".to_string(), digest_rows(&inputs.discards)?);
    input_digests.insert("scores".to_string(), digest_rows(&inputs.scores)?);
    let manifest = ReportManifest {
        schema_version: REPORT_SCHEMA_VERSION,
        proxy_sets: inputs.proxy_sets.clone(),
        notes,
        inputs: input_digests,
        groups: summaries
            .iter()
            .map(|s| GroupKey {
                model_id: s.overall.model_id.clone(),
                lang: s.overall.lang.clone(),
                mode: s.overall.template_mode,
            })
            .collect(),
        skipped_groups,
        files: out.iter().map(|(k, v)| (k.clone(), sha256_hex(v))).collect(),
    };
    let mut json = serde_json::to_vec_pretty(&manifest)?;
    json.push(b'\n');
    out.insert(MANIFEST.into(), json);
    Ok((out, manifest))
}

pub fn write_rendered(dir: impl AsRef<Path>, files: &Rendered) -> Result<()> {
    let dir = dir.as_ref();
    for (rel, bytes) in files {
        let path = dir.join(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

/// Replaces the report under `dir`. Stale files in the report
/// subdirectories are removed.
pub fn write_report(inputs: &ReportInputs, dir: impl AsRef<Path>) -> Result<ReportManifest> {
    let dir = dir.as_ref();
    let (files, manifest) = render_report(inputs)?;
    for sub in SUBDIRS {
        let p = dir.join(sub);
        if p.exists() {
            fs::remove_dir_all(&p).map_err(|e| Error::io(&p, e))?;
        }
    }
    write_rendered(dir, &files)?;
    Ok(manifest)
}

fn list_files(root: &Path, rel: &str, out: &mut BTreeSet<String>) -> Result<()> {
    let p = root.join(rel);
    if !p.is_dir() {
        return Ok(());
    }
    for entry in fs::read_dir(&p).map_err(|e| Error::io(&p, e))? {
        let entry = entry.map_err(|e| Error::io(&p, e))?;
        let name = format!("{rel}/{}", entry.file_name().to_string_lossy());
        if entry.path().is_dir() {
            list_files(root, &name, out)?;
        } else {
            out.insert(name);
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerifyOutcome {
    pub checked: usize,
    pub mismatched: Vec<String>,
    pub missing: Vec<String>,
    pub unexpected: Vec<String>,
}

impl VerifyOutcome {
    pub fn is_ok(&self) -> bool {
        self.mismatched.is_empty() && self.missing.is_empty() && self.unexpected.is_empty()
    }
}

/// Recomputes the report from its inputs and compares it byte for byte
/// with the files under `dir`.
pub fn verify_report(inputs: &ReportInputs, dir: impl AsRef<Path>) -> Result<VerifyOutcome> {
    let dir = dir.as_ref();
    let (files, _) = render_report(inputs)?;
    let mut outcome = VerifyOutcome::default();
    for (rel, expected) in &files {
        outcome.checked += 1;
        match fs::read(dir.join(rel)) {
            Ok(got) if &got == expected => {}
            Ok(_) => outcome.mismatched.push(rel.clone()),
            Err(_) => outcome.missing.push(rel.clone()),
        }
    }
    let mut on_disk = BTreeSet::new();
    for sub in SUBDIRS {
        list_files(dir, sub, &mut on_disk)?;
    }
    outcome.unexpected = on_disk
        .into_iter()
        .filter(|f| !files.contains_key(f))
        .collect();
    Ok(outcome)
}
