//! Command-line front end.
//!
//! Output layout under `--out`:
//!
//! ```text
//! dataset/<lang>.jsonl            entries
//! dataset/<lang>.discards.jsonl   discard records
//! dataset/<lang>.manifest.json    run manifest
//! scores/<model>.jsonl            score dump
//! validation/<lang>.csv           annotation batch
//! report/                         stats/ ranks/ gs/ agreement/ manifest.json
//! cache/                          backend responses (unless --cache-dir)
//! ```
//!
//! Exit codes: 0 success, 1 runtime error, 2 usage or configuration error,
//! 3 partial backend failure (outputs written), 4 verify mismatch.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Parser, Subcommand};
use serde::Serialize;
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::backends::{run_chunked, ResponseCache};
use crate::config::Config;
use crate::corpus::{
    load_source_corpus, read_dataset, seed_count_mismatches, write_dataset, DatasetEntry, EntryKind,
    EXPECTED_SEED_TOTAL,
};
use crate::error::{Error, Result};
use crate::expansion::{expand_language, read_discards, write_discards, DiscardReason, DiscardRecord};
use crate::metrics::{agreement_report, load_annotations, sample_validation_batch, AgreementReport};
use crate::report::{
    agreement_text, emit_dataset_stats, render_agreement, verify_report, write_rendered,
    write_report, ReportInputs,
};
use crate::scoring::{read_scores, score_entries, write_scores, ModeRequest, SentenceScore};

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_PARTIAL: i32 = 3;
pub const EXIT_MISMATCH: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "stereobench", version, about = "Multilingual gender-stereotype benchmark harness")]
pub struct Cli {
    /// Run configuration (TOML).
    #[arg(long, global = true, default_value = "stereobench.toml")]
    pub config: PathBuf,
    /// Languages to process; defaults to the configured list.
    #[arg(long, global = true, value_delimiter = ',')]
    pub lang: Vec<String>,
    /// Models to score; defaults to every configured model.
    #[arg(long, global = true, value_delimiter = ',')]
    pub model: Vec<String>,
    #[arg(long, global = true, default_value = "auto",
          value_parser = ["gendered-pair", "noun", "pronoun", "auto"])]
    pub mode: String,
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub cache_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    pub max_inflight: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build the dataset for the selected languages.
    Expand,
    /// Dataset statistics tables.
    Stats,
    /// Stratified batch of entries for human annotation.
    SampleValidation {
        #[arg(long)]
        size: Option<usize>,
    },
    /// Agreement statistics from annotation CSVs.
    Agreement {
        /// `name=path` pairs; defaults to the configured annotations.
        #[arg(long = "annotations", value_delimiter = ',')]
        annotations: Vec<String>,
    },
    /// Score dataset entries with the selected models.
    Score,
    /// Aggregate scores and write the report directory.
    Report,
    /// Recompute the report and compare it with the files on disk.
    Verify,
}

struct Outcome {
    code: i32,
    summary: serde_json::Value,
}

impl Outcome {
    fn ok(summary: serde_json::Value) -> Self {
        Outcome { code: EXIT_OK, summary }
    }
}

fn error_kind(e: &Error) -> (&'static str, i32) {
    match e {
        Error::Config(_) => ("config", EXIT_USAGE),
        Error::UnknownLanguage(_) => ("unknown-language", EXIT_USAGE),
        Error::NoPronounTemplates(_) => ("no-pronoun-templates", EXIT_USAGE),
        Error::Backend(b) if b.is_fatal() => ("backend-fatal", EXIT_RUNTIME),
        Error::Backend(_) => ("backend", EXIT_RUNTIME),
        Error::Io { .. } => ("io", EXIT_RUNTIME),
        Error::Parse { .. } | Error::Json(_) | Error::Csv(_) => ("parse", EXIT_RUNTIME),
        _ => ("runtime", EXIT_RUNTIME),
    }
}

fn emit_error(kind: &str, code: i32, message: &str) {
    let body = json!({ "error": kind, "message": message, "exit_code": code });
    eprintln!("{body}");
}

/// Parses `args` (including the program name), runs the subcommand and
/// returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return EXIT_OK;
            }
            emit_error("usage", EXIT_USAGE, &e.to_string());
            return EXIT_USAGE;
        }
    };
    match execute(&cli) {
        Ok(outcome) => {
            println!("{}", outcome.summary);
            outcome.code
        }
        Err(e) => {
            let (kind, code) = error_kind(&e);
            emit_error(kind, code, &e.to_string());
            code
        }
    }
}

fn load_config(cli: &Cli) -> Result<Config> {
    let mut cfg = Config::load(&cli.config).map_err(|e| match e {
        Error::Io { path, source } => {
            Error::Config(format!("cannot read {}: {source}", path.display()))
        }
        other => other,
    })?;
    let cwd = std::env::current_dir().map_err(|e| Error::io(".", e))?;
    if let Some(out) = &cli.out {
        cfg.out = cwd.join(out);
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(dir) = &cli.cache_dir {
        cfg.cache_dir = Some(cwd.join(dir));
    }
    if let Some(n) = cli.max_inflight {
        if n == 0 {
            return Err(Error::Config("--max-inflight must be at least 1".into()));
        }
        cfg.max_inflight = n;
    }
    Ok(cfg)
}

fn execute(cli: &Cli) -> Result<Outcome> {
    let cfg = load_config(cli)?;
    match &cli.command {
        Command::Expand => expand(cli, &cfg),
        Command::Stats => stats(cli, &cfg),
        Command::SampleValidation { size } => sample_validation(cli, &cfg, *size),
        Command::Agreement { annotations } => agreement(&cfg, annotations),
        Command::Score => score(cli, &cfg),
        Command::Report => report(cli, &cfg),
        Command::Verify => verify(cli, &cfg),
    }
}

fn dataset_dir(cfg: &Config) -> PathBuf {
    cfg.out_dir().join("dataset")
}

fn scores_dir(cfg: &Config) -> PathBuf {
    cfg.out_dir().join("scores")
}

fn report_dir(cfg: &Config) -> PathBuf {
    cfg.out_dir().join("report")
}

fn languages(cli: &Cli, cfg: &Config) -> Result<Vec<String>> {
    let langs = if cli.lang.is_empty() { cfg.languages.clone() } else { cli.lang.clone() };
    if langs.is_empty() {
        return Err(Error::Config("no languages selected (use --lang or `languages`)".into()));
    }
    let registry = cfg.registry()?;
    for l in &langs {
        registry.get(l)?;
    }
    Ok(langs)
}

/// Languages with a dataset file on disk, or the selected ones.
fn dataset_languages(cli: &Cli, cfg: &Config) -> Result<Vec<String>> {
    if !cli.lang.is_empty() {
        return languages(cli, cfg);
    }
    let dir = dataset_dir(cfg);
    let mut langs = Vec::new();
    if dir.is_dir() {
        for e in std::fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))? {
            let name = e.map_err(|e| Error::io(&dir, e))?.file_name();
            let name = name.to_string_lossy();
            if let Some(lang) = name.strip_suffix(".jsonl") {
                if !lang.contains('.') {
                    langs.push(lang.to_string());
                }
            }
        }
    }
    langs.sort();
    if langs.is_empty() {
        return Err(Error::Precondition(format!(
            "no datasets under {}; run `expand` first",
            dir.display()
        )));
    }
    Ok(langs)
}

fn sha256_json<T: Serialize>(v: &T) -> Result<String> {
    Ok(hex::encode(Sha256::digest(serde_json::to_vec(v)?)))
}

fn cache(cfg: &Config) -> Arc<ResponseCache> {
    Arc::new(ResponseCache::on_disk(cfg.cache_path()))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn expand(cli: &Cli, cfg: &Config) -> Result<Outcome> {
    let langs = languages(cli, cfg)?;
    let registry = cfg.registry()?;
    let corpus = load_source_corpus(cfg.corpus_path()?)?;
    if corpus.len() == EXPECTED_SEED_TOTAL {
        for (id, want, got) in seed_count_mismatches(&corpus) {
            tracing::warn!(stereotype = id, expected = want, found = got, "seed count differs");
        }
    }
    let cache = cache(cfg);
    let translator = cfg.translator(&cache)?;
    let qe = cfg.qe(&cache)?;
    let exp_cfg = cfg.expansion();
    let config_digest = sha256_json(cfg)?;

    let results = run_chunked(&langs, 1, cfg.max_inflight, |chunk| {
        chunk
            .iter()
            .map(|lang| {
                let profile = registry.get(lang)?;
                tracing::info!(lang = %lang, sentences = corpus.len(), "expanding");
                let exp = expand_language(&corpus, profile, &*translator, &*qe, &exp_cfg)?;
                Ok((lang.clone(), profile.clone(), exp))
            })
            .collect::<Vec<Result<_>>>()
    });

    let dir = dataset_dir(cfg);
    let mut per_lang = BTreeMap::new();
    let mut partial = false;
    for r in results {
        let (lang, profile, exp) = r?;
        write_dataset(&exp.entries, dir.join(format!("{lang}.jsonl")))?;
        write_discards(&exp.discards, dir.join(format!("{lang}.discards.jsonl")))?;
        let tallies: BTreeMap<&str, usize> = exp
            .discard_counts()
            .into_iter()
            .map(|(r, n)| (r.code(), n))
            .collect();
        let failed = tallies[DiscardReason::TranslationFailed.code()];
        partial |= failed > 0;
        let manifest = json!({
            "schema_version": 1,
            "lang": lang,
            "seed_sentences": corpus.len(),
            "gendered": exp.count(EntryKind::Gendered),
            "neutral": exp.count(EntryKind::Neutral),
            "discards": tallies,
            "translator": translator.provider_id(),
            "qe_provider": qe.provider_id(),
            "responses_digest": exp.responses_digest,
            "config_digest": config_digest,
            "profile_digest": sha256_json(&profile)?,
            "warnings": exp.warnings,
        });
        write_json(&dir.join(format!("{lang}.manifest.json")), &manifest)?;
        per_lang.insert(lang, manifest);
    }
    Ok(Outcome {
        code: if partial { EXIT_PARTIAL } else { EXIT_OK },
        summary: json!({ "command": "expand", "languages": per_lang }),
    })
}

struct LoadedDatasets {
    entries: Vec<DatasetEntry>,
    discards: Vec<DiscardRecord>,
    rejected: usize,
}

fn load_datasets(cfg: &Config, langs: &[String]) -> Result<LoadedDatasets> {
    let dir = dataset_dir(cfg);
    let mut out = LoadedDatasets { entries: Vec::new(), discards: Vec::new(), rejected: 0 };
    for lang in langs {
        let read = read_dataset(dir.join(format!("{lang}.jsonl")), &cfg.heuristic)?;
        out.rejected += read.rejected.len();
        out.entries.extend(read.entries);
        let dpath = dir.join(format!("{lang}.discards.jsonl"));
        if dpath.exists() {
            out.discards.extend(read_discards(&dpath)?);
        }
    }
    Ok(out)
}

fn stats(cli: &Cli, cfg: &Config) -> Result<Outcome> {
    let langs = dataset_languages(cli, cfg)?;
    let data = load_datasets(cfg, &langs)?;
    let stats = emit_dataset_stats(&data.entries, &data.discards, report_dir(cfg))?;
    let per_lang: BTreeMap<&String, serde_json::Value> = stats
        .languages
        .iter()
        .map(|(l, c)| {
            (l, json!({ "gendered": c.gendered, "neutral": c.neutral,
                        "discarded": c.discards.values().sum::<usize>() }))
        })
        .collect();
    Ok(Outcome::ok(json!({
        "command": "stats",
        "gendered": stats.total(EntryKind::Gendered),
        "neutral": stats.total(EntryKind::Neutral),
        "rejected_records": data.rejected,
        "languages": per_lang,
    })))
}

fn sample_validation(cli: &Cli, cfg: &Config, size: Option<usize>) -> Result<Outcome> {
    let langs = dataset_languages(cli, cfg)?;
    let n = size.unwrap_or(cfg.validation_size);
    let mut written = BTreeMap::new();
    for lang in &langs {
        let data = load_datasets(cfg, std::slice::from_ref(lang))?;
        let batch = sample_validation_batch(&data.entries, n.min(data.entries.len()), cfg.seed)?;
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "sentence_id", "lang", "kind", "stereotype_id", "masc_text", "fem_text",
            "annotator_id", "da_score", "gender_label",
        ])?;
        for e in &batch {
            w.write_record([
                e.entry_id.as_str(),
                e.lang.as_str(),
                e.kind.as_str(),
                &e.stereotype_id.to_string(),
                e.masc_text.as_str(),
                e.fem_text.as_str(),
                "",
                "",
                "",
            ])?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Precondition(e.to_string()))?;
        let path = cfg.out_dir().join("validation").join(format!("{lang}.csv"));
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        std::fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        let gendered = batch.iter().filter(|e| e.kind == EntryKind::Gendered).count();
        written.insert(lang.clone(), json!({ "n": batch.len(), "gendered": gendered,
                                             "path": path.display().to_string() }));
    }
    Ok(Outcome::ok(json!({ "command": "sample-validation", "languages": written })))
}

fn annotation_sources(cfg: &Config, flags: &[String]) -> Result<BTreeMap<String, PathBuf>> {
    if flags.is_empty() {
        return Ok(cfg
            .annotations
            .iter()
            .map(|(k, p)| (k.clone(), cfg.resolve(p)))
            .collect());
    }
    flags
        .iter()
        .map(|f| match f.split_once('=') {
            Some((name, path)) if !name.is_empty() => Ok((name.to_string(), PathBuf::from(path))),
            _ => {
                let p = PathBuf::from(f);
                let name = p
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .ok_or_else(|| Error::Config(format!("bad --annotations value `{f}`")))?;
                Ok((name, p))
            }
        })
        .collect()
}

fn agreements(cfg: &Config, sources: &BTreeMap<String, PathBuf>) -> Result<Vec<(String, AgreementReport)>> {
    sources
        .iter()
        .map(|(name, path)| {
            let recs = load_annotations(path)?;
            Ok((name.clone(), agreement_report(&recs, cfg.permutations, cfg.seed)?))
        })
        .collect()
}

fn agreement(cfg: &Config, flags: &[String]) -> Result<Outcome> {
    let sources = annotation_sources(cfg, flags)?;
    if sources.is_empty() {
        return Err(Error::Config("no annotation files (use --annotations or `annotations`)".into()));
    }
    let reports = agreements(cfg, &sources)?;
    let dir = report_dir(cfg);
    let mut summary = BTreeMap::new();
    for (name, rep) in &reports {
        write_rendered(&dir, &render_agreement(name, rep)?)?;
        tracing::info!("{}", agreement_text(name, rep).trim_end());
        summary.insert(name.clone(), json!({ "records": rep.n_records,
                                             "pairs": rep.pairs.len(),
                                             "mean_kappa": rep.mean_kappa }));
    }
    Ok(Outcome::ok(json!({ "command": "agreement", "reports": summary })))
}

fn score(cli: &Cli, cfg: &Config) -> Result<Outcome> {
    let request: ModeRequest = cli.mode.parse()?;
    let langs = if cli.lang.is_empty() { dataset_languages(cli, cfg)? } else { languages(cli, cfg)? };
    let registry = cfg.registry()?;
    for lang in &langs {
        request.check(registry.get(lang)?)?;
    }
    let models: Vec<_> = if cli.model.is_empty() {
        cfg.models.iter().collect()
    } else {
        cli.model.iter().map(|m| cfg.model(m)).collect::<Result<_>>()?
    };
    if models.is_empty() {
        return Err(Error::Config("no models configured".into()));
    }
    let data = load_datasets(cfg, &langs)?;
    let cache = cache(cfg);
    let scorer = cfg.scorer(&cache)?;
    let mut per_model = BTreeMap::new();
    let mut partial = false;
    for m in models {
        tracing::info!(model = %m.id, entries = data.entries.len(), "scoring");
        let run = score_entries(&data.entries, &m.model_ref(), request, &registry, &*scorer)?;
        write_scores(&run.scores, scores_dir(cfg).join(format!("{}.jsonl", m.id)))?;
        partial |= !run.skipped.is_empty();
        per_model.insert(m.id.clone(), json!({ "scored": run.scores.len(),
                                               "skipped": run.skipped.len() }));
    }
    Ok(Outcome {
        code: if partial { EXIT_PARTIAL } else { EXIT_OK },
        summary: json!({ "command": "score", "mode": cli.mode, "models": per_model }),
    })
}

fn load_scores(cfg: &Config, cli: &Cli) -> Result<Vec<SentenceScore>> {
    let dir = scores_dir(cfg);
    let mut files = Vec::new();
    if dir.is_dir() {
        for e in std::fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))? {
            let p = e.map_err(|e| Error::io(&dir, e))?.path();
            let keep = p.extension().is_some_and(|x| x == "jsonl")
                && (cli.model.is_empty()
                    || p.file_stem().is_some_and(|s| cli.model.iter().any(|m| s == m.as_str())));
            if keep {
                files.push(p);
            }
        }
    }
    files.sort();
    let mut scores = Vec::new();
    for f in files {
        scores.extend(read_scores(&f)?);
    }
    if !cli.lang.is_empty() {
        scores.retain(|s| cli.lang.contains(&s.lang));
    }
    Ok(scores)
}

fn report_inputs(cli: &Cli, cfg: &Config) -> Result<ReportInputs> {
    let langs = dataset_languages(cli, cfg)?;
    let data = load_datasets(cfg, &langs)?;
    let scores = load_scores(cfg, cli)?;
    let sources = annotation_sources(cfg, &[])?;
    Ok(ReportInputs {
        entries: data.entries,
        discards: data.discards,
        scores,
        proxy_sets: cfg.proxy.clone(),
        agreements: agreements(cfg, &sources)?,
        languages: None,
    })
}

fn report(cli: &Cli, cfg: &Config) -> Result<Outcome> {
    let inputs = report_inputs(cli, cfg)?;
    let manifest = write_report(&inputs, report_dir(cfg))?;
    Ok(Outcome::ok(json!({
        "command": "report",
        "groups": manifest.groups.len(),
        "skipped_groups": manifest.skipped_groups,
        "files": manifest.files.len(),
    })))
}

fn verify(cli: &Cli, cfg: &Config) -> Result<Outcome> {
    let inputs = report_inputs(cli, cfg)?;
    let outcome = verify_report(&inputs, report_dir(cfg))?;
    Ok(Outcome {
        code: if outcome.is_ok() { EXIT_OK } else { EXIT_MISMATCH },
        summary: json!({ "command": "verify", "ok": outcome.is_ok(), "result": outcome }),
    })
}
