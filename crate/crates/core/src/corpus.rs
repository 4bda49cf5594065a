//! Seed corpus, stereotype taxonomy and dataset persistence.
//!
//! The seed corpus is a list of English first-person sentences, each tagged
//! with one of sixteen gendered stereotypes. Datasets produced from it are
//! stored as JSON lines, one [`DatasetEntry`] per line.

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::expansion::{classify_pair, PairClass, PairHeuristicConfig};

/// Version written into every dataset record.
pub const DATASET_SCHEMA_VERSION: u32 = 1;

/// Number of stereotypes in the taxonomy.
pub const STEREOTYPE_COUNT: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StereotypeGender {
    Feminine,
    Masculine,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StereotypeInfo {
    pub id: u8,
    pub gender: StereotypeGender,
    pub label: &'static str,
    pub expected_seed_count: usize,
}

const fn fem(id: u8, label: &'static str, n: usize) -> StereotypeInfo {
    StereotypeInfo {
        id,
        gender: StereotypeGender::Feminine,
        label,
        expected_seed_count: n,
    }
}

const fn masc(id: u8, label: &'static str, n: usize) -> StereotypeInfo {
    StereotypeInfo {
        id,
        gender: StereotypeGender::Masculine,
        label,
        expected_seed_count: n,
    }
}

/// The sixteen stereotypes, ordered by id. Ids 1-7 are "women are ...",
/// ids 8-16 are "men are ...".
pub const STEREOTYPES: [StereotypeInfo; STEREOTYPE_COUNT] = [
    fem(1, "emotional and irrational", 254),
    fem(2, "gentle, kind, and submissive", 215),
    fem(3, "empathetic and caring", 256),
    fem(4, "neat and diligent", 207),
    fem(5, "social", 200),
    fem(6, "weak", 197),
    fem(7, "beautiful", 243),
    masc(8, "tough and rough", 251),
    masc(9, "self-confident", 229),
    masc(10, "professional", 215),
    masc(11, "rational", 231),
    masc(12, "providers", 222),
    masc(13, "leaders", 222),
    masc(14, "childish", 194),
    masc(15, "sexual", 208),
    masc(16, "strong", 221),
];

/// Total size of the published seed corpus.
pub const EXPECTED_SEED_TOTAL: usize = 3565;

pub fn stereotype(id: u8) -> Option<&'static StereotypeInfo> {
    STEREOTYPES.get(usize::from(id).checked_sub(1)?)
}

pub fn feminine_ids() -> Vec<u8> {
    ids_with(StereotypeGender::Feminine)
}

pub fn masculine_ids() -> Vec<u8> {
    ids_with(StereotypeGender::Masculine)
}

fn ids_with(gender: StereotypeGender) -> Vec<u8> {
    STEREOTYPES
        .iter()
        .filter(|s| s.gender == gender)
        .map(|s| s.id)
        .collect()
}

fn check_stereotype(raw: i64) -> Result<u8> {
    match u8::try_from(raw) {
        Ok(id) if stereotype(id).is_some() => Ok(id),
        _ => Err(Error::UnknownStereotype(raw)),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceSentence {
    pub id: String,
    pub text: String,
    pub stereotype_id: u8,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum SeedFormat {
    JsonLines,
    Delimited(u8),
}

fn sniff_format(path: &Path, first_line: Option<&str>) -> SeedFormat {
    match path.extension().and_then(|e| e.to_str()) {
        Some("jsonl") | Some("json") => return SeedFormat::JsonLines,
        Some("tsv") => return SeedFormat::Delimited(b'\t'),
        Some("csv") => return SeedFormat::Delimited(b','),
        _ => {}
    }
    match first_line {
        Some(l) if l.trim_start().starts_with('{') => SeedFormat::JsonLines,
        Some(l) if l.contains('\t') => SeedFormat::Delimited(b'\t'),
        _ => SeedFormat::Delimited(b','),
    }
}

#[derive(Deserialize)]
struct SeedJson {
    #[serde(default)]
    id: Option<serde_json::Value>,
    #[serde(alias = "sentence")]
    text: String,
    #[serde(alias = "stereotype_id")]
    stereotype: i64,
}

fn id_string(v: serde_json::Value) -> String {
    match v {
        serde_json::Value::String(s) => s,
        other => other.to_string(),
    }
}

/// Loads the seed corpus from JSON lines, TSV or CSV.
///
/// Delimited files need a header row with a `text` (or `sentence`) column and
/// a `stereotype` column; an `id` column is optional. Rows without an id get
/// `s<line>`.
pub fn load_source_corpus(path: impl AsRef<Path>) -> Result<Vec<SourceSentence>> {
    let path = path.as_ref();
    let raw = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let first = raw.lines().find(|l| !l.trim().is_empty());
    let out = match sniff_format(path, first) {
        SeedFormat::JsonLines => parse_seed_jsonl(path, &raw)?,
        SeedFormat::Delimited(d) => parse_seed_delimited(path, &raw, d)?,
    };
    if out.is_empty() {
        tracing::warn!(path = %path.display(), "seed corpus is empty");
    }
    let mut seen = HashSet::new();
    for s in &out {
        if !seen.insert(s.id.as_str()) {
            return Err(Error::Precondition(format!("duplicate sentence id `{}`", s.id)));
        }
    }
    Ok(out)
}

fn parse_seed_jsonl(path: &Path, raw: &str) -> Result<Vec<SourceSentence>> {
    let mut out = Vec::new();
    for (i, line) in raw.lines().enumerate() {
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let row: SeedJson =
            serde_json::from_str(line).map_err(|e| Error::parse(path, lineno, e.to_string()))?;
        out.push(seed_row(path, lineno, row.id.map(id_string), row.text, row.stereotype)?);
    }
    Ok(out)
}

fn parse_seed_delimited(path: &Path, raw: &str, delimiter: u8) -> Result<Vec<SourceSentence>> {
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .flexible(false)
        .from_reader(raw.as_bytes());
    let headers = reader.headers().map_err(|e| Error::parse(path, 1, e.to_string()))?.clone();
    let col = |names: &[&str]| headers.iter().position(|h| names.contains(&h.trim()));
    let text_col = col(&["text", "sentence"])
        .ok_or_else(|| Error::parse(path, 1, "missing `text` column"))?;
    let st_col = col(&["stereotype", "stereotype_id"])
        .ok_or_else(|| Error::parse(path, 1, "missing `stereotype` column"))?;
    let id_col = col(&["id"]);

    let mut out = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            Error::parse(path, line, e.to_string())
        })?;
        let lineno = record.position().map_or(0, |p| p.line() as usize);
        let text = record.get(text_col).unwrap_or_default().to_string();
        let st_raw = record.get(st_col).unwrap_or_default().trim();
        let st: i64 = st_raw
            .parse()
            .map_err(|_| Error::parse(path, lineno, format!("bad stereotype `{st_raw}`")))?;
        let id = id_col.and_then(|c| record.get(c)).map(str::to_string);
        out.push(seed_row(path, lineno, id, text, st)?);
    }
    Ok(out)
}

fn seed_row(
    path: &Path,
    lineno: usize,
    id: Option<String>,
    text: String,
    stereotype: i64,
) -> Result<SourceSentence> {
    if text.trim().is_empty() {
        return Err(Error::parse(path, lineno, "empty sentence text"));
    }
    let stereotype_id = check_stereotype(stereotype)?;
    Ok(SourceSentence {
        id: id.filter(|s| !s.is_empty()).unwrap_or_else(|| format!("s{lineno}")),
        text,
        stereotype_id,
    })
}

/// Sentence count per stereotype id, all sixteen ids present.
pub fn count_by_stereotype(corpus: &[SourceSentence]) -> BTreeMap<u8, usize> {
    let mut counts: BTreeMap<u8, usize> = STEREOTYPES.iter().map(|s| (s.id, 0)).collect();
    for s in corpus {
        *counts.entry(s.stereotype_id).or_default() += 1;
    }
    counts
}

/// Ids whose count differs from the published seed counts, with (expected, actual).
pub fn seed_count_mismatches(corpus: &[SourceSentence]) -> Vec<(u8, usize, usize)> {
    let counts = count_by_stereotype(corpus);
    STEREOTYPES
        .iter()
        .filter_map(|s| {
            let got = counts[&s.id];
            (got != s.expected_seed_count).then_some((s.id, s.expected_seed_count, got))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EntryKind {
    Neutral,
    Gendered,
}

impl EntryKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EntryKind::Neutral => "neutral",
            EntryKind::Gendered => "gendered",
        }
    }
}

/// Where the masculine and feminine variants of a gendered pair differ.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiffLocation {
    pub word_index: usize,
    pub masc_word: String,
    pub fem_word: String,
    pub char_edits: usize,
}

/// Pipeline decisions recorded for an entry.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Provenance {
    pub translator: Option<String>,
    pub qe_provider: Option<String>,
    pub qe_masc: Option<f64>,
    pub qe_fem: Option<f64>,
    pub qe_skipped: bool,
    pub diff: Option<DiffLocation>,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetEntry {
    pub entry_id: String,
    pub source_id: String,
    pub lang: String,
    pub kind: EntryKind,
    pub masc_text: String,
    pub fem_text: String,
    pub stereotype_id: u8,
    pub provenance: Provenance,
}

/// Deterministic entry id for `(source_id, lang, kind)`.
pub fn entry_id(source_id: &str, lang: &str, kind: EntryKind) -> String {
    let mut h = Sha256::new();
    for part in [source_id, lang, kind.as_str()] {
        h.update(part.as_bytes());
        h.update([0x1f]);
    }
    let digest = h.finalize();
    format!("{lang}-{}", hex::encode(&digest[..8]))
}

impl DatasetEntry {
    /// Checks the kind/text invariants against the pairing heuristic.
    pub fn validate(&self, heuristic: &PairHeuristicConfig) -> std::result::Result<(), String> {
        if stereotype(self.stereotype_id).is_none() {
            return Err(format!("stereotype id {} out of range", self.stereotype_id));
        }
        if self.masc_text.is_empty() || self.fem_text.is_empty() {
            return Err("empty text".into());
        }
        match (self.kind, classify_pair(&self.masc_text, &self.fem_text, heuristic)) {
            (EntryKind::Neutral, PairClass::Neutral) => Ok(()),
            (EntryKind::Gendered, PairClass::Gendered(_)) => Ok(()),
            (EntryKind::Neutral, _) => Err("neutral entry with differing texts".into()),
            (EntryKind::Gendered, PairClass::Neutral) => {
                Err("gendered entry with equal texts".into())
            }
            (EntryKind::Gendered, PairClass::TooDifferent(why)) => {
                Err(format!("gendered texts are not a minimal pair: {why}"))
            }
        }
    }
}

#[derive(Serialize)]
struct RecordOut<'a> {
    schema_version: u32,
    #[serde(flatten)]
    entry: &'a DatasetEntry,
}

#[derive(Deserialize)]
struct RecordIn {
    schema_version: u32,
    #[serde(flatten)]
    entry: DatasetEntry,
}

pub fn write_dataset(entries: &[DatasetEntry], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    write_jsonl(path, entries.iter().map(|entry| RecordOut {
        schema_version: DATASET_SCHEMA_VERSION,
        entry,
    }))
}

pub(crate) fn write_jsonl<T: Serialize>(
    path: &Path,
    rows: impl IntoIterator<Item = T>,
) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for row in rows {
        serde_json::to_writer(&mut w, &row)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RejectedRecord {
    pub line: usize,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DatasetRead {
    pub entries: Vec<DatasetEntry>,
    pub rejected: Vec<RejectedRecord>,
}

impl DatasetRead {
    pub fn by_language(&self) -> BTreeMap<String, Vec<DatasetEntry>> {
        group_by_language(&self.entries)
    }
}

pub fn group_by_language(entries: &[DatasetEntry]) -> BTreeMap<String, Vec<DatasetEntry>> {
    let mut out: BTreeMap<String, Vec<DatasetEntry>> = BTreeMap::new();
    for e in entries {
        out.entry(e.lang.clone()).or_default().push(e.clone());
    }
    out
}

/// Reads a dataset file. Records that fail to parse or break an entry
/// invariant are skipped and reported in [`DatasetRead::rejected`].
pub fn read_dataset(
    path: impl AsRef<Path>,
    heuristic: &PairHeuristicConfig,
) -> Result<DatasetRead> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = DatasetRead::default();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let reject = |reason: String| RejectedRecord { line: i + 1, reason };
        match serde_json::from_str::<RecordIn>(&line) {
            Ok(r) if r.schema_version != DATASET_SCHEMA_VERSION => out
                .rejected
                .push(reject(format!("unsupported schema version {}", r.schema_version))),
            Ok(r) => match r.entry.validate(heuristic) {
                Ok(()) => out.entries.push(r.entry),
                Err(reason) => out.rejected.push(reject(reason)),
            },
            Err(e) => out.rejected.push(reject(e.to_string())),
        }
    }
    if !out.rejected.is_empty() {
        tracing::warn!(
            path = %path.display(),
            rejected = out.rejected.len(),
            "dataset records rejected on read"
        );
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tmp_file(name: &str, body: &str) -> (tempfile::TempDir, std::path::PathBuf) {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join(name);
        std::fs::File::create(&p).unwrap().write_all(body.as_bytes()).unwrap();
        (dir, p)
    }

    fn neutral(source: &str, lang: &str, text: &str) -> DatasetEntry {
        DatasetEntry {
            entry_id: entry_id(source, lang, EntryKind::Neutral),
            source_id: source.into(),
            lang: lang.into(),
            kind: EntryKind::Neutral,
            masc_text: text.into(),
            fem_text: text.into(),
            stereotype_id: 3,
            provenance: Provenance::default(),
        }
    }

    #[test]
    fn taxonomy_matches_published_table() {
        let counts: Vec<usize> = STEREOTYPES.iter().map(|s| s.expected_seed_count).collect();
        assert_eq!(
            counts,
            [254, 215, 256, 207, 200, 197, 243, 251, 229, 215, 231, 222, 222, 194, 208, 221]
        );
        assert_eq!(counts.iter().sum::<usize>(), EXPECTED_SEED_TOTAL);
        assert_eq!(feminine_ids(), (1..=7).collect::<Vec<_>>());
        assert_eq!(masculine_ids(), (8..=16).collect::<Vec<_>>());
        for (i, s) in STEREOTYPES.iter().enumerate() {
            assert_eq!(usize::from(s.id), i + 1);
        }
    }

    #[test]
    fn loads_tsv_and_jsonl() {
        let (_d, p) = tmp_file("seed.tsv", "id\ttext\tstereotype\na\tI am emotional\t1\nb\tI lead\t13\n");
        let c = load_source_corpus(&p).unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c[1], SourceSentence { id: "b".into(), text: "I lead".into(), stereotype_id: 13 });

        let (_d, p) = tmp_file(
            "seed.jsonl",
            "{\"text\": \"I cry\", \"stereotype\": 1}\n\n{\"id\": 7, \"sentence\": \"I fix it\", \"stereotype\": 16}\n",
        );
        let c = load_source_corpus(&p).unwrap();
        assert_eq!(c[0].id, "s1");
        assert_eq!(c[1].id, "7");
        assert_eq!(c[1].stereotype_id, 16);
    }

    #[test]
    fn loads_gest_style_csv() {
        let (_d, p) = tmp_file("gest.csv", "sentence,stereotype\n\"I cried, a lot\",1\n");
        let c = load_source_corpus(&p).unwrap();
        assert_eq!(c[0].text, "I cried, a lot");
    }

    #[test]
    fn empty_file_is_empty_corpus() {
        let (_d, p) = tmp_file("seed.jsonl", "");
        assert!(load_source_corpus(&p).unwrap().is_empty());
    }

    #[test]
    fn stereotype_17_is_rejected() {
        let (_d, p) = tmp_file("seed.tsv", "text\tstereotype\nI am\t17\n");
        assert!(matches!(load_source_corpus(&p), Err(Error::UnknownStereotype(17))));
        let (_d, p) = tmp_file("seed.jsonl", "{\"text\": \"I am\", \"stereotype\": 0}\n");
        assert!(matches!(load_source_corpus(&p), Err(Error::UnknownStereotype(0))));
    }

    #[test]
    fn malformed_row_names_line() {
        let (_d, p) = tmp_file("seed.tsv", "text\tstereotype\nok\t1\nbad\tx\n");
        match load_source_corpus(&p) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
        let (_d, p) = tmp_file("seed.jsonl", "{\"text\": \"a\", \"stereotype\": 1}\n{oops\n");
        match load_source_corpus(&p) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn duplicate_ids_rejected() {
        let (_d, p) = tmp_file("seed.tsv", "id\ttext\tstereotype\na\tx\t1\na\ty\t2\n");
        assert!(matches!(load_source_corpus(&p), Err(Error::Precondition(_))));
    }

    #[test]
    fn entry_ids_are_deterministic_and_distinct() {
        let a = entry_id("s1", "sk", EntryKind::Neutral);
        assert_eq!(a, entry_id("s1", "sk", EntryKind::Neutral));
        assert_ne!(a, entry_id("s1", "sk", EntryKind::Gendered));
        assert_ne!(a, entry_id("s1", "cs", EntryKind::Neutral));
        assert!(a.starts_with("sk-"));
    }

    #[test]
    fn gendered_with_equal_texts_rejected_on_read() {
        let mut bad = neutral("s1", "sk", "Som tu");
        bad.kind = EntryKind::Gendered;
        let good = neutral("s2", "sk", "Som tu");
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.jsonl");
        write_dataset(&[good.clone(), bad], &p).unwrap();
        let r = read_dataset(&p, &PairHeuristicConfig::default()).unwrap();
        assert_eq!(r.entries, vec![good]);
        assert_eq!(r.rejected.len(), 1);
        assert_eq!(r.rejected[0].line, 2);
    }

    #[test]
    fn mixed_language_file_groups_on_read() {
        let entries: Vec<_> = ["sk", "de", "sk", "fi", "de", "sk"]
            .iter()
            .enumerate()
            .map(|(i, l)| neutral(&format!("s{i}"), l, "x"))
            .collect();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.jsonl");
        write_dataset(&entries, &p).unwrap();
        let grouped = read_dataset(&p, &PairHeuristicConfig::default()).unwrap().by_language();
        assert_eq!(grouped.keys().cloned().collect::<Vec<_>>(), ["de", "fi", "sk"]);
        for (lang, group) in &grouped {
            assert!(group.iter().all(|e| &e.lang == lang));
            let expected = entries.iter().filter(|e| &e.lang == lang).count();
            assert_eq!(group.len(), expected);
        }
        assert_eq!(grouped.values().map(Vec::len).sum::<usize>(), entries.len());
    }

    #[test]
    fn wrong_schema_version_rejected() {
        let (_d, p) = tmp_file(
            "d.jsonl",
            r#"{"schema_version":9,"entry_id":"x","source_id":"s","lang":"sk","kind":"neutral","masc_text":"a","fem_text":"a","stereotype_id":1,"provenance":{}}"#,
        );
        let r = read_dataset(&p, &PairHeuristicConfig::default()).unwrap();
        assert!(r.entries.is_empty());
        assert_eq!(r.rejected.len(), 1);
    }
}
