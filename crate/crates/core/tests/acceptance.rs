//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use stereobench::backends::mock::{FixtureQe, FixtureScorer, FixtureTranslator};
use stereobench::backends::ModelRef;
use stereobench::corpus::{
    entry_id, feminine_ids, masculine_ids, stereotype, DatasetEntry, EntryKind, Provenance,
    SourceSentence, StereotypeGender,
};
use stereobench::expansion::{
    classify_pair, expand_language, DiscardReason, ExpansionConfig, PairClass, PairHeuristicConfig,
};
use stereobench::metrics::{
    cohen_kappa, inclination, pearson, stereotype_rate, summarize, Kappa, ProxySets,
};
use stereobench::report::gs_flag;
use stereobench::scoring::{r_masc, score_entry, ScoreMode, SentenceScore};
use stereobench::templating::TemplateRegistry;

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

// ---------------------------------------------------------------- oracles

/// Edit distance by memoised recursion over the full prefix lattice.
fn oracle_edit<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    fn go<T: PartialEq>(a: &[T], b: &[T], i: usize, j: usize, memo: &mut HashMap<(usize, usize), usize>) -> usize {
        if i == a.len() {
            return b.len() - j;
        }
        if j == b.len() {
            return a.len() - i;
        }
        if let Some(&v) = memo.get(&(i, j)) {
            return v;
        }
        let sub = go(a, b, i + 1, j + 1, memo) + usize::from(a[i] != b[j]);
        let del = go(a, b, i + 1, j, memo) + 1;
        let ins = go(a, b, i, j + 1, memo) + 1;
        let v = sub.min(del).min(ins);
        memo.insert((i, j), v);
        v
    }
    go(a, b, 0, 0, &mut HashMap::new())
}

#[derive(Debug, PartialEq)]
enum OracleClass {
    Neutral,
    Gendered(usize),
    Other,
}

/// Word alignment by edit distance over tokens: a minimal pair is one
/// substitution with no insertions or deletions, and the substituted words
/// are at most two character edits apart.
fn oracle_classify(m: &str, f: &str) -> OracleClass {
    let wm: Vec<&str> = m.split_whitespace().collect();
    let wf: Vec<&str> = f.split_whitespace().collect();
    let word_dist = oracle_edit(&wm, &wf);
    if word_dist == 0 {
        return OracleClass::Neutral;
    }
    if word_dist != 1 || wm.len() != wf.len() {
        return OracleClass::Other;
    }
    let i = (0..wm.len()).find(|&i| wm[i] != wf[i]).unwrap();
    let cm: Vec<char> = wm[i].chars().collect();
    let cf: Vec<char> = wf[i].chars().collect();
    if oracle_edit(&cm, &cf) <= 2 {
        OracleClass::Gendered(i)
    } else {
        OracleClass::Other
    }
}

const VOCAB: &[&str] = &[
    "Som", "emotívny.", "sono", "molto", "ordinata", "Ich", "bin", "stark", "je", "suis", "fort",
    "forte", "Jestem", "silny", "silna", "čistý", "čistá", "ya", "сильный", "сильная", "a", "ab",
];

fn mutate_word(w: &str, edits: usize, rng: &mut ChaCha8Rng) -> String {
    let alphabet: Vec<char> = "aeiouyáéíóúčšžлнаяbcdkmnrst".chars().collect();
    let mut c: Vec<char> = w.chars().collect();
    for _ in 0..edits {
        let op = rng.gen_range(0..3);
        let pos = rng.gen_range(0..=c.len());
        let ch = alphabet[rng.gen_range(0..alphabet.len())];
        match op {
            0 if pos < c.len() => c[pos] = ch,
            1 if pos < c.len() && c.len() > 1 => {
                c.remove(pos);
            }
            _ => c.insert(pos, ch),
        }
    }
    c.into_iter().collect()
}

fn fuzz_pair(rng: &mut ChaCha8Rng) -> (String, String) {
    let n = rng.gen_range(1..8);
    let base: Vec<String> = (0..n).map(|_| VOCAB[rng.gen_range(0..VOCAB.len())].to_string()).collect();
    let mut other = base.clone();
    match rng.gen_range(0..7) {
        0 => {}
        1 | 2 => {
            let i = rng.gen_range(0..n);
            let e = rng.gen_range(1..=4);
            other[i] = mutate_word(&other[i], e, rng);
        }
        3 => {
            for _ in 0..2 {
                let i = rng.gen_range(0..n);
                other[i] = mutate_word(&other[i], 1, rng);
            }
        }
        4 => other.insert(rng.gen_range(0..=n), VOCAB[rng.gen_range(0..VOCAB.len())].into()),
        5 if n > 1 => {
            other.remove(rng.gen_range(0..n));
        }
        _ => {
            let (i, j) = (rng.gen_range(0..n), rng.gen_range(0..n));
            other.swap(i, j);
        }
    }
    let sep = if rng.gen_bool(0.2) { "  " } else { " " };
    (base.join(" "), other.join(sep))
}

// ---------------------------------------------------------------- criteria

fn heuristic_fidelity() -> Check {
    let cfg = PairHeuristicConfig::default();
    let start = Instant::now();
    ensure(
        matches!(classify_pair("Som emotívny.", "Som emotívna.", &cfg), PairClass::Gendered(_)),
        "Slovak pair not gendered",
    )?;
    let it = "Sono sempre molto ordinata.";
    ensure(classify_pair(it, it, &cfg) == PairClass::Neutral, "Italian identical not neutral")?;

    let mut rng = ChaCha8Rng::seed_from_u64(20_250_101);
    let mut disagreements = Vec::new();
    let mut kinds = [0usize; 3];
    for _ in 0..1000 {
        let (m, f) = fuzz_pair(&mut rng);
        let got = classify_pair(&m, &f, &cfg);
        let want = oracle_classify(&m, &f);
        let agree = match (&got, &want) {
            (PairClass::Neutral, OracleClass::Neutral) => {
                kinds[0] += 1;
                true
            }
            (PairClass::Gendered(d), OracleClass::Gendered(i)) => {
                kinds[1] += 1;
                d.word_index == *i
            }
            (PairClass::TooDifferent(_), OracleClass::Other) => {
                kinds[2] += 1;
                true
            }
            _ => false,
        };
        if !agree {
            disagreements.push(format!("{m:?} / {f:?}: {got:?} vs {want:?}"));
        }
    }
    let elapsed = start.elapsed();
    ensure(disagreements.is_empty(), format!("{} disagreements, first {:?}", disagreements.len(), disagreements.first()))?;
    ensure(kinds.iter().all(|k| *k > 50), format!("fuzz corpus unbalanced {kinds:?}"))?;
    ensure(elapsed.as_secs_f64() < 5.0, format!("took {elapsed:?}"))?;
    Ok(format!(
        "paper cases ok; 1000 fuzz cases (neutral {}, gendered {}, other {}), 0 disagreements, {:.2?}",
        kinds[0], kinds[1], kinds[2], elapsed
    ))
}

fn random_scores(rng: &mut ChaCha8Rng, n: usize) -> Vec<SentenceScore> {
    (0..n)
        .map(|i| {
            let ll_masc = -rng.gen_range(0.1..6.0);
            let ll_fem = -rng.gen_range(0.1..6.0);
            SentenceScore {
                entry_id: format!("e{i}"),
                model_id: "m".into(),
                lang: "xx".into(),
                // Every stereotype appears; the rest are random.
                stereotype_id: if i < 16 { i as u8 + 1 } else { rng.gen_range(1..=16) },
                template_mode: ScoreMode::Noun,
                ll_masc,
                ll_fem,
                tokens_masc: 5,
                tokens_fem: 5,
                r_masc: r_masc(ll_masc, ll_fem).unwrap(),
                scorer: "x".into(),
                conditioning: "x".into(),
            }
        })
        .collect()
}

struct OracleAggregates {
    q: [f64; 17],
    rank: [u8; 17],
    proxy: f64,
    incl: [f64; 17],
    g_s: f64,
}

/// Single pass over the dump, then textbook definitions.
fn oracle_aggregates(scores: &[SentenceScore]) -> OracleAggregates {
    let mut sum = [0f64; 17];
    let mut n = [0usize; 17];
    for s in scores {
        sum[s.stereotype_id as usize] += s.r_masc;
        n[s.stereotype_id as usize] += 1;
    }
    let mut q = [0f64; 17];
    for i in 1..=16 {
        q[i] = sum[i] / n[i] as f64;
    }
    let mut rank = [0u8; 17];
    for i in 1..=16 {
        let above = (1..=16).filter(|&j| q[j] > q[i] || (q[j] == q[i] && j < i)).count();
        rank[i] = above as u8 + 1;
    }
    let fem_mean = (1..=7).map(|i| q[i]).sum::<f64>() / 7.0;
    let masc_mean = (8..=16).map(|i| q[i]).sum::<f64>() / 9.0;
    let proxy = (fem_mean + masc_mean) / 2.0;
    let mut incl = [0f64; 17];
    for i in 1..=16 {
        incl[i] = if i <= 7 { proxy - q[i] } else { q[i] - proxy };
    }
    OracleAggregates { q, rank, proxy, incl, g_s: masc_mean / fem_mean }
}

fn metric_algebra() -> Check {
    let tol = 1e-12;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst = 0f64;
    let mut perm_ok = 0;
    for _ in 0..100 {
        let scores = random_scores(&mut rng, 10_000);
        let s = summarize(&scores, &ProxySets::default()).map_err(|e| e.to_string())?;
        let o = oracle_aggregates(&scores);
        let mut ranks: Vec<u8> = s.stereotypes.iter().map(|x| x.rank).collect();
        ranks.sort_unstable();
        if ranks == (1..=16).collect::<Vec<u8>>() {
            perm_ok += 1;
        }
        for st in &s.stereotypes {
            let i = st.stereotype_id as usize;
            ensure(st.rank == o.rank[i], format!("rank mismatch for {i}"))?;
            worst = worst.max((st.q_i - o.q[i]).abs()).max((st.inclination - o.incl[i]).abs());
        }
        worst = worst
            .max((s.overall.proxy_default - o.proxy).abs())
            .max((s.overall.g_s - o.g_s).abs());
    }
    ensure(worst <= tol, format!("max deviation {worst:e} > {tol:e}"))?;
    ensure(perm_ok == 100, format!("rank permutations {perm_ok}/100"))?;

    // Swapping the variants of an entry gives exactly 1 - r_masc.
    let registry = TemplateRegistry::builtin();
    let profile = registry.get("sk").unwrap();
    let scorer = FixtureScorer::new();
    let model = ModelRef::new("acceptance-lm");
    let mut swaps = 0;
    for i in 0..500 {
        let (m, f) = (format!("Som unavený {i}."), format!("Som unavená {i}."));
        let mk = |m: &str, f: &str| DatasetEntry {
            entry_id: entry_id(&format!("p{i}"), "sk", EntryKind::Gendered),
            source_id: format!("p{i}"),
            lang: "sk".into(),
            kind: EntryKind::Gendered,
            masc_text: m.into(),
            fem_text: f.into(),
            stereotype_id: 6,
            provenance: Provenance::default(),
        };
        let a = score_entry(&mk(&m, &f), &model, ScoreMode::GenderedPair, profile, &scorer)
            .map_err(|e| e.to_string())?;
        let b = score_entry(&mk(&f, &m), &model, ScoreMode::GenderedPair, profile, &scorer)
            .map_err(|e| e.to_string())?;
        ensure(b.r_masc == 1.0 - a.r_masc, format!("antisymmetry broken at {i}: {} vs {}", a.r_masc, b.r_masc))?;
        swaps += 1;
    }
    for _ in 0..10_000 {
        let (x, y) = (-rng.gen_range(0.0..50.0), -rng.gen_range(0.0..50.0));
        let (a, b) = (r_masc(x, y).unwrap(), r_masc(y, x).unwrap());
        ensure(b == 1.0 - a, format!("r_masc({y},{x}) != 1 - r_masc({x},{y})"))?;
    }
    Ok(format!(
        "100 fixtures x 10000 scores, max deviation {worst:.1e} (tol 1e-12); ranks permutations 100/100; antisymmetry exact on {swaps} swapped pairs + 10000 random"
    ))
}

fn worked_example() -> Check {
    let neat = 4u8;
    ensure(stereotype(neat).unwrap().gender == StereotypeGender::Feminine, "stereotype 4 not feminine")?;
    let mut q = BTreeMap::new();
    q.insert(neat, 0.45);
    let inc = inclination(&q, 0.6).map_err(|e| e.to_string())?[&neat];
    // 0.6 - 0.45 is not representable as the literal 0.15; the rule is met
    // when the result is the correctly rounded difference.
    ensure(inc == 0.6 - 0.45, format!("inclination {inc} is not proxy - q"))?;
    ensure((inc - 0.15).abs() <= f64::EPSILON * 0.15, format!("inclination {inc} != 0.15"))?;

    let q_eq: BTreeMap<u8, f64> = (1..=16).map(|i| (i, 0.4375)).collect();
    let r = stereotype_rate(&q_eq, &feminine_ids(), &masculine_ids()).map_err(|e| e.to_string())?;
    ensure(r.g_s == 1.0, format!("g_s {} != 1.0", r.g_s))?;
    ensure(gs_flag(r.g_s) == "no stereotyping", "g_s 1.0 not flagged")?;
    Ok(format!("inclination = {inc} (|Δ| vs 0.15 ≤ 1 ulp); g_s(q_m = q_f) = {} flagged \"{}\"", r.g_s, gs_flag(r.g_s)))
}

fn seed_corpus() -> Vec<SourceSentence> {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/seeds.tsv");
    stereobench::corpus::load_source_corpus(path).unwrap()
}

fn pipeline_conservation() -> Check {
    let corpus = seed_corpus();
    let registry = TemplateRegistry::builtin();
    let cfg = ExpansionConfig::default();
    let mut runs = 0;
    let mut genderless = 0;
    for permille in [0, 150] {
        let translator = FixtureTranslator::new(registry.clone()).with_failures(permille);
        let qe = FixtureQe::new(0.80, 1.0).with_unsupported(["mt"]);
        for profile in registry.profiles() {
            let out = expand_language(&corpus, profile, &translator, &qe, &cfg).map_err(|e| e.to_string())?;
            ensure(
                out.entries.len() + out.discards.len() == corpus.len(),
                format!("{}: {} + {} != {}", profile.code, out.entries.len(), out.discards.len(), corpus.len()),
            )?;
            if !profile.gendered_morphology {
                genderless += 1;
                ensure(out.count(EntryKind::Gendered) == 0, format!("{} produced gendered entries", profile.code))?;
            }
            runs += 1;
        }
    }
    let translator = FixtureTranslator::new(registry.clone());
    let low = FixtureQe::constant(0.84);
    let mut filtered = 0;
    for profile in registry.profiles().filter(|p| p.code != cfg.source_lang) {
        let out = expand_language(&corpus, profile, &translator, &low, &cfg).map_err(|e| e.to_string())?;
        ensure(out.entries.is_empty(), format!("{}: entries survived QE 0.84", profile.code))?;
        ensure(
            out.discards.iter().all(|d| d.reason == DiscardReason::QeBelowThreshold),
            format!("{}: discard reason other than qe-below-threshold", profile.code),
        )?;
        filtered += out.discards.len();
    }
    Ok(format!(
        "{runs} expand runs conserve {} seeds; {genderless} genderless runs with 0 gendered; QE 0.84 discarded {filtered}/{filtered} as qe-below-threshold",
        corpus.len()
    ))
}

fn agreement_statistics() -> Check {
    // (both yes, a yes b no, a no b yes, both no) -> hand-computed kappa
    let tables: [([usize; 4], f64); 5] = [
        ([20, 5, 10, 15], 2.0 / 5.0),
        ([45, 15, 25, 15], 3.0 / 23.0),
        ([10, 0, 0, 10], 1.0),
        ([0, 10, 10, 0], -1.0),
        ([25, 25, 25, 25], 0.0),
    ];
    for (t, want) in tables {
        let mut a = Vec::new();
        let mut b = Vec::new();
        for (k, (x, y)) in [("y", "y"), ("y", "n"), ("n", "y"), ("n", "n")].iter().enumerate() {
            for _ in 0..t[k] {
                a.push(*x);
                b.push(*y);
            }
        }
        let k = cohen_kappa(&a, &b).map_err(|e| e.to_string())?;
        let v = k.value().ok_or("kappa undefined")?;
        ensure((v - want).abs() <= 1e-12, format!("table {t:?}: kappa {v} != {want}"))?;
    }
    let single = ["neutral"; 12];
    ensure(cohen_kappa(&single, &single).map_err(|e| e.to_string())? == Kappa::Undefined, "single category not undefined")?;

    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for _ in 0..100 {
        let n = rng.gen_range(3..200);
        let x: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..100.0)).collect();
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        let p = pearson(&x, &x, 0, 0).map_err(|e| e.to_string())?;
        let q = pearson(&x, &neg, 0, 0).map_err(|e| e.to_string())?;
        ensure(p.rho == 1.0 && q.rho == -1.0, format!("rho {} / {}", p.rho, q.rho))?;
    }
    Ok("5 contingency tables within 1e-12; single-category kappa undefined; rho(x,x)=1 and rho(x,-x)=-1 exactly on 100 vectors".into())
}

fn workdir() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    let fixtures = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures");
    for f in ["mock.toml", "seeds.tsv", "annotations_sk.csv"] {
        std::fs::copy(fixtures.join(f), dir.path().join(f)).unwrap();
    }
    dir
}

fn cli(dir: &Path, args: &[&str]) -> Result<i32, String> {
    let o = Command::new(env!("CARGO_BIN_EXE_stereobench"))
        .current_dir(dir)
        .args(["--config", "mock.toml"])
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    o.status.code().ok_or_else(|| "killed".into())
}

fn snapshot(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn determinism() -> Check {
    let dir = workdir();
    let mut runs = Vec::new();
    for _ in 0..3 {
        for step in ["expand", "score", "report"] {
            let code = cli(dir.path(), &[step])?;
            ensure(code == 0, format!("{step} exited {code}"))?;
        }
        runs.push(snapshot(&dir.path().join("out/report")));
    }
    ensure(runs[1] == runs[2], "cache-warm report directories differ")?;
    ensure(runs[0] == runs[1], "cold and warm report directories differ")?;
    let code = cli(dir.path(), &["verify"])?;
    ensure(code == 0, format!("verify exited {code}"))?;
    Ok(format!("{} report files byte-identical across cold + 2 warm runs; verify exit 0", runs[0].len()))
}

fn report_shape_parity() -> Check {
    let dir = workdir();
    for step in ["expand", "score", "report"] {
        let code = cli(dir.path(), &[step])?;
        ensure(code == 0, format!("{step} exited {code}"))?;
    }
    let r = dir.path().join("out/report");
    let read = |p: &str| std::fs::read_to_string(r.join(p)).map_err(|e| format!("{p}: {e}"));

    // Dataset sizes by language, gendered vs neutral.
    let langs = read("stats/languages.csv")?;
    ensure(langs.starts_with("lang,gendered,neutral,"), "stats/languages.csv header")?;
    ensure(langs.lines().count() == 1 + 4 + 1, "one row per language plus totals")?;
    // Per-stereotype counts by language.
    let st = read("stats/stereotypes.csv")?;
    ensure(st.starts_with("lang,stereotype_id,stereotype,gender,gendered,neutral"), "stereotypes header")?;
    // Rank heatmap: languages x 16, feminine block first.
    let mut heatmaps = 0;
    for e in std::fs::read_dir(r.join("ranks")).unwrap() {
        let p = e.unwrap().path();
        if p.file_name().unwrap() == "q_scores.csv" {
            continue;
        }
        let text = std::fs::read_to_string(&p).unwrap();
        let mut lines = text.lines();
        let header: Vec<&str> = lines.next().unwrap().split(',').collect();
        let expected: Vec<String> = std::iter::once("lang".to_string())
            .chain(feminine_ids().into_iter().chain(masculine_ids()).map(|i| format!("s{i}")))
            .collect();
        ensure(header == expected, format!("{}: header {header:?}", p.display()))?;
        for row in lines {
            let mut ranks: Vec<u8> = row.split(',').skip(1).map(|v| v.parse().unwrap()).collect();
            ranks.sort_unstable();
            ensure(ranks == (1..=16).collect::<Vec<u8>>(), format!("{}: row not a permutation", p.display()))?;
        }
        heatmaps += 1;
    }
    ensure(heatmaps > 0, "no rank heatmaps")?;
    // Stereotype rate per model and language with a 1.0 reference line.
    let by_model = read("gs/by_model.csv")?;
    ensure(by_model.starts_with("model,mode,n_languages,mean_g_s,reference,flag"), "gs/by_model.csv header")?;
    let chart: serde_json::Value = serde_json::from_str(&read("gs/chart.json")?).map_err(|e| e.to_string())?;
    ensure(chart["reference_line"] == 1.0, "chart reference line")?;
    ensure(read("gs/by_language.csv")?.starts_with("model,lang,mode,q_f,q_m,proxy_default,g_s"), "by_language header")?;
    Ok(format!(
        "stats, {heatmaps} rank heatmaps, q charts and g_s tables present with expected structure; headline totals (14,538 gendered / 56,497 neutral, published ranks and g_s) need commercial MT, a QE model and large LMs and are not reproduced"
    ))
}

fn main() {
    let criteria: [(&str, fn() -> Check); 7] = [
        ("heuristic fidelity", heuristic_fidelity),
        ("metric algebra", metric_algebra),
        ("worked example", worked_example),
        ("pipeline conservation", pipeline_conservation),
        ("agreement statistics", agreement_statistics),
        ("determinism and idempotence", determinism),
        ("report-shape parity", report_shape_parity),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        match check() {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL  {name}: {why}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
