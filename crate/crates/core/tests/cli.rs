use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};
use stereobench::corpus::{read_dataset, EntryKind};
use stereobench::expansion::{read_discards, PairHeuristicConfig};

const SEEDS: usize = 192;

fn workdir() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    let fixtures = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures");
    for f in ["mock.toml", "seeds.tsv", "annotations_sk.csv"] {
        std::fs::copy(fixtures.join(f), dir.path().join(f)).unwrap();
    }
    dir
}

fn run_in(dir: &Path, args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_stereobench"));
    cmd.current_dir(dir).arg("--config").arg("mock.toml").args(args);
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().unwrap()
}

fn run(dir: &Path, args: &[&str]) -> Output {
    run_in(dir, args, &[])
}

fn stdout_json(o: &Output) -> Value {
    serde_json::from_slice(&o.stdout).unwrap_or_else(|_| {
        panic!(
            "stdout not json: {}\nstderr: {}",
            String::from_utf8_lossy(&o.stdout),
            String::from_utf8_lossy(&o.stderr)
        )
    })
}

fn stderr_json(o: &Output) -> Value {
    let text = String::from_utf8_lossy(&o.stderr);
    let line = text.lines().rev().find(|l| l.starts_with('{')).expect("json error line");
    serde_json::from_str(line).unwrap()
}

fn tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>) {
        for e in std::fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                walk(root, &p, out);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out
}

#[test]
fn expand_writes_dataset_and_manifest() {
    let dir = workdir();
    let o = run(dir.path(), &["expand", "--lang", "sk"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let out = dir.path().join("out/dataset");
    let read = read_dataset(out.join("sk.jsonl"), &PairHeuristicConfig::default()).unwrap();
    assert!(read.rejected.is_empty());
    let discards = read_discards(out.join("sk.discards.jsonl")).unwrap();
    assert_eq!(read.entries.len() + discards.len(), SEEDS);
    let manifest: Value =
        serde_json::from_slice(&std::fs::read(out.join("sk.manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed_sentences"], SEEDS);
    assert_eq!(
        manifest["gendered"].as_u64().unwrap() as usize,
        read.entries.iter().filter(|e| e.kind == EntryKind::Gendered).count()
    );
    assert_eq!(manifest["translator"], "fixture-translator");
    let summary = stdout_json(&o);
    assert!(summary["languages"]["sk"].is_object());
}

#[test]
fn pronoun_mode_refused_for_finnish() {
    let dir = workdir();
    let o = run(dir.path(), &["score", "--mode", "pronoun", "--lang", "fi"]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr_json(&o);
    assert_eq!(err["error"], "no-pronoun-templates");
    assert_eq!(err["exit_code"], 2);
    assert!(!dir.path().join("out/scores").exists());
}

#[test]
fn usage_and_config_errors() {
    let dir = workdir();
    let o = run(dir.path(), &["frobnicate"]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(stderr_json(&o)["error"], "usage");
    let o = run(dir.path(), &["expand", "--lang", "xx"]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(stderr_json(&o)["error"], "unknown-language");
    let o = run(dir.path(), &["expand", "--max-inflight", "0"]);
    assert_eq!(o.status.code(), Some(2));
    let o = run(dir.path(), &["report"]);
    assert_eq!(o.status.code(), Some(1), "report without datasets is a runtime error");
}

#[test]
fn pipeline_is_idempotent_and_verifiable() {
    let dir = workdir();
    let steps: [&[&str]; 3] = [&["expand"], &["score"], &["report"]];
    for s in steps {
        let o = run(dir.path(), s);
        assert_eq!(o.status.code(), Some(0), "{s:?}: {}", String::from_utf8_lossy(&o.stderr));
    }
    let first = tree(&dir.path().join("out/report"));
    let data_first = tree(&dir.path().join("out/dataset"));
    for s in steps {
        assert_eq!(run(dir.path(), s).status.code(), Some(0));
    }
    assert_eq!(first, tree(&dir.path().join("out/report")));
    assert_eq!(data_first, tree(&dir.path().join("out/dataset")));

    let o = run(dir.path(), &["verify"]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(stdout_json(&o)["ok"], true);

    let gs = dir.path().join("out/report/gs/by_language.csv");
    let mut text = std::fs::read_to_string(&gs).unwrap();
    text.push_str("extra,row\n");
    std::fs::write(&gs, text).unwrap();
    let o = run(dir.path(), &["verify"]);
    assert_eq!(o.status.code(), Some(4));
    assert_eq!(stdout_json(&o)["result"]["mismatched"], json!(["gs/by_language.csv"]));
}

#[test]
fn report_layout() {
    let dir = workdir();
    for s in [&["expand", "--lang", "sk,fi"][..], &["score"], &["report"]] {
        assert_eq!(run(dir.path(), s).status.code(), Some(0));
    }
    let report = dir.path().join("out/report");
    for sub in ["stats", "ranks", "gs", "agreement"] {
        assert!(report.join(sub).is_dir(), "{sub}");
    }
    let manifest: Value =
        serde_json::from_slice(&std::fs::read(report.join("manifest.json")).unwrap()).unwrap();
    for (file, _) in manifest["files"].as_object().unwrap() {
        assert!(report.join(file).is_file(), "{file}");
    }
    assert!(manifest["notes"][0].as_str().unwrap().contains("seven"));
    let heat = std::fs::read_to_string(report.join("ranks/fixture-lm__pronoun.csv")).unwrap();
    let header = heat.lines().next().unwrap();
    assert_eq!(header.split(',').count(), 17);
}

#[test]
fn sample_validation_and_agreement() {
    let dir = workdir();
    assert_eq!(run(dir.path(), &["expand", "--lang", "sk"]).status.code(), Some(0));
    let o = run(dir.path(), &["sample-validation", "--size", "20", "--seed", "5"]);
    assert_eq!(o.status.code(), Some(0));
    let csv = std::fs::read_to_string(dir.path().join("out/validation/sk.csv")).unwrap();
    assert_eq!(csv.lines().count(), 21);
    let again = run(dir.path(), &["sample-validation", "--size", "20", "--seed", "5"]);
    assert_eq!(again.status.code(), Some(0));
    assert_eq!(csv, std::fs::read_to_string(dir.path().join("out/validation/sk.csv")).unwrap());

    let o = run(dir.path(), &["agreement"]);
    assert_eq!(o.status.code(), Some(0));
    let v = stdout_json(&o);
    assert_eq!(v["reports"]["sk"]["records"], 60);
    assert!(dir.path().join("out/report/agreement/sk.txt").is_file());
}

#[test]
fn partial_translation_failure_exits_3() {
    let dir = workdir();
    let cfg = std::fs::read_to_string(dir.path().join("mock.toml")).unwrap();
    let cfg = cfg.replace("[backends.translator]\nkind = \"mock\"", "[backends.translator]\nkind = \"mock\"\nfailure_permille = 200");
    std::fs::write(dir.path().join("mock.toml"), cfg).unwrap();
    let o = run(dir.path(), &["expand", "--lang", "sk"]);
    assert_eq!(o.status.code(), Some(3));
    let v = stdout_json(&o);
    assert!(v["languages"]["sk"]["discards"]["translation-failed"].as_u64().unwrap() > 0);
}

#[test]
fn http_scorer_via_environment() {
    let server = tiny_http::Server::http("127.0.0.1:0").unwrap();
    let url = format!("http://{}", server.server_addr().to_ip().unwrap());
    let handle = std::thread::spawn(move || {
        let mut served = 0;
        for mut req in server.incoming_requests() {
            let mut raw = String::new();
            req.as_reader().read_to_string(&mut raw).unwrap();
            let body: Value = serde_json::from_str(&raw).unwrap();
            let results: Vec<Value> = body["texts"]
                .as_array()
                .unwrap()
                .iter()
                .map(|t| {
                    let t = t.as_str().unwrap();
                    let lp = if t.ends_with("nainen") { -1.1 } else { -1.0 };
                    json!({ "tokens": [t], "logprobs": [lp] })
                })
                .collect();
            req.respond(tiny_http::Response::from_string(json!({ "results": results }).to_string()))
                .unwrap();
            served += 1;
            if body["model"] == "fixture-lm-instruct" {
                break;
            }
        }
        served
    });
    let dir = workdir();
    let cfg = std::fs::read_to_string(dir.path().join("mock.toml")).unwrap();
    let cfg = cfg.replace("[backends.scorer]\nkind = \"mock\"", "[backends.scorer]\nkind = \"http\"\nbatch_size = 1000");
    std::fs::write(dir.path().join("mock.toml"), cfg).unwrap();
    assert_eq!(run(dir.path(), &["expand", "--lang", "fi"]).status.code(), Some(0));
    let o = run_in(dir.path(), &["score", "--lang", "fi"], &[("STEREOBENCH_SCORE_URL", &url)]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(handle.join().unwrap() >= 2);
    let scores = stereobench::scoring::read_scores(dir.path().join("out/scores/fixture-lm.jsonl")).unwrap();
    assert!(!scores.is_empty());
    assert!(scores.iter().all(|s| s.r_masc > 0.5 && s.r_masc < 1.0));
}
