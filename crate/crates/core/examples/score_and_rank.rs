// Scoring entries with a log-probability backend and aggregating the
// results into masculine rates, ranks and the stereotype rate.

use stereobench::backends::mock::CharScorer;
use stereobench::backends::ModelRef;
use stereobench::corpus::{entry_id, DatasetEntry, EntryKind, Provenance};
use stereobench::metrics::{inclination, summarize, ProxySets};
use stereobench::report::render_report;
use stereobench::report::ReportInputs;
use stereobench::scoring::{r_masc, score_entries, ModeRequest};
use stereobench::templating::TemplateRegistry;

fn neutral(i: usize, stereotype_id: u8) -> DatasetEntry {
    let source_id = format!("n{i}");
    let text = format!("I am sentence number {i}.");
    DatasetEntry {
        entry_id: entry_id(&source_id, "en", EntryKind::Neutral),
        source_id,
        lang: "en".into(),
        kind: EntryKind::Neutral,
        masc_text: text.clone(),
        fem_text: text,
        stereotype_id,
        provenance: Provenance::default(),
    }
}

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    // Equal average log-likelihoods give r_masc = 0.5; a higher masculine
    // likelihood pushes it above.
    assert_eq!(r_masc(-2.0, -2.0)?, 0.5);
    println!("r_masc(-1.9, -2.1) = {:.6}", r_masc(-1.9, -2.1)?);

    let entries: Vec<DatasetEntry> = (0..64).map(|i| neutral(i, (i % 16) as u8 + 1)).collect();
    // A toy model that prefers "he" for masculine stereotypes.
    let scorer = CharScorer::new(|text: &str, _pos: usize| {
        let masc_id = text.contains("number") && text.contains(" he ");
        if masc_id { -1.0 } else { -1.2 }
    });
    let registry = TemplateRegistry::builtin();
    let model = ModelRef::new("toy");
    let run = score_entries(&entries, &model, ModeRequest::Pronoun, &registry, &scorer)?;
    println!("scored {} entries, skipped {}", run.scores.len(), run.skipped.len());

    let summary = summarize(&run.scores, &ProxySets::default())?;
    println!(
        "q_f {:.4}  q_m {:.4}  proxy {:.4}  g_s {:.4}",
        summary.overall.q_f, summary.overall.q_m, summary.overall.proxy_default, summary.overall.g_s
    );
    for s in summary.stereotypes.iter().take(3) {
        println!("stereotype {:>2}: q {:.4} rank {:>2}", s.stereotype_id, s.q_i, s.rank);
    }

    let mut q = std::collections::BTreeMap::new();
    q.insert(4u8, 0.45);
    assert!((inclination(&q, 0.6)?[&4] - 0.15).abs() < 1e-15);

    let (files, manifest) = render_report(&ReportInputs {
        entries,
        discards: vec![],
        scores: run.scores,
        proxy_sets: ProxySets::default(),
        agreements: vec![],
        languages: None,
    })?;
    for name in files.keys() {
        println!("report file: {name}");
    }
    assert_eq!(manifest.groups.len(), 1);
    Ok(())
}

fn main() {
    run_example().unwrap();
}
