// Expanding seed sentences into a gendered and a genderless language with
// fixture backends, then writing the dataset.

use stereobench::backends::mock::{FixtureQe, FixtureTranslator};
use stereobench::corpus::{write_dataset, EntryKind, SourceSentence};
use stereobench::expansion::{expand_language, ExpansionConfig};
use stereobench::templating::TemplateRegistry;

fn seeds() -> Vec<SourceSentence> {
    [
        ("a1", "I cry at every sad film.", 1),
        ("a2", "I keep my desk spotless.", 4),
        ("a3", "I make the final decision.", 13),
        ("a4", "I lift weights every day.", 16),
        ("a5", "I trust my own judgement.", 9),
        ("a6", "I love meeting new people.", 5),
    ]
    .into_iter()
    .map(|(id, text, s)| SourceSentence { id: id.into(), text: text.into(), stereotype_id: s })
    .collect()
}

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let registry = TemplateRegistry::builtin();
    let translator = FixtureTranslator::new(registry.clone());
    let qe = FixtureQe::new(0.80, 1.0);
    let cfg = ExpansionConfig::default();
    let corpus = seeds();

    for lang in ["sk", "fi"] {
        let out = expand_language(&corpus, registry.get(lang)?, &translator, &qe, &cfg)?;
        assert_eq!(out.entries.len() + out.discards.len(), corpus.len());
        println!(
            "{lang}: {} gendered, {} neutral, {} discarded",
            out.count(EntryKind::Gendered),
            out.count(EntryKind::Neutral),
            out.discards.len()
        );
        for d in &out.discards {
            println!("  {} discarded: {}", d.source_id, d.reason);
        }
        if lang == "fi" {
            assert_eq!(out.count(EntryKind::Gendered), 0);
        }
        let path = std::env::temp_dir().join(format!("stereobench-example-{lang}.jsonl"));
        write_dataset(&out.entries, &path)?;
        std::fs::remove_file(path)?;
    }

    let strict = FixtureQe::constant(0.5);
    let out = expand_language(&corpus, registry.get("sk")?, &translator, &strict, &cfg)?;
    assert!(out.entries.is_empty());
    println!("qe 0.5: {:?}", out.discard_counts());
    Ok(())
}

fn main() {
    run_example().unwrap();
}
