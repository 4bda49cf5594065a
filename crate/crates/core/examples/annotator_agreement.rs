// Human validation: stratified sampling, Cohen's kappa and Pearson
// correlation of direct-assessment scores.

use stereobench::corpus::{entry_id, DatasetEntry, EntryKind, Provenance};
use stereobench::metrics::{cohen_kappa, pearson, sample_validation_batch, GenderLabel, Kappa};

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let dataset: Vec<DatasetEntry> = (0..50)
        .map(|i| {
            let kind = if i % 5 < 3 { EntryKind::Gendered } else { EntryKind::Neutral };
            let source_id = format!("s{i}");
            DatasetEntry {
                entry_id: entry_id(&source_id, "sk", kind),
                source_id,
                lang: "sk".into(),
                kind,
                masc_text: format!("Som {i}."),
                fem_text: format!("Som {i}."),
                stereotype_id: 1,
                provenance: Provenance::default(),
            }
        })
        .collect();
    let batch = sample_validation_batch(&dataset, 10, 42)?;
    let gendered = batch.iter().filter(|e| e.kind == EntryKind::Gendered).count();
    println!("sampled {} entries, {gendered} gendered", batch.len());
    assert_eq!(gendered, 6);

    use GenderLabel::*;
    let a = [Masculine, Masculine, Feminine, Neutral, Neutral, Feminine];
    let b = [Masculine, Feminine, Feminine, Neutral, Neutral, Feminine];
    println!("kappa = {}", cohen_kappa(&a, &b)?);
    let only_neutral = [Neutral; 6];
    assert_eq!(cohen_kappa(&only_neutral, &only_neutral)?, Kappa::Undefined);

    let da_a = [90.0, 75.0, 60.0, 88.0, 95.0, 40.0];
    let da_b = [85.0, 70.0, 65.0, 90.0, 99.0, 50.0];
    let p = pearson(&da_a, &da_b, 5_000, 1)?;
    println!("pearson rho = {:.4}, p = {:.4}", p.rho, p.p_value);
    Ok(())
}

fn main() {
    run_example().unwrap();
}
