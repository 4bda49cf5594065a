// Stereotype taxonomy, template wrapping and the minimal-pair classifier.

use stereobench::corpus::{feminine_ids, masculine_ids, stereotype};
use stereobench::expansion::{classify_pair, PairClass, PairHeuristicConfig};
use stereobench::templating::{extract_quoted, wrap_initial, wrap_final, Gender, TemplateMode, TemplateRegistry};

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    println!("feminine stereotypes: {:?}", feminine_ids());
    println!("masculine stereotypes: {:?}", masculine_ids());
    println!("stereotype 4: {}", stereotype(4).unwrap().label);

    let registry = TemplateRegistry::builtin();
    let sk = registry.get("sk")?;
    let wrapped = wrap_initial("I am emotional.", Gender::Feminine, sk)?;
    println!("{wrapped}");
    assert_eq!(extract_quoted(&wrapped, sk).unwrap(), "I am emotional.");

    let cfg = PairHeuristicConfig::default();
    match classify_pair("Som emotívny.", "Som emotívna.", &cfg) {
        PairClass::Gendered(diff) => {
            println!("gendered: `{}` / `{}` ({} edit)", diff.masc_word, diff.fem_word, diff.char_edits)
        }
        other => return Err(format!("expected a gendered pair, got {other:?}").into()),
    }
    let same = "Sono sempre in ordine.";
    assert_eq!(classify_pair(same, same, &cfg), PairClass::Neutral);
    assert!(matches!(
        classify_pair("Sono stanco oggi.", "Sono felice domani.", &cfg),
        PairClass::TooDifferent(_)
    ));

    let de = registry.get("de")?;
    for g in [Gender::Masculine, Gender::Feminine] {
        println!("{}", wrap_final("Ich bin ordentlich.", g, TemplateMode::Noun, de)?);
    }
    let fi = registry.get("fi")?;
    assert!(wrap_final("Olen siisti.", Gender::Masculine, TemplateMode::Pronoun, fi).is_err());
    Ok(())
}

fn main() {
    run_example().unwrap();
}
