// The command-line pipeline on the bundled fixture configuration:
// expand, score, report and verify.

use std::path::Path;

use stereobench::cli;

fn copy_fixtures(to: &Path) -> std::io::Result<()> {
    let from = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures");
    for f in ["mock.toml", "seeds.tsv", "annotations_sk.csv"] {
        std::fs::copy(from.join(f), to.join(f))?;
    }
    Ok(())
}

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    copy_fixtures(dir.path())?;
    let config = dir.path().join("mock.toml");
    let config = config.to_str().unwrap();
    for cmd in ["expand", "stats", "score", "report", "verify"] {
        let code = cli::run(["stereobench", cmd, "--config", config, "--lang", "sk,fi"]);
        println!("{cmd}: exit {code}");
        if code != cli::EXIT_OK {
            return Err(format!("{cmd} exited with {code}").into());
        }
    }
    let gs = std::fs::read_to_string(dir.path().join("out/report/gs/by_model.csv"))?;
    print!("{gs}");
    Ok(())
}

fn main() {
    run_example().unwrap();
}
