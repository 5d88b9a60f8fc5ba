//! Runs a seeded experiment from a TOML config and writes its JSON report;
//! rerunning gives identical bytes.

use paralab::experiments::{run, write_atomic, ExperimentConfig};

fn main() -> paralab::Result<()> {
    let config: ExperimentConfig = toml::from_str(
        r#"
        kind = "norms"
        d = 3
        depth = 3
        trials = 10
        seed = 42
        "#,
    )
    .map_err(|e| paralab::Error::Config(e.to_string()))?;
    let first = run(&config)?.to_json()?;
    let second = run(&config)?.to_json()?;
    assert_eq!(first, second);
    let dir = tempfile::tempdir()?;
    let path = dir.path().join("norms.json");
    write_atomic(&path, first.as_bytes())?;
    println!("{}", std::fs::read_to_string(&path)?);
    Ok(())
}
