//! Runs the scratch-baseline study from the smoke config and prints the
//! table it writes.
use std::path::Path;

use robustprune::experiments::{run_experiment, ExperimentConfig};

fn main() -> anyhow::Result<()> {
    let out = tempfile::tempdir()?;
    let config = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs/smoke.toml");
    let overrides = [
        ("output_dir".to_string(), out.path().display().to_string()),
        ("model.widths".to_string(), "[1, 2]".to_string()),
        ("train.epochs".to_string(), "1".to_string()),
    ];
    let cfg = ExperimentConfig::load(&config, &overrides)?;
    println!("{}", cfg.profile_header());
    let table = run_experiment("scratch", &cfg)?;
    print!("{}", std::fs::read_to_string(&table)?);
    for entry in std::fs::read_dir(out.path())? {
        println!("wrote {}", entry?.file_name().to_string_lossy());
    }
    Ok(())
}
