//! Runs the whole staged pipeline (suite, probe, embeddings, policy,
//! predictions, comparison, CKA) on a scaled-down configuration and prints
//! the comparison summary. Running it twice reuses every finished stage.
//!
//! ```bash
//! cargo run --release --example full_experiment -- /tmp/adaptsim-demo
//! ```

use std::path::PathBuf;

use adaptsim::experiment::{run_experiment, ExperimentConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let root = PathBuf::from(
        std::env::args()
            .nth(1)
            .unwrap_or_else(|| "experiment_example".into()),
    );
    let mut cfg = ExperimentConfig::default();
    cfg.m = 4;
    cfg.run.out_dir = root.join("run");
    cfg.run.cache_dir = root.join("cache");
    cfg.suite.train_size = 200;
    cfg.suite.test_size = 100;
    cfg.trainer.epochs = 200;
    cfg.cka.images = 128;
    std::fs::create_dir_all(&root)?;
    std::fs::write(root.join("config.toml"), cfg.to_toml()?)?;

    let report = run_experiment(&cfg, &|line| eprintln!("{line}"))?;
    let names = |s: &[adaptsim::experiment::Stage]| {
        s.iter().map(|s| s.name()).collect::<Vec<_>>().join(",")
    };
    println!(
        "ran [{}] skipped [{}]",
        names(&report.ran),
        names(&report.skipped)
    );
    print!(
        "{}",
        std::fs::read_to_string(cfg.run.out_dir.join("summary.txt"))?
    );
    Ok(())
}
