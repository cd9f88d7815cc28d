//! Pre-trains backbones under a few simulation settings and prints their
//! layer-wise linear CKA on images drawn from the default task suite.
//!
//! ```bash
//! cargo run --release --example cka -- 256
//! ```

use adaptsim::analysis::{cka_eval_set, cka_report};
use adaptsim::reward::{pretrain_backbone, stage_layers, PretrainConfig};
use adaptsim::scenegen::SimParams;
use adaptsim::tasks::{build_suite_with, SuiteConfig};

fn main() -> adaptsim::Result<()> {
    let count: usize = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(256);
    let cfg = PretrainConfig::default();
    let suite = build_suite_with(&SuiteConfig::new(0))?;
    let images = cka_eval_set(&suite, count, 0)?;
    let mut backbones = Vec::new();
    for bits in ["00000000", "10000000", "00010000", "11111111"] {
        let params: SimParams = bits.parse()?;
        eprintln!("pre-training {bits}");
        backbones.push((bits.to_string(), pretrain_backbone(&params, &cfg)?));
    }
    let stages = stage_layers(&backbones[0].1);
    let report = cka_report(&backbones, &images, &stages)?;
    for (stage, m) in report.stages.iter().zip(&report.values) {
        println!("layer {stage}");
        for (name, row) in report.names.iter().zip(m) {
            let cells: Vec<String> = row.iter().map(|v| format!("{v:.3}")).collect();
            println!("  {name} {}", cells.join(" "));
        }
    }
    Ok(())
}
