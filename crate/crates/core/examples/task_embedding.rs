//! Embeds every task of the default suite with a probe network pre-trained on
//! domain-randomized data, then prints the pairwise cosine-similarity matrix.
//! Tasks of the same family should sit closer together than unrelated ones.
//!
//! ```bash
//! cargo run --release --example task_embedding -- 0
//! ```

use adaptsim::reward::PretrainConfig;
use adaptsim::tasks::{build_suite_with, SuiteConfig};
use adaptsim::taskvec::{embed_task, EmbedConfig, EmbedSeeds, ProbeNetwork};

fn main() -> adaptsim::Result<()> {
    let seed: u64 = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(0);
    let suite = build_suite_with(&SuiteConfig::new(seed))?;
    let probe = ProbeNetwork::pretrain(&PretrainConfig::default())?;
    let tasks: Vec<_> = suite.tasks().collect();
    let embeddings = tasks
        .iter()
        .map(|t| {
            embed_task(
                &probe,
                t,
                1.0,
                &EmbedConfig::default(),
                EmbedSeeds::from_seed(seed),
            )
        })
        .collect::<adaptsim::Result<Vec<_>>>()?;
    println!("embedding length {}", embeddings[0].len());
    for (i, a) in embeddings.iter().enumerate() {
        let row: Vec<String> = embeddings
            .iter()
            .map(|b| format!("{:5.2}", a.cosine(b)))
            .collect();
        println!("{:>2} {:<28} {}", i, tasks[i].name(), row.join(" "));
    }
    Ok(())
}
