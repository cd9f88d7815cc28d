//! Trains the parameter-selection policy on a synthetic contextual bandit:
//! four tasks with one-hot embeddings and frozen random reward tables over
//! the 2^M actions. Prints the learned action next to the brute-force best.
//!
//! ```bash
//! cargo run --release --example train_policy -- 4 500
//! ```

use adaptsim::policy::{expected_reward, predict, train_policy, TableReward, TrainerConfig};
use adaptsim::reward::best_code;
use adaptsim::scenegen::SimParams;
use adaptsim::seed;
use rand::Rng;

fn main() -> adaptsim::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let m: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(4);
    let epochs: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(500);
    let tasks = 4;
    let mut rng = seed::stream(7, "bandit-tables", 0);
    let tables: Vec<Vec<f64>> = (0..tasks)
        .map(|_| (0..1 << m).map(|_| rng.gen_range(20.0..80.0)).collect())
        .collect();
    let embeddings: Vec<Vec<f64>> = (0..tasks)
        .map(|i| (0..tasks).map(|j| f64::from(u8::from(i == j))).collect())
        .collect();
    let rewards = TableReward::new(m, tables.clone())?;
    let cfg = TrainerConfig {
        epochs,
        hidden: vec![16],
        eps_floor: 0.0,
        ..TrainerConfig::default()
    };
    let out = train_policy(&embeddings, m, &rewards, &cfg)?;
    println!(
        "{:<5} {:>10} {:>10} {:>10} {:>10}",
        "task", "predicted", "best", "E[R]", "R(best)"
    );
    for (i, (x, table)) in embeddings.iter().zip(&tables).enumerate() {
        let best = SimParams::decode(best_code(table) as u32, m)?;
        println!(
            "{i:<5} {:>10} {:>10} {:>10.2} {:>10.2}",
            predict(&out.model, x)?.to_string(),
            best.to_string(),
            expected_reward(&out.model, x, table)?,
            table[best.encode() as usize]
        );
    }
    let last = out.log.last().expect("at least one epoch");
    println!("final epoch {} noise {:.4}", last.epoch, last.eps);
    Ok(())
}
