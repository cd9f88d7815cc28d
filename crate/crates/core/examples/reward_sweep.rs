//! Sweeps every action of the 2^M space on the default task suite, caching
//! rewards on disk, then prints each task's brute-force best action next to
//! the all-on and all-off baselines.
//!
//! ```bash
//! cargo run --release --example reward_sweep -- /tmp/reward-cache 8
//! ```

use std::path::PathBuf;

use adaptsim::reward::{
    brute_force_best, EvalConfig, EvalMode, KeyedTask, PretrainConfig, RewardOracle,
};
use adaptsim::scenegen::SimParams;
use adaptsim::tasks::{build_suite_with, SuiteConfig};

fn main() -> adaptsim::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let dir = PathBuf::from(args.get(1).map_or("reward_cache", |s| s.as_str()));
    let m: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(8);
    let suite = build_suite_with(&SuiteConfig::new(0))?;
    let tasks = KeyedTask::all(suite.tasks())?;
    let oracle = RewardOracle::open(PretrainConfig::default(), EvalConfig::default(), &dir)?;
    let start = std::time::Instant::now();
    let progress = |done: usize, total: usize| {
        if done.is_multiple_of(16) || done == total {
            eprintln!(
                "{done}/{total} actions ({:.0}s)",
                start.elapsed().as_secs_f64()
            );
        }
    };
    oracle.sweep(
        &tasks,
        m,
        &[EvalMode::Knn5, EvalMode::Linear],
        Some(&progress),
    )?;
    println!(
        "{:<28} {:>6} {:>6} {:>6}  best",
        "task", "off", "on", "best"
    );
    for t in &tasks {
        let (best, table) = brute_force_best(t, m, EvalMode::Knn5, &oracle)?;
        println!(
            "{:<28} {:>6.1} {:>6.1} {:>6.1}  {}",
            t.task.name(),
            table[SimParams::all_off(m).encode() as usize],
            table[SimParams::all_on(m).encode() as usize],
            table[best.encode() as usize],
            best
        );
    }
    Ok(())
}
