//! Builds the default downstream suite, saves it, and writes one contact
//! sheet per task so the class structure of each family can be inspected.
//!
//! ```bash
//! cargo run --release --example task_suite -- 0 /tmp/suite
//! ```

use std::path::PathBuf;

use adaptsim::tasks::{build_suite_with, save_suite, SuiteConfig};

fn main() -> adaptsim::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let seed: u64 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    let out = PathBuf::from(args.get(2).map_or("suite_example", |s| s.as_str()));
    let suite = build_suite_with(&SuiteConfig::new(seed))?;
    let manifest = save_suite(&suite, &out)?;
    for (entry, task) in manifest.tasks.iter().zip(suite.tasks()) {
        let sheet = out.join(&entry.dir).join("train.ppm");
        adaptsim::io::write_atomic(&sheet, &task.train.contact_sheet_ppm(12))?;
        println!(
            "{:<28} {:<8?} classes={:?} train={} test={} checksum={}",
            task.name(),
            task.spec.role,
            task.train.manifest.class_names,
            task.train.len(),
            task.test.len(),
            entry.checksum
        );
    }
    println!("suite manifest at {}", out.join("suite.json").display());
    Ok(())
}
