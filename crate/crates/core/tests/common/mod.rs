#![allow(dead_code)]

use std::path::Path;

use adaptsim::experiment::ExperimentConfig;
use adaptsim::reward::{LrSchedule, SgdSchedule};
use adaptsim::tasks::Family;

fn sched(epochs: usize, lr: f64, batch_size: usize) -> SgdSchedule {
    SgdSchedule {
        epochs,
        lr,
        momentum: 0.9,
        batch_size,
        schedule: LrSchedule::Cosine,
    }
}

/// A full experiment small enough to run in seconds.
pub fn tiny_config(dir: &Path) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.m = 3;
    cfg.run.out_dir = dir.join("out");
    cfg.run.cache_dir = dir.join("cache");
    cfg.suite.num_classes = 3;
    cfg.suite.train_size = 30;
    cfg.suite.test_size = 12;
    cfg.suite.seen = vec![
        Family::ColorSensitive,
        Family::PoseSensitive,
        Family::TextureSensitive,
    ];
    cfg.suite.unseen = vec![Family::ColorSensitive];
    for p in [&mut cfg.pretrain, &mut cfg.probe] {
        p.num_classes = 4;
        p.images_per_class = 6;
        p.arch = "c4-8".parse().unwrap();
        p.schedule = sched(2, 0.05, 8);
    }
    cfg.embed.settings.head = sched(3, 0.05, 10);
    cfg.eval.linear = sched(3, 0.05, 10);
    cfg.eval.finetune = sched(1, 0.02, 10);
    cfg.trainer.epochs = 6;
    cfg.trainer.batch_tasks = 2;
    cfg.trainer.self_imitation_steps = 1;
    cfg.trainer.hidden = vec![8, 8];
    cfg.compare.random_seeds = 2;
    cfg.cka.images = 24;
    cfg
}
