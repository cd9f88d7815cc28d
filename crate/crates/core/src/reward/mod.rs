//! The reward oracle: pre-train a backbone on data generated with an action,
//! score it on a downstream task, and memoize every result.

mod cache;
mod eval;
mod pretrain;

use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

pub use cache::{
    now_unix, BackboneSource, CacheKey, EvalMode, RewardCache, RewardRecord, RECORD_LOG,
};
pub use eval::{
    eval_finetune, eval_knn5, eval_linear, features, knn5, linear_probe, EvalConfig, TaskFeatures,
    KNN_K,
};
pub use pretrain::{
    accuracy, pretrain_backbone, pretrain_classifier, pretrain_on, stage_layers, train_classifier,
    Arch, LrSchedule, PretrainConfig, SgdSchedule,
};

use crate::error::{Error, Result};
use crate::numkit::checkpoint::{self, NETWORK_MAGIC};
use crate::numkit::Network;
use crate::scenegen::{enumerate_space, render_reference, SimParams};
use crate::seed;
use crate::tasks::TaskData;

/// A task paired with its content checksum, computed once.
#[derive(Clone, Debug)]
pub struct KeyedTask<'a> {
    pub task: &'a TaskData,
    pub checksum: String,
}

impl<'a> KeyedTask<'a> {
    pub fn new(task: &'a TaskData) -> Result<Self> {
        Ok(KeyedTask {
            task,
            checksum: task.checksum()?,
        })
    }

    pub fn all(tasks: impl IntoIterator<Item = &'a TaskData>) -> Result<Vec<Self>> {
        tasks.into_iter().map(KeyedTask::new).collect()
    }
}

/// Everything that determines a reward besides the task and the action.
pub struct RewardOracle {
    pretrain: PretrainConfig,
    eval: EvalConfig,
    config_checksum: String,
    pub cache: RewardCache,
}

impl RewardOracle {
    pub fn new(pretrain: PretrainConfig, eval: EvalConfig, cache: RewardCache) -> Result<Self> {
        pretrain.validate()?;
        #[derive(Serialize)]
        struct Canon<'a> {
            pretrain: &'a PretrainConfig,
            eval: &'a EvalConfig,
        }
        let canon = serde_json::to_vec(&Canon {
            pretrain: &pretrain,
            eval: &eval,
        })?;
        Ok(RewardOracle {
            config_checksum: seed::checksum(&canon),
            pretrain,
            eval,
            cache,
        })
    }

    pub fn open(pretrain: PretrainConfig, eval: EvalConfig, dir: &Path) -> Result<Self> {
        Self::new(pretrain, eval, RewardCache::open(dir)?)
    }

    pub fn pretrain_config(&self) -> &PretrainConfig {
        &self.pretrain
    }

    pub fn eval_config(&self) -> &EvalConfig {
        &self.eval
    }

    pub fn config_checksum(&self) -> &str {
        &self.config_checksum
    }

    fn backbone_name(source: BackboneSource, action: &SimParams) -> String {
        match source {
            BackboneSource::Simulated => format!("sim-{}", action.bitstring()),
            BackboneSource::Scratch => "scratch".into(),
            BackboneSource::Reference => "reference".into(),
        }
    }

    fn build_backbone(&self, source: BackboneSource, action: &SimParams) -> Result<Network> {
        let cfg = &self.pretrain;
        match source {
            BackboneSource::Simulated => pretrain_backbone(action, cfg),
            BackboneSource::Scratch => cfg
                .arch
                .build(cfg.image_size, seed::derive(cfg.seed, "scratch", 0)),
            BackboneSource::Reference => {
                let data = render_reference(
                    cfg.num_classes,
                    cfg.images_per_class,
                    cfg.image_size,
                    seed::derive(cfg.seed, "reference", 0),
                )?;
                pretrain_on(&data, cfg)
            }
        }
    }

    /// The backbone for `(source, action)`, loaded from the cache directory when present.
    pub fn backbone(&self, source: BackboneSource, action: &SimParams) -> Result<Network> {
        let name = Self::backbone_name(source, action);
        let path = self.cache.backbone_path(&self.config_checksum, &name);
        if let Some(p) = path.as_ref().filter(|p| p.exists()) {
            if let Ok(net) = checkpoint::load(p, NETWORK_MAGIC) {
                return Ok(net);
            }
        }
        let net = self.build_backbone(source, action)?;
        if let Some(p) = path {
            checkpoint::save(&net, NETWORK_MAGIC, &p)?;
        }
        Ok(net)
    }

    fn key(
        &self,
        task: &KeyedTask,
        source: BackboneSource,
        action: &SimParams,
        mode: EvalMode,
    ) -> CacheKey {
        let (code, m) = match source {
            BackboneSource::Simulated => (action.encode(), action.m()),
            _ => (0, 0),
        };
        CacheKey {
            task_checksum: task.checksum.clone(),
            source,
            action: code,
            m,
            mode,
            config_checksum: self.config_checksum.clone(),
        }
    }

    /// Records for every `(task, mode)` pair, task-major. One backbone serves all misses.
    pub fn evaluate(
        &self,
        tasks: &[KeyedTask],
        source: BackboneSource,
        action: &SimParams,
        modes: &[EvalMode],
    ) -> Result<Vec<RewardRecord>> {
        let mut out: Vec<Option<RewardRecord>> = Vec::with_capacity(tasks.len() * modes.len());
        for t in tasks {
            for &mode in modes {
                out.push(self.cache.get(&self.key(t, source, action, mode)));
            }
        }
        if out.iter().all(Option::is_some) {
            return Ok(out.into_iter().flatten().collect());
        }
        let backbone = self.backbone(source, action)?;
        let backbone_checksum = seed::checksum(&checkpoint::encode(&backbone, NETWORK_MAGIC));
        let filled: Vec<Vec<RewardRecord>> = tasks
            .par_iter()
            .enumerate()
            .map(|(ti, t)| {
                let slots = &out[ti * modes.len()..(ti + 1) * modes.len()];
                let needs_features = modes
                    .iter()
                    .zip(slots)
                    .any(|(m, s)| s.is_none() && *m != EvalMode::Finetune);
                let feats = if needs_features {
                    Some(TaskFeatures::extract(&backbone, t.task)?)
                } else {
                    None
                };
                let mut recs = Vec::with_capacity(modes.len());
                for (&mode, slot) in modes.iter().zip(slots) {
                    if let Some(r) = slot {
                        recs.push(r.clone());
                        continue;
                    }
                    let task = t.task;
                    let reward = match (mode, &feats) {
                        (EvalMode::Knn5, Some(f)) => {
                            knn5(&f.train, &task.train.labels, &f.test, &task.test.labels)?
                        }
                        (EvalMode::Linear, Some(f)) => linear_probe(
                            &f.train,
                            &task.train.labels,
                            &f.test,
                            &task.test.labels,
                            task.num_classes(),
                            &self.eval.linear,
                            seed::derive(self.eval.seed, "linear", 0),
                        )?,
                        _ => eval_finetune(
                            &backbone,
                            task,
                            &self.eval.finetune,
                            seed::derive(self.eval.seed, "finetune", 0),
                        )?,
                    };
                    let key = self.key(t, source, action, mode);
                    recs.push(self.cache.insert(RewardRecord {
                        task: task.name().to_string(),
                        task_checksum: key.task_checksum,
                        source,
                        action: key.action,
                        m: key.m,
                        mode,
                        reward,
                        backbone_checksum: backbone_checksum.clone(),
                        config_checksum: key.config_checksum,
                        timestamp: now_unix(),
                    })?);
                }
                Ok(recs)
            })
            .collect::<Result<_>>()?;
        Ok(filled.into_iter().flatten().collect())
    }

    pub fn record(
        &self,
        task: &KeyedTask,
        action: &SimParams,
        mode: EvalMode,
    ) -> Result<RewardRecord> {
        let mut v = self.evaluate(
            std::slice::from_ref(task),
            BackboneSource::Simulated,
            action,
            &[mode],
        )?;
        Ok(v.pop().expect("one task, one mode"))
    }

    pub fn reward(&self, task: &KeyedTask, action: &SimParams, mode: EvalMode) -> Result<f64> {
        self.record(task, action, mode).map(|r| r.reward)
    }

    /// Fills the cache for every action of the `2^m` space on every task.
    ///
    /// `progress` is called with `(done, total)` after each action.
    pub fn sweep(
        &self,
        tasks: &[KeyedTask],
        m: usize,
        modes: &[EvalMode],
        progress: Option<&(dyn Fn(usize, usize) + Sync)>,
    ) -> Result<()> {
        let space = enumerate_space(m)?;
        let done = std::sync::atomic::AtomicUsize::new(0);
        space.par_iter().try_for_each(|a| {
            self.evaluate(tasks, BackboneSource::Simulated, a, modes)?;
            let d = done.fetch_add(1, std::sync::atomic::Ordering::Relaxed) + 1;
            if let Some(p) = progress {
                p(d, space.len());
            }
            Ok::<_, Error>(())
        })
    }

    /// Rewards of every action of the `2^m` space, indexed by action code.
    pub fn reward_table(&self, task: &KeyedTask, m: usize, mode: EvalMode) -> Result<Vec<f64>> {
        enumerate_space(m)?
            .par_iter()
            .map(|a| self.reward(task, a, mode))
            .collect()
    }
}

/// Free-function form of [`RewardOracle::reward`].
pub fn reward_of(
    task: &KeyedTask,
    action: &SimParams,
    mode: EvalMode,
    oracle: &RewardOracle,
) -> Result<f64> {
    oracle.reward(task, action, mode)
}

/// Exhaustive search: the best action (ties go to the lowest code) and the full table.
pub fn brute_force_best(
    task: &KeyedTask,
    m: usize,
    mode: EvalMode,
    oracle: &RewardOracle,
) -> Result<(SimParams, Vec<f64>)> {
    let table = oracle.reward_table(task, m, mode)?;
    let best = best_code(&table);
    Ok((SimParams::decode(best as u32, m)?, table))
}

/// Index of the largest entry; the first one wins ties.
pub fn best_code(table: &[f64]) -> usize {
    let mut best = 0;
    for (i, &r) in table.iter().enumerate() {
        if r > table[best] {
            best = i;
        }
    }
    best
}
