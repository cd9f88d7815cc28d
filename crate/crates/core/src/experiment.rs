//! The end-to-end experiment: a declarative config, a staged pipeline with
//! checksummed artifacts, and the subsampling robustness study.
//!
//! Stages and the files they own, relative to the output directory:
//!
//! | stage         | depends on                 | artifacts                                      |
//! |---------------|----------------------------|------------------------------------------------|
//! | `suite`       |                            | `suite/`                                       |
//! | `probe`       |                            | `probe.s2tnet`                                 |
//! | `embeddings`  | suite, probe               | `embeddings/<task>.s2temb`                     |
//! | `policy`      | suite, embeddings          | `policy.s2tpol`, `train_log.jsonl`, `best_actions.json` |
//! | `predictions` | suite, embeddings, policy  | `predictions.json`                             |
//! | `compare`     | suite, predictions         | `results.csv`, `summary.txt`                   |
//! | `cka`         | suite, predictions         | `cka.csv`                                      |
//!
//! `state.json` records, per completed stage, a digest of its inputs and the
//! checksum of every artifact. A stage is skipped only when both still match
//! and none of its dependencies ran in the current invocation.

use std::collections::{BTreeMap, BTreeSet};
use std::io::BufRead;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::{cka_eval_set, cka_report, compare_methods, CkaReport, ResultsTable};
use crate::error::{Error, Result};
use crate::io::{read, read_json, write_atomic, write_json};
use crate::policy::{
    baseline_action, predict, train_policy_from, BaselineKind, BestActionTable, EpochLog,
    OracleReward, PolicyModel, TrainerConfig, TrainerState,
};
use crate::reward::{
    stage_layers, BackboneSource, EvalConfig, EvalMode, KeyedTask, PretrainConfig, RewardOracle,
    RewardRecord,
};
use crate::scenegen::SimParams;
use crate::seed;
use crate::tasks::{
    build_suite_with, load_suite, save_suite, SplitRole, Suite, SuiteConfig, TaskData,
};
use crate::taskvec::{embed_task, EmbedConfig, EmbedSeeds, ProbeNetwork, TaskEmbedding};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbedSection {
    /// Fraction of each task's training split used for the main embeddings.
    pub fraction: f64,
    pub seed: u64,
    pub settings: EmbedConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompareSection {
    /// Reward mode used as the training signal.
    pub train_mode: EvalMode,
    /// Modes reported in the results table.
    pub modes: Vec<EvalMode>,
    pub random_seeds: usize,
    pub random_seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RobustnessSection {
    pub fractions: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CkaSection {
    pub images: usize,
    pub seed: u64,
}

/// Locations and parallelism. Excluded from the config checksum.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    /// Relative paths resolve against the config file's directory.
    pub out_dir: PathBuf,
    pub cache_dir: PathBuf,
    /// Worker threads; 0 uses every core.
    pub jobs: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Number of simulation parameters the policy controls.
    pub m: usize,
    pub run: RunSection,
    pub suite: SuiteConfig,
    pub pretrain: PretrainConfig,
    pub probe: PretrainConfig,
    pub embed: EmbedSection,
    pub trainer: TrainerConfig,
    pub eval: EvalConfig,
    pub compare: CompareSection,
    pub robustness: RobustnessSection,
    pub cka: CkaSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            m: 8,
            run: RunSection {
                out_dir: "run".into(),
                cache_dir: "reward_cache".into(),
                jobs: 0,
            },
            suite: SuiteConfig::new(0),
            pretrain: PretrainConfig::default(),
            probe: PretrainConfig::default(),
            embed: EmbedSection {
                fraction: 1.0,
                seed: 0,
                settings: EmbedConfig::default(),
            },
            trainer: TrainerConfig::default(),
            eval: EvalConfig::default(),
            compare: CompareSection {
                train_mode: EvalMode::Knn5,
                modes: vec![EvalMode::Knn5],
                random_seeds: 5,
                random_seed: 0,
            },
            robustness: RobustnessSection {
                fractions: vec![1.0, 0.5, 0.2, 0.1],
            },
            cka: CkaSection {
                images: 512,
                seed: 0,
            },
        }
    }
}

impl ExperimentConfig {
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file and resolves its relative paths against the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = String::from_utf8(read(path)?).map_err(|e| Error::Config(e.to_string()))?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut cfg.run.out_dir, &mut cfg.run.cache_dir] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.to_string()));
        if self.m == 0 || self.m > crate::scenegen::DEFAULT_M {
            return fail("m must lie in 1..=8");
        }
        if !(self.embed.fraction > 0.0 && self.embed.fraction <= 1.0) {
            return fail("embed.fraction must lie in (0, 1]");
        }
        if self
            .robustness
            .fractions
            .iter()
            .any(|f| !(*f > 0.0 && *f <= 1.0))
        {
            return fail("robustness fractions must lie in (0, 1]");
        }
        if self.compare.modes.is_empty() {
            return fail("compare.modes is empty");
        }
        if self.compare.random_seeds == 0 {
            return fail("compare.random_seeds must be at least 1");
        }
        if self.cka.images < 2 {
            return fail("cka.images must be at least 2");
        }
        if self.suite.seen.is_empty() {
            return fail("the suite needs seen tasks");
        }
        self.pretrain.validate()?;
        self.probe.validate()?;
        self.trainer.validate(self.suite.seen.len())
    }

    /// Checksum of the canonical JSON form, leaving out the `run` section.
    pub fn checksum(&self) -> Result<String> {
        let mut v = serde_json::to_value(self)?;
        v.as_object_mut().expect("struct").remove("run");
        Ok(seed::checksum(&serde_json::to_vec(&v)?))
    }

    /// The same experiment under another seed for the policy, the embeddings,
    /// and the random baseline. The suite and reward pipeline stay fixed, so
    /// the reward cache is shared.
    pub fn with_experiment_seed(&self, s: u64) -> Self {
        let mut c = self.clone();
        c.trainer.seed = s;
        c.embed.seed = s;
        c.compare.random_seed = s;
        c
    }

    pub fn oracle(&self) -> Result<RewardOracle> {
        RewardOracle::open(
            self.pretrain.clone(),
            self.eval.clone(),
            &self.run.cache_dir,
        )
    }
}

/// Runs `f` on a pool of `jobs` threads (0 means the global pool).
pub fn with_jobs<T: Send>(jobs: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    if jobs == 0 {
        return Ok(f());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::Config(e.to_string()))?;
    Ok(pool.install(f))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Suite,
    Probe,
    Embeddings,
    Policy,
    Predictions,
    Compare,
    Cka,
}

impl Stage {
    pub const ALL: [Stage; 7] = [
        Stage::Suite,
        Stage::Probe,
        Stage::Embeddings,
        Stage::Policy,
        Stage::Predictions,
        Stage::Compare,
        Stage::Cka,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Suite => "suite",
            Stage::Probe => "probe",
            Stage::Embeddings => "embeddings",
            Stage::Policy => "policy",
            Stage::Predictions => "predictions",
            Stage::Compare => "compare",
            Stage::Cka => "cka",
        }
    }

    pub fn deps(self) -> &'static [Stage] {
        match self {
            Stage::Suite | Stage::Probe => &[],
            Stage::Embeddings => &[Stage::Suite, Stage::Probe],
            Stage::Policy => &[Stage::Suite, Stage::Embeddings],
            Stage::Predictions => &[Stage::Suite, Stage::Embeddings, Stage::Policy],
            Stage::Compare | Stage::Cka => &[Stage::Suite, Stage::Predictions],
        }
    }

    /// The config sections this stage reads, as canonical JSON.
    fn config_slice(self, cfg: &ExperimentConfig) -> Result<serde_json::Value> {
        use serde_json::json;
        Ok(match self {
            Stage::Suite => json!({ "suite": cfg.suite }),
            Stage::Probe => json!({ "probe": cfg.probe }),
            Stage::Embeddings => json!({ "embed": cfg.embed }),
            Stage::Policy => json!({
                "m": cfg.m,
                "trainer": cfg.trainer,
                "pretrain": cfg.pretrain,
                "eval": cfg.eval,
                "train_mode": cfg.compare.train_mode,
            }),
            Stage::Predictions => json!({}),
            Stage::Compare => json!({
                "m": cfg.m,
                "pretrain": cfg.pretrain,
                "eval": cfg.eval,
                "compare": cfg.compare,
            }),
            Stage::Cka => json!({ "m": cfg.m, "pretrain": cfg.pretrain, "cka": cfg.cka }),
        })
    }
}

/// Marker for a completed stage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub inputs: String,
    /// Artifact path (relative to the output directory) to content checksum.
    pub artifacts: BTreeMap<String, String>,
}

/// `state.json`: the completed stages of one output directory.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunState {
    pub config_checksum: String,
    pub stages: BTreeMap<Stage, StageRecord>,
}

pub const STATE_FILE: &str = "state.json";

impl RunState {
    /// Loads the state and drops every marker whose artifacts no longer verify.
    pub fn load_verified(out: &Path) -> Result<Self> {
        let path = out.join(STATE_FILE);
        if !path.exists() {
            return Ok(RunState::default());
        }
        let mut state: RunState = read_json(&path)?;
        state.stages.retain(|_, rec| artifacts_verify(out, rec));
        Ok(state)
    }

    pub fn save(&self, out: &Path) -> Result<()> {
        write_json(&out.join(STATE_FILE), self)
    }

    fn inputs_digest(&self, stage: Stage, cfg: &ExperimentConfig) -> Result<String> {
        let deps: BTreeMap<&str, Option<&BTreeMap<String, String>>> = stage
            .deps()
            .iter()
            .map(|d| (d.name(), self.stages.get(d).map(|r| &r.artifacts)))
            .collect();
        let canon = serde_json::json!({
            "stage": stage.name(),
            "config": stage.config_slice(cfg)?,
            "deps": deps,
        });
        Ok(seed::checksum(&serde_json::to_vec(&canon)?))
    }
}

fn artifacts_verify(out: &Path, rec: &StageRecord) -> bool {
    rec.artifacts
        .iter()
        .all(|(p, sum)| std::fs::read(out.join(p)).is_ok_and(|b| seed::checksum(&b) == *sum))
}

fn file_checksums(out: &Path, rel: &[PathBuf]) -> Result<BTreeMap<String, String>> {
    rel.iter()
        .map(|p| Ok((path_key(p), seed::checksum(&read(&out.join(p))?))))
        .collect()
}

fn path_key(p: &Path) -> String {
    p.components()
        .map(|c| c.as_os_str().to_string_lossy())
        .collect::<Vec<_>>()
        .join("/")
}

fn files_under(root: &Path, rel: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    let dir = root.join(rel);
    let mut entries: Vec<_> = std::fs::read_dir(&dir)
        .map_err(|e| Error::io(&dir, e))?
        .collect::<std::io::Result<_>>()
        .map_err(|e| Error::io(&dir, e))?;
    entries.sort_by_key(|e| e.file_name());
    for e in entries {
        let child = rel.join(e.file_name());
        if e.path().is_dir() {
            out.extend(files_under(root, &child)?);
        } else {
            out.push(child);
        }
    }
    Ok(out)
}

/// What happened to each stage in one invocation of [`run_experiment`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RunReport {
    pub ran: Vec<Stage>,
    pub skipped: Vec<Stage>,
}

/// Per-epoch progress callback used by the policy stage.
pub type Progress<'a> = &'a (dyn Fn(&str) + Sync);

/// The loaded products of earlier stages.
struct Ctx<'a> {
    cfg: &'a ExperimentConfig,
    out: PathBuf,
    suite: Option<Suite>,
    oracle: Option<RewardOracle>,
    progress: Progress<'a>,
}

impl<'a> Ctx<'a> {
    fn suite(&mut self) -> Result<&Suite> {
        if self.suite.is_none() {
            self.suite = Some(load_suite(&self.out.join("suite"))?);
        }
        Ok(self.suite.as_ref().expect("loaded"))
    }

    fn oracle(&mut self) -> Result<&RewardOracle> {
        if self.oracle.is_none() {
            self.oracle = Some(self.cfg.oracle()?);
        }
        Ok(self.oracle.as_ref().expect("opened"))
    }

    fn run(&mut self, stage: Stage) -> Result<Vec<PathBuf>> {
        let cfg = self.cfg;
        let out = self.out.clone();
        match stage {
            Stage::Suite => {
                let dir = out.join("suite");
                if dir.exists() {
                    std::fs::remove_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
                }
                let suite = build_suite_with(&cfg.suite)?;
                save_suite(&suite, &dir)?;
                self.suite = Some(suite);
                files_under(&out, Path::new("suite"))
            }
            Stage::Probe => {
                ProbeNetwork::pretrain(&cfg.probe)?.save(&out.join("probe.s2tnet"))?;
                Ok(vec!["probe.s2tnet".into()])
            }
            Stage::Embeddings => {
                let probe = ProbeNetwork::load(&out.join("probe.s2tnet"))?;
                let dir = out.join("embeddings");
                if dir.exists() {
                    std::fs::remove_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
                }
                let tasks: Vec<&TaskData> = self.suite()?.tasks().collect();
                let embs = embed_tasks(
                    &probe,
                    &tasks,
                    cfg.embed.fraction,
                    &cfg.embed.settings,
                    cfg.embed.seed,
                )?;
                let mut files = Vec::new();
                for (t, e) in tasks.iter().zip(&embs) {
                    let rel = embedding_path(t.name());
                    e.save(&out.join(&rel))?;
                    files.push(rel);
                }
                Ok(files)
            }
            Stage::Policy => {
                let progress = self.progress;
                let seen: Vec<TaskData> = self.suite()?.seen.clone();
                let x = load_embeddings(&out, seen.iter())?;
                let oracle = self.oracle()?;
                let rewards = OracleReward {
                    oracle,
                    tasks: KeyedTask::all(&seen)?,
                    mode: cfg.compare.train_mode,
                };
                let snap = out.join("policy-snapshot");
                let (model, best, log) =
                    train_resumable(&x, cfg.m, &rewards, &cfg.trainer, &snap, progress)?;
                model.save(&out.join("policy.s2tpol"))?;
                write_log_file(&out.join("train_log.jsonl"), &log)?;
                let table: BTreeMap<&str, Option<&crate::policy::BestEntry>> = seen
                    .iter()
                    .map(|t| t.name())
                    .zip(best.entries.iter().map(Option::as_ref))
                    .collect();
                write_json(&out.join("best_actions.json"), &table)?;
                std::fs::remove_dir_all(&snap).map_err(|e| Error::io(&snap, e))?;
                Ok(vec![
                    "policy.s2tpol".into(),
                    "train_log.jsonl".into(),
                    "best_actions.json".into(),
                ])
            }
            Stage::Predictions => {
                let model = PolicyModel::load(&out.join("policy.s2tpol"))?;
                let tasks: Vec<TaskData> = self.suite()?.tasks().cloned().collect();
                let x = load_embeddings(&out, tasks.iter())?;
                let preds: BTreeMap<String, String> = tasks
                    .iter()
                    .zip(&x)
                    .map(|(t, x)| Ok((t.name().to_string(), predict(&model, x)?.bitstring())))
                    .collect::<Result<_>>()?;
                write_json(&out.join("predictions.json"), &preds)?;
                Ok(vec!["predictions.json".into()])
            }
            Stage::Compare => {
                let preds = load_predictions(&out.join("predictions.json"))?;
                self.suite()?;
                self.oracle()?;
                let (suite, oracle) = (
                    self.suite.as_ref().expect("loaded"),
                    self.oracle.as_ref().expect("opened"),
                );
                let c = &cfg.compare;
                let table = compare_methods(
                    suite,
                    &preds,
                    oracle,
                    &c.modes,
                    cfg.m,
                    c.random_seeds,
                    c.random_seed,
                )?;
                table.save_csv(&out.join("results.csv"))?;
                write_atomic(&out.join("summary.txt"), table.summary().as_bytes())?;
                Ok(vec!["results.csv".into(), "summary.txt".into()])
            }
            Stage::Cka => {
                let preds = load_predictions(&out.join("predictions.json"))?;
                self.suite()?;
                self.oracle()?;
                let (suite, oracle) = (
                    self.suite.as_ref().expect("loaded"),
                    self.oracle.as_ref().expect("opened"),
                );
                let report = cka_for_run(suite, &preds, oracle, cfg)?;
                write_atomic(&out.join("cka.csv"), &report.to_csv()?)?;
                Ok(vec!["cka.csv".into()])
            }
        }
    }
}

/// Relative path of a task's embedding inside the output directory.
pub fn embedding_path(task: &str) -> PathBuf {
    Path::new("embeddings").join(format!("{task}.s2temb"))
}

fn load_embeddings<'t>(
    out: &Path,
    tasks: impl Iterator<Item = &'t TaskData>,
) -> Result<Vec<Vec<f64>>> {
    tasks
        .map(|t| Ok(TaskEmbedding::load(&out.join(embedding_path(t.name())))?.values))
        .collect()
}

/// Reads `predictions.json` (task name to bitstring).
pub fn load_predictions(path: &Path) -> Result<BTreeMap<String, SimParams>> {
    let raw: BTreeMap<String, String> = read_json(path)?;
    raw.into_iter().map(|(k, v)| Ok((k, v.parse()?))).collect()
}

/// Embeds each task with seeds derived from `seed` and the task's position.
pub fn embed_tasks(
    probe: &ProbeNetwork,
    tasks: &[&TaskData],
    fraction: f64,
    settings: &EmbedConfig,
    seed_value: u64,
) -> Result<Vec<TaskEmbedding>> {
    tasks
        .par_iter()
        .enumerate()
        .map(|(i, t)| {
            let seeds = EmbedSeeds::from_seed(seed::derive(seed_value, "task-embedding", i as u64));
            let mut e = embed_task(probe, t, fraction, settings, seeds)?;
            e.meta.task = t.name().to_string();
            Ok(e)
        })
        .collect()
}

const SNAPSHOT_EVERY: usize = 50;

/// Trains the policy, snapshotting to `snap` so an interrupted run resumes
/// where it stopped. A snapshot taken under a different config is discarded.
pub fn train_resumable(
    x: &[Vec<f64>],
    m: usize,
    rewards: &OracleReward,
    cfg: &TrainerConfig,
    snap: &Path,
    progress: Progress,
) -> Result<(PolicyModel, BestActionTable, Vec<EpochLog>)> {
    let fingerprint = seed::checksum(&serde_json::to_vec(&serde_json::json!({
        "trainer": cfg,
        "m": m,
        "embeddings": x,
        "tasks": rewards.tasks.iter().map(|t| &t.checksum).collect::<Vec<_>>(),
        "mode": rewards.mode,
        "oracle": rewards.oracle.config_checksum(),
    }))?);
    let fp_path = snap.join("fingerprint");
    let log_path = snap.join("train_log.jsonl");
    let resumed = std::fs::read_to_string(&fp_path)
        .ok()
        .filter(|f| f.trim() == fingerprint)
        .and_then(|_| TrainerState::load(snap).ok());
    let (state, mut log) = match resumed {
        Some(s) => {
            let log: Vec<EpochLog> = read_log_file(&log_path)?
                .into_iter()
                .filter(|e| e.epoch <= s.epoch)
                .collect();
            progress(&format!("resuming policy training after epoch {}", s.epoch));
            (s, log)
        }
        None => {
            if snap.exists() {
                std::fs::remove_dir_all(snap).map_err(|e| Error::io(snap, e))?;
            }
            let dim = x.first().map_or(0, Vec::len);
            (TrainerState::fresh(dim, m, x.len(), cfg)?, Vec::new())
        }
    };
    write_atomic(&fp_path, fingerprint.as_bytes())?;
    let state = train_policy_from(state, x, rewards, cfg, |entry, state| {
        log.push(entry.clone());
        if entry.epoch % SNAPSHOT_EVERY == 0 || entry.epoch == cfg.epochs {
            state.save(snap)?;
            write_log_file(&log_path, &log)?;
            progress(&format!("policy epoch {}/{}", entry.epoch, cfg.epochs));
        }
        Ok(())
    })?;
    Ok((state.model, state.best, log))
}

pub fn write_log_file(path: &Path, log: &[EpochLog]) -> Result<()> {
    let mut buf = Vec::new();
    crate::policy::write_log(&mut buf, log)?;
    write_atomic(path, &buf)
}

pub fn read_log_file(path: &Path) -> Result<Vec<EpochLog>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    std::io::BufReader::new(f)
        .lines()
        .map(|l| {
            let l = l.map_err(|e| Error::io(path, e))?;
            Ok(serde_json::from_str(&l)?)
        })
        .collect()
}

/// CKA between backbones of every distinct predicted action, domain
/// randomization, the reference corpus, and a random init, at every stage.
pub fn cka_for_run(
    suite: &Suite,
    preds: &BTreeMap<String, SimParams>,
    oracle: &RewardOracle,
    cfg: &ExperimentConfig,
) -> Result<CkaReport> {
    let mut sources: Vec<(String, BackboneSource, SimParams)> = Vec::new();
    let distinct: BTreeSet<&SimParams> = preds.values().collect();
    for a in distinct {
        sources.push((
            format!("predicted-{a}"),
            BackboneSource::Simulated,
            a.clone(),
        ));
    }
    let dr = baseline_action(BaselineKind::DomainRandomization, cfg.m, 0)?;
    sources.push(("domain-randomization".into(), BackboneSource::Simulated, dr));
    let off = SimParams::all_off(cfg.m);
    sources.push(("reference".into(), BackboneSource::Reference, off.clone()));
    sources.push(("scratch".into(), BackboneSource::Scratch, off));
    let nets = sources
        .iter()
        .map(|(name, src, a)| Ok((name.clone(), oracle.backbone(*src, a)?)))
        .collect::<Result<Vec<_>>>()?;
    let images = cka_eval_set(suite, cfg.cka.images, cfg.cka.seed)?;
    let stages = stage_layers(&nets[0].1);
    cka_report(&nets, &images, &stages)
}

/// Runs every stage whose marker is missing or stale, in order.
///
/// A failing stage is reported as [`Error::Stage`]; the markers of the stages
/// that completed before it stay in `state.json`.
pub fn run_experiment(cfg: &ExperimentConfig, progress: Progress) -> Result<RunReport> {
    cfg.validate()?;
    let out = cfg.run.out_dir.clone();
    std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    with_jobs(cfg.run.jobs, || {
        let mut state = RunState::load_verified(&out)?;
        state.config_checksum = cfg.checksum()?;
        let mut ctx = Ctx {
            cfg,
            out: out.clone(),
            suite: None,
            oracle: None,
            progress,
        };
        let mut report = RunReport {
            ran: Vec::new(),
            skipped: Vec::new(),
        };
        for stage in Stage::ALL {
            let inputs = state.inputs_digest(stage, cfg)?;
            let fresh = state.stages.get(&stage).is_some_and(|r| r.inputs == inputs)
                && !stage.deps().iter().any(|d| report.ran.contains(d));
            if fresh {
                report.skipped.push(stage);
                continue;
            }
            progress(&format!("stage {}", stage.name()));
            state.stages.remove(&stage);
            state.save(&out)?;
            let wrap = |e: Error| Error::Stage {
                stage: stage.name().to_string(),
                source: Box::new(e),
            };
            let files = ctx.run(stage).map_err(wrap)?;
            let artifacts = file_checksums(&out, &files).map_err(wrap)?;
            state
                .stages
                .insert(stage, StageRecord { inputs, artifacts });
            state.save(&out)?;
            report.ran.push(stage);
        }
        Ok(report)
    })?
}

/// One task's outcome at one embedding fraction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RobustnessRow {
    pub fraction: f64,
    pub task: String,
    pub split: SplitRole,
    pub mode: EvalMode,
    pub action: String,
    pub reward: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RobustnessTable {
    pub rows: Vec<RobustnessRow>,
}

impl RobustnessTable {
    pub fn mean(&self, fraction: f64, split: SplitRole, mode: EvalMode) -> Option<f64> {
        let v: Vec<f64> = self
            .rows
            .iter()
            .filter(|r| r.fraction == fraction && r.split == split && r.mode == mode)
            .map(|r| r.reward)
            .collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }

    pub fn to_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &self.rows {
            w.serialize(r).map_err(|e| Error::Config(e.to_string()))?;
        }
        w.into_inner().map_err(|e| Error::Config(e.to_string()))
    }

    /// Per-fraction means over the seen and unseen splits.
    pub fn summary(&self, modes: &[EvalMode]) -> String {
        let mut fractions: Vec<f64> = Vec::new();
        for r in &self.rows {
            if !fractions.contains(&r.fraction) {
                fractions.push(r.fraction);
            }
        }
        let mut s = format!(
            "{:<10} {:<8} {:>8} {:>8}\n",
            "fraction", "mode", "seen", "unseen"
        );
        for f in fractions {
            for &m in modes {
                let cell = |split| {
                    self.mean(f, split, m)
                        .map_or("-".to_string(), |v| format!("{v:.2}"))
                };
                s.push_str(&format!(
                    "{:<10} {:<8} {:>8} {:>8}\n",
                    f,
                    m.name(),
                    cell(SplitRole::Seen),
                    cell(SplitRole::Unseen)
                ));
            }
        }
        s
    }
}

/// Re-embeds every task at each fraction, re-predicts with the trained
/// policy, and scores the predicted actions.
pub fn robustness_study(
    suite: &Suite,
    probe: &ProbeNetwork,
    model: &PolicyModel,
    oracle: &RewardOracle,
    cfg: &ExperimentConfig,
    fractions: &[f64],
) -> Result<RobustnessTable> {
    let tasks: Vec<&TaskData> = suite.tasks().collect();
    let keyed = KeyedTask::all(tasks.iter().copied())?;
    let mut rows = Vec::new();
    for &f in fractions {
        let embs = embed_tasks(probe, &tasks, f, &cfg.embed.settings, cfg.embed.seed)?;
        let actions = embs
            .iter()
            .map(|e| predict(model, &e.values))
            .collect::<Result<Vec<_>>>()?;
        let mut by_action: BTreeMap<&SimParams, Vec<usize>> = BTreeMap::new();
        for (i, a) in actions.iter().enumerate() {
            by_action.entry(a).or_default().push(i);
        }
        let mut recs: Vec<Option<Vec<RewardRecord>>> = vec![None; tasks.len()];
        for (a, idx) in by_action {
            let sel: Vec<KeyedTask> = idx.iter().map(|&i| keyed[i].clone()).collect();
            let got = oracle.evaluate(&sel, BackboneSource::Simulated, a, &cfg.compare.modes)?;
            for (k, &i) in idx.iter().enumerate() {
                let n = cfg.compare.modes.len();
                recs[i] = Some(got[k * n..(k + 1) * n].to_vec());
            }
        }
        for ((t, a), r) in tasks.iter().zip(&actions).zip(recs) {
            for rec in r.expect("every task evaluated") {
                rows.push(RobustnessRow {
                    fraction: f,
                    task: t.name().to_string(),
                    split: t.spec.role,
                    mode: rec.mode,
                    action: a.bitstring(),
                    reward: rec.reward,
                });
            }
        }
    }
    Ok(RobustnessTable { rows })
}

/// Brings the run up to date, then runs the robustness study on its artifacts
/// and writes `robustness.csv` and `robustness.txt`.
pub fn run_robustness(
    cfg: &ExperimentConfig,
    fractions: &[f64],
    progress: Progress,
) -> Result<RobustnessTable> {
    run_experiment(cfg, progress)?;
    let out = &cfg.run.out_dir;
    with_jobs(cfg.run.jobs, || {
        let suite = load_suite(&out.join("suite"))?;
        let probe = ProbeNetwork::load(&out.join("probe.s2tnet"))?;
        let model = PolicyModel::load(&out.join("policy.s2tpol"))?;
        let table = robustness_study(&suite, &probe, &model, &cfg.oracle()?, cfg, fractions)?;
        write_atomic(&out.join("robustness.csv"), &table.to_csv()?)?;
        write_atomic(
            &out.join("robustness.txt"),
            table.summary(&cfg.compare.modes).as_bytes(),
        )?;
        Ok(table)
    })?
}

/// Reads a results table written by the compare stage.
pub fn load_results(out: &Path) -> Result<ResultsTable> {
    ResultsTable::from_csv(&read(&out.join("results.csv"))?)
}
