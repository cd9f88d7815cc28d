//! A multi-head policy over simulation flags, trained with REINFORCE against a
//! self-critical baseline, decaying exploration noise, and self-imitation of
//! the best action seen per task.

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkit::checkpoint::{self, POLICY_MAGIC};
use crate::numkit::{softmax, GradientSet, Network};
use crate::reward::{EvalMode, KeyedTask, RewardOracle};
use crate::scenegen::SimParams;
use crate::seed;

/// Shared trunk of dense+ReLU layers followed by one 2-way head per flag.
///
/// The heads are stored as a single dense layer with `2 * m` outputs; rows
/// `2i` and `2i + 1` are head `i`'s logits, so each head still owns its own
/// weights.
#[derive(Clone, Debug, PartialEq)]
pub struct PolicyModel {
    pub net: Network,
    m: usize,
}

impl PolicyModel {
    /// Random trunk, zero-initialised heads: every head starts at (0.5, 0.5).
    pub fn new(input_dim: usize, hidden: &[usize], m: usize, seed: u64) -> Result<Self> {
        if m == 0 {
            return Err(Error::InvalidArgument(
                "policy needs at least one head".into(),
            ));
        }
        let mut b = Network::builder(&[input_dim], seed::derive(seed, "policy-init", 0));
        for &h in hidden {
            b = b.dense(h)?.relu()?;
        }
        let net = b.features_here().dense_zero(2 * m)?.build()?;
        Ok(PolicyModel { net, m })
    }

    pub fn from_network(net: Network) -> Result<Self> {
        let out = net.output_len();
        if out == 0 || !out.is_multiple_of(2) {
            return Err(Error::Shape(format!(
                "policy output width {out} is not 2 * M"
            )));
        }
        Ok(PolicyModel { net, m: out / 2 })
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn input_dim(&self) -> usize {
        self.net.input_len()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        checkpoint::save(&self.net, POLICY_MAGIC, path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_network(checkpoint::load(path, POLICY_MAGIC)?)
    }
}

/// Per-flag distributions `[P(off), P(on)]`.
pub type Distribution = Vec<[f64; 2]>;

pub fn policy_forward(model: &PolicyModel, x: &[f64]) -> Result<Distribution> {
    let t = model.net.trace(x)?;
    Ok(heads(t.output()))
}

fn heads(logits: &[f64]) -> Distribution {
    logits
        .chunks_exact(2)
        .map(|z| {
            let p = softmax(z);
            [p[0], p[1]]
        })
        .collect()
}

/// Most probable value per head; a tie picks 0.
pub fn argmax_action(pi: &Distribution) -> SimParams {
    SimParams::new(pi.iter().map(|p| p[1] > p[0]).collect()).expect("1 <= M <= 12 heads")
}

/// Samples each flag from `(1 - eps) * pi + eps * uniform`.
pub fn sample_action(pi: &Distribution, eps: f64, seed: u64) -> Result<SimParams> {
    if !(0.0..=1.0).contains(&eps) {
        return Err(Error::InvalidArgument(format!("eps {eps} outside [0, 1]")));
    }
    let mut rng = seed::stream(seed, "sample-action", 0);
    let flags = pi
        .iter()
        .map(|p| rng.gen::<f64>() < (1.0 - eps) * p[1] + eps * 0.5)
        .collect();
    SimParams::new(flags)
}

fn check_action(model: &PolicyModel, a: &SimParams) -> Result<()> {
    if a.m() != model.m {
        return Err(Error::Shape(format!(
            "action has {} flags, policy has {} heads",
            a.m(),
            model.m
        )));
    }
    Ok(())
}

/// Gradient of `sum_i log pi_i(a_i)` with respect to every policy parameter.
pub fn log_prob_grad(model: &PolicyModel, x: &[f64], a: &SimParams) -> Result<GradientSet> {
    check_action(model, a)?;
    let t = model.net.trace(x)?;
    let pi = heads(t.output());
    let mut dz = Vec::with_capacity(2 * model.m);
    for (p, &on) in pi.iter().zip(a.flags()) {
        let j = usize::from(on);
        dz.push(f64::from(u8::from(j == 0)) - p[0]);
        dz.push(f64::from(u8::from(j == 1)) - p[1]);
    }
    let mut g = GradientSet::zeros_like(&model.net);
    model.net.backward_trace(&t, &dz, &mut g, 0);
    Ok(g)
}

/// Sum of the log-probabilities of the flags in `a`.
pub fn log_prob(model: &PolicyModel, x: &[f64], a: &SimParams) -> Result<f64> {
    check_action(model, a)?;
    let pi = policy_forward(model, x)?;
    Ok(pi
        .iter()
        .zip(a.flags())
        .map(|(p, &on)| p[usize::from(on)].ln())
        .sum())
}

fn ascend(model: &mut PolicyModel, g: &GradientSet, step: f64) {
    for (w, d) in model.net.params_mut().into_iter().zip(g.iter()) {
        for (wi, di) in w.data_mut().iter_mut().zip(d.data()) {
            *wi += step * di;
        }
    }
}

/// `theta += lr * (r_a - r_nu) * grad log pi(a)`. A zero gap leaves theta bitwise unchanged.
pub fn reinforce_update(
    model: &mut PolicyModel,
    x: &[f64],
    a: &SimParams,
    r_a: f64,
    r_nu: f64,
    lr: f64,
) -> Result<()> {
    let gap = r_a - r_nu;
    if gap == 0.0 {
        return Ok(());
    }
    let g = log_prob_grad(model, x, a)?;
    ascend(model, &g, lr * gap);
    Ok(())
}

pub fn predict(model: &PolicyModel, x: &[f64]) -> Result<SimParams> {
    Ok(argmax_action(&policy_forward(model, x)?))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    Random,
    DomainRandomization,
}

pub fn baseline_action(kind: BaselineKind, m: usize, seed: u64) -> Result<SimParams> {
    match kind {
        BaselineKind::DomainRandomization => SimParams::new(vec![true; m]),
        BaselineKind::Random => {
            let mut rng = seed::stream(seed, "random-baseline", 0);
            SimParams::new((0..m).map(|_| rng.gen_bool(0.5)).collect())
        }
    }
}

/// Reward lookup for seen task `task` (an index into the training task list).
pub trait RewardSource: Sync {
    fn reward(&self, task: usize, action: &SimParams) -> Result<f64>;
}

/// Frozen per-task tables indexed by action code.
#[derive(Clone, Debug, PartialEq)]
pub struct TableReward {
    pub m: usize,
    pub tables: Vec<Vec<f64>>,
}

impl TableReward {
    pub fn new(m: usize, tables: Vec<Vec<f64>>) -> Result<Self> {
        if tables.iter().any(|t| t.len() != 1 << m) {
            return Err(Error::Shape(format!(
                "every reward table needs 2^{m} entries"
            )));
        }
        Ok(TableReward { m, tables })
    }
}

impl RewardSource for TableReward {
    fn reward(&self, task: usize, action: &SimParams) -> Result<f64> {
        self.tables
            .get(task)
            .and_then(|t| t.get(action.encode() as usize))
            .copied()
            .ok_or_else(|| {
                Error::InvalidArgument(format!("no reward for task {task}, action {action}"))
            })
    }
}

/// Rewards from the real pipeline through the cached oracle.
pub struct OracleReward<'a> {
    pub oracle: &'a RewardOracle,
    pub tasks: Vec<KeyedTask<'a>>,
    pub mode: EvalMode,
}

impl RewardSource for OracleReward<'_> {
    fn reward(&self, task: usize, action: &SimParams) -> Result<f64> {
        let t = self
            .tasks
            .get(task)
            .ok_or_else(|| Error::InvalidArgument(format!("no task {task}")))?;
        self.oracle.reward(t, action, self.mode)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainerConfig {
    /// Number of outer epochs `T`.
    pub epochs: usize,
    /// Tasks per minibatch `n`.
    pub batch_tasks: usize,
    /// Self-imitation steps per epoch.
    pub self_imitation_steps: usize,
    pub eps0: f64,
    /// Lower bound on the exploration noise.
    pub eps_floor: f64,
    /// Step size per percentage point of reward gap.
    pub lr: f64,
    pub hidden: Vec<usize>,
    pub seed: u64,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        TrainerConfig {
            epochs: 1000,
            batch_tasks: 4,
            self_imitation_steps: 5,
            eps0: 0.5,
            eps_floor: 0.01,
            lr: 5e-4,
            hidden: vec![64, 64],
            seed: 0,
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self, num_tasks: usize) -> Result<()> {
        let fail = |m: String| Err(Error::InvalidArgument(m));
        if self.epochs < 1 {
            return fail("epochs must be at least 1".into());
        }
        if self.batch_tasks < 1 || self.batch_tasks > num_tasks {
            return fail(format!(
                "batch of {} tasks from {num_tasks} seen tasks",
                self.batch_tasks
            ));
        }
        if !(0.0..=1.0).contains(&self.eps0) || !(0.0..=1.0).contains(&self.eps_floor) {
            return fail("noise levels must lie in [0, 1]".into());
        }
        if !(self.lr > 0.0) {
            return fail("lr must be positive".into());
        }
        Ok(())
    }

    /// Noise at 1-based epoch `t`: `max(eps0 / t, eps_floor)`.
    pub fn noise(&self, t: usize) -> f64 {
        (self.eps0 / t as f64).max(self.eps_floor)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BestEntry {
    pub action: SimParams,
    pub reward: f64,
}

/// Best action found so far for each seen task.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BestActionTable {
    pub entries: Vec<Option<BestEntry>>,
}

impl BestActionTable {
    pub fn new(tasks: usize) -> Self {
        BestActionTable {
            entries: vec![None; tasks],
        }
    }

    /// Replaces the entry if `reward` is strictly higher; returns whether it did.
    pub fn offer(&mut self, task: usize, action: &SimParams, reward: f64) -> bool {
        let better = self.entries[task]
            .as_ref()
            .is_none_or(|e| reward > e.reward);
        if better {
            self.entries[task] = Some(BestEntry {
                action: action.clone(),
                reward,
            });
        }
        better
    }
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub eps: f64,
    pub tasks: Vec<usize>,
    pub actions: Vec<String>,
    pub rewards: Vec<f64>,
    pub argmax_actions: Vec<String>,
    pub argmax_rewards: Vec<f64>,
}

/// Everything needed to continue training after epoch `epoch`.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainerState {
    pub epoch: usize,
    pub model: PolicyModel,
    pub best: BestActionTable,
}

impl TrainerState {
    pub fn fresh(
        input_dim: usize,
        m: usize,
        num_tasks: usize,
        cfg: &TrainerConfig,
    ) -> Result<Self> {
        Ok(TrainerState {
            epoch: 0,
            model: PolicyModel::new(input_dim, &cfg.hidden, m, cfg.seed)?,
            best: BestActionTable::new(num_tasks),
        })
    }

    /// Writes `policy.s2tpol` and `trainer.json` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        self.model.save(&dir.join("policy.s2tpol"))?;
        #[derive(Serialize)]
        struct Meta<'a> {
            epoch: usize,
            best: &'a BestActionTable,
        }
        crate::io::write_json(
            &dir.join("trainer.json"),
            &Meta {
                epoch: self.epoch,
                best: &self.best,
            },
        )
    }

    pub fn load(dir: &Path) -> Result<Self> {
        #[derive(Deserialize)]
        struct Meta {
            epoch: usize,
            best: BestActionTable,
        }
        let meta: Meta = crate::io::read_json(&dir.join("trainer.json"))?;
        Ok(TrainerState {
            epoch: meta.epoch,
            model: PolicyModel::load(&dir.join("policy.s2tpol"))?,
            best: meta.best,
        })
    }
}

pub struct TrainOutcome {
    pub model: PolicyModel,
    pub best: BestActionTable,
    pub log: Vec<EpochLog>,
}

/// Trains from scratch; see [`train_policy_from`].
pub fn train_policy(
    embeddings: &[Vec<f64>],
    m: usize,
    rewards: &dyn RewardSource,
    cfg: &TrainerConfig,
) -> Result<TrainOutcome> {
    let dim = embeddings.first().map_or(0, Vec::len);
    let state = TrainerState::fresh(dim, m, embeddings.len(), cfg)?;
    let mut log = Vec::new();
    let state = train_policy_from(state, embeddings, rewards, cfg, |e, _| {
        log.push(e.clone());
        Ok(())
    })?;
    Ok(TrainOutcome {
        model: state.model,
        best: state.best,
        log,
    })
}

/// Runs epochs `state.epoch + 1 ..= cfg.epochs`, calling `on_epoch` after each.
///
/// All randomness is keyed by `(cfg.seed, epoch)`, so stopping after any
/// epoch and resuming from the saved state reproduces an uninterrupted run.
pub fn train_policy_from(
    mut state: TrainerState,
    embeddings: &[Vec<f64>],
    rewards: &dyn RewardSource,
    cfg: &TrainerConfig,
    mut on_epoch: impl FnMut(&EpochLog, &TrainerState) -> Result<()>,
) -> Result<TrainerState> {
    cfg.validate(embeddings.len())?;
    if embeddings
        .iter()
        .any(|e| e.len() != state.model.input_dim())
    {
        return Err(Error::Shape(
            "embedding length differs from policy input".into(),
        ));
    }
    if state.best.entries.len() != embeddings.len() {
        return Err(Error::Shape(
            "best-action table size differs from task count".into(),
        ));
    }
    let all: Vec<usize> = (0..embeddings.len()).collect();
    for t in state.epoch + 1..=cfg.epochs {
        let eps = cfg.noise(t);
        let mut batch = all.clone();
        batch.shuffle(&mut seed::stream(cfg.seed, "minibatch", t as u64));
        batch.truncate(cfg.batch_tasks);
        let model = &state.model;
        let draws: Vec<(SimParams, SimParams)> = batch
            .iter()
            .map(|&i| {
                let pi = policy_forward(model, &embeddings[i])?;
                let a = sample_action(
                    &pi,
                    eps,
                    seed::derive(cfg.seed, "explore", (t * all.len() + i) as u64),
                )?;
                Ok((a, argmax_action(&pi)))
            })
            .collect::<Result<_>>()?;
        let scored: Vec<(f64, f64)> = batch
            .par_iter()
            .zip(&draws)
            .map(|(&i, (a, nu))| Ok((rewards.reward(i, a)?, rewards.reward(i, nu)?)))
            .collect::<Result<_>>()?;
        for (&i, ((a, _), (ra, _))) in batch.iter().zip(draws.iter().zip(&scored)) {
            state.best.offer(i, a, *ra);
        }
        let mut step = GradientSet::zeros_like(&state.model.net);
        for (&i, ((a, _), (ra, rnu))) in batch.iter().zip(draws.iter().zip(&scored)) {
            let gap = ra - rnu;
            if gap != 0.0 {
                step.add_scaled(
                    &log_prob_grad(&state.model, &embeddings[i], a)?,
                    gap / batch.len() as f64,
                );
            }
        }
        if scored.iter().any(|(ra, rnu)| ra != rnu) {
            ascend(&mut state.model, &step, cfg.lr);
        }
        for _ in 0..cfg.self_imitation_steps {
            let mut step = GradientSet::zeros_like(&state.model.net);
            let mut moved = false;
            for &i in &batch {
                let best = state.best.entries[i].as_ref().expect("offered above");
                let nu = predict(&state.model, &embeddings[i])?;
                let gap = best.reward - rewards.reward(i, &nu)?;
                if gap != 0.0 {
                    moved = true;
                    step.add_scaled(
                        &log_prob_grad(&state.model, &embeddings[i], &best.action)?,
                        gap / batch.len() as f64,
                    );
                }
            }
            if moved {
                ascend(&mut state.model, &step, cfg.lr);
            }
        }
        state.epoch = t;
        let entry = EpochLog {
            epoch: t,
            eps,
            tasks: batch,
            actions: draws.iter().map(|(a, _)| a.bitstring()).collect(),
            rewards: scored.iter().map(|s| s.0).collect(),
            argmax_actions: draws.iter().map(|(_, nu)| nu.bitstring()).collect(),
            argmax_rewards: scored.iter().map(|s| s.1).collect(),
        };
        on_epoch(&entry, &state)?;
    }
    Ok(state)
}

/// Appends one JSON line per entry.
pub fn write_log(out: &mut impl Write, entries: &[EpochLog]) -> Result<()> {
    for e in entries {
        let line = serde_json::to_string(e)?;
        writeln!(out, "{line}").map_err(|e| Error::io("<training log>", e))?;
    }
    Ok(())
}

/// Exact `sum_a P(a) R(a)` under the policy's product distribution.
pub fn expected_reward(model: &PolicyModel, x: &[f64], table: &[f64]) -> Result<f64> {
    let pi = policy_forward(model, x)?;
    if table.len() != 1 << pi.len() {
        return Err(Error::Shape(format!(
            "table of {} for {} heads",
            table.len(),
            pi.len()
        )));
    }
    Ok(table
        .iter()
        .enumerate()
        .map(|(code, r)| {
            let a = SimParams::decode(code as u32, pi.len()).expect("code < 2^M");
            let p: f64 = pi
                .iter()
                .zip(a.flags())
                .map(|(p, &on)| p[usize::from(on)])
                .product();
            p * r
        })
        .sum())
}
