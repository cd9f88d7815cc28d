//! Representation similarity (linear CKA) and the method-comparison table.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkit::{Network, Tensor};
use crate::policy::{baseline_action, BaselineKind};
use crate::reward::{BackboneSource, EvalMode, KeyedTask, RewardCache, RewardOracle, RewardRecord};
use crate::scenegen::SimParams;
use crate::seed;
use crate::tasks::{SplitRole, Suite};

/// Column-centred copy of `x` as row-major `n x d` values.
fn centered(x: &Tensor) -> Result<(usize, usize, Vec<f64>)> {
    let (n, d) = (x.rows(), x.row_len());
    if n < 2 {
        return Err(Error::InvalidArgument("CKA needs at least two rows".into()));
    }
    if !x.all_finite() {
        return Err(Error::NonFinite("CKA input".into()));
    }
    let mut mean = vec![0.0; d];
    for i in 0..n {
        for (m, v) in mean.iter_mut().zip(x.row(i)) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut c = Vec::with_capacity(n * d);
    for i in 0..n {
        c.extend(x.row(i).iter().zip(&mean).map(|(v, m)| v - m));
    }
    Ok((n, d, c))
}

fn gram(n: usize, d: usize, c: &[f64]) -> Vec<f64> {
    let mut k = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let v: f64 = c[i * d..(i + 1) * d]
                .iter()
                .zip(&c[j * d..(j + 1) * d])
                .map(|(a, b)| a * b)
                .sum();
            k[i * n + j] = v;
            k[j * n + i] = v;
        }
    }
    k
}

/// `||Xc^T Yc||_F^2`, computed in feature space.
fn cross_frob2(n: usize, dx: usize, x: &[f64], dy: usize, y: &[f64]) -> f64 {
    let mut m = vec![0.0; dx * dy];
    for r in 0..n {
        let (xr, yr) = (&x[r * dx..(r + 1) * dx], &y[r * dy..(r + 1) * dy]);
        for (a, xa) in xr.iter().enumerate() {
            if *xa != 0.0 {
                for (mb, yb) in m[a * dy..(a + 1) * dy].iter_mut().zip(yr) {
                    *mb += xa * yb;
                }
            }
        }
    }
    m.iter().map(|v| v * v).sum()
}

/// Linear CKA: `||Yc^T Xc||_F^2 / (||Xc^T Xc||_F * ||Yc^T Yc||_F)` with column-centred inputs.
///
/// Uses the feature-space form when both widths are small relative to the
/// row count and the equivalent Gram-matrix form otherwise.
pub fn linear_cka(x: &Tensor, y: &Tensor) -> Result<f64> {
    if x.rows() != y.rows() {
        return Err(Error::Shape(format!(
            "CKA row counts differ: {} vs {}",
            x.rows(),
            y.rows()
        )));
    }
    let (n, dx, xc) = centered(x)?;
    let (_, dy, yc) = centered(y)?;
    let (xy, xx, yy) = if dx * dy + dx * dx + dy * dy <= 3 * n * n {
        (
            cross_frob2(n, dx, &xc, dy, &yc),
            cross_frob2(n, dx, &xc, dx, &xc),
            cross_frob2(n, dy, &yc, dy, &yc),
        )
    } else {
        let (kx, ky) = (gram(n, dx, &xc), gram(n, dy, &yc));
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| p * q).sum::<f64>();
        (dot(&kx, &ky), dot(&kx, &kx), dot(&ky, &ky))
    };
    if xx == 0.0 || yy == 0.0 {
        return Err(Error::InvalidArgument("CKA input has zero variance".into()));
    }
    Ok(xy / (xx.sqrt() * yy.sqrt()))
}

/// Features of a fixed image set at the given layer stages of each backbone,
/// with pairwise CKA per stage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CkaReport {
    pub names: Vec<String>,
    pub stages: Vec<usize>,
    /// `values[s][i][j]` is the CKA between backbones `i` and `j` at stage `stages[s]`.
    pub values: Vec<Vec<Vec<f64>>>,
}

pub fn cka_report(
    backbones: &[(String, Network)],
    images: &Tensor,
    stages: &[usize],
) -> Result<CkaReport> {
    if backbones.len() < 2 {
        return Err(Error::InvalidArgument(
            "CKA report needs at least two backbones".into(),
        ));
    }
    let mut values = Vec::with_capacity(stages.len());
    for &stage in stages {
        let feats: Vec<Tensor> = backbones
            .iter()
            .map(|(_, net)| net.activations_at(images, stage))
            .collect::<Result<_>>()?;
        let k = feats.len();
        let mut m = vec![vec![0.0; k]; k];
        for i in 0..k {
            m[i][i] = 1.0;
            for j in 0..i {
                let v = linear_cka(&feats[i], &feats[j])?;
                m[i][j] = v;
                m[j][i] = v;
            }
        }
        values.push(m);
    }
    Ok(CkaReport {
        names: backbones.iter().map(|(n, _)| n.clone()).collect(),
        stages: stages.to_vec(),
        values,
    })
}

impl CkaReport {
    /// Long-format CSV: `stage,a,b,cka`.
    pub fn to_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["stage", "a", "b", "cka"])
            .map_err(csv_err)?;
        for (s, m) in self.stages.iter().zip(&self.values) {
            for (i, a) in self.names.iter().enumerate() {
                for (j, b) in self.names.iter().enumerate() {
                    w.write_record([
                        s.to_string(),
                        a.clone(),
                        b.clone(),
                        format!("{:.6}", m[i][j]),
                    ])
                    .map_err(csv_err)?;
                }
            }
        }
        w.into_inner().map_err(|e| Error::Config(e.to_string()))
    }
}

/// Evaluation images for CKA: `count` images drawn evenly from every task's test split.
pub fn cka_eval_set(suite: &Suite, count: usize, seed_value: u64) -> Result<Tensor> {
    use rand::seq::SliceRandom;
    let mut pool: Vec<(usize, usize)> = Vec::new();
    let tasks: Vec<_> = suite.tasks().collect();
    for (t, task) in tasks.iter().enumerate() {
        pool.extend((0..task.test.len()).map(|i| (t, i)));
    }
    pool.shuffle(&mut seed::stream(seed_value, "cka-eval", 0));
    pool.truncate(count);
    pool.sort_unstable();
    let rows: Vec<Vec<f64>> = pool
        .iter()
        .map(|&(t, i)| tasks[t].test.images.row(i).to_vec())
        .collect();
    let shape = tasks
        .first()
        .ok_or_else(|| Error::InvalidArgument("empty suite".into()))?
        .test
        .image_shape()
        .to_vec();
    Tensor::stack(&shape, &rows)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Predicted,
    Random,
    DomainRandomization,
    Scratch,
    Reference,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::Predicted,
        Method::Random,
        Method::DomainRandomization,
        Method::Scratch,
        Method::Reference,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Predicted => "predicted",
            Method::Random => "random",
            Method::DomainRandomization => "domain_randomization",
            Method::Scratch => "scratch",
            Method::Reference => "reference",
        }
    }
}

/// One cell of the results table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub task: String,
    pub split: SplitRole,
    pub method: Method,
    pub mode: EvalMode,
    /// Bitstrings of the evaluated actions, `;`-separated; `-` when no action applies.
    pub actions: String,
    pub reward: f64,
    /// Checksums of the cache records the reward averages, `;`-separated.
    pub records: String,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ResultsTable {
    pub rows: Vec<ResultRow>,
}

fn csv_err(e: csv::Error) -> Error {
    Error::Config(format!("csv: {e}"))
}

impl ResultsTable {
    /// Mean reward over the rows of one split, method, and mode.
    pub fn mean(&self, split: SplitRole, method: Method, mode: EvalMode) -> Option<f64> {
        let v: Vec<f64> = self
            .rows
            .iter()
            .filter(|r| r.split == split && r.method == method && r.mode == mode)
            .map(|r| r.reward)
            .collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }

    pub fn get(&self, task: &str, method: Method, mode: EvalMode) -> Option<&ResultRow> {
        self.rows
            .iter()
            .find(|r| r.task == task && r.method == method && r.mode == mode)
    }

    pub fn to_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &self.rows {
            w.serialize(r).map_err(csv_err)?;
        }
        w.into_inner().map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_csv(bytes: &[u8]) -> Result<Self> {
        let rows = csv::Reader::from_reader(bytes)
            .deserialize()
            .collect::<std::result::Result<Vec<ResultRow>, _>>()
            .map_err(csv_err)?;
        Ok(ResultsTable { rows })
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        crate::io::write_atomic(path, &self.to_csv()?)
    }

    /// Plain-text table of per-split means for every method and mode.
    pub fn summary(&self) -> String {
        let modes: Vec<EvalMode> = {
            let mut m: Vec<EvalMode> = self.rows.iter().map(|r| r.mode).collect();
            m.sort();
            m.dedup();
            m
        };
        let mut out = format!("{:<22}", "method");
        for mode in &modes {
            out += &format!(
                " {:>14} {:>14}",
                format!("seen/{}", mode.name()),
                format!("unseen/{}", mode.name())
            );
        }
        out.push('\n');
        for method in Method::ALL {
            out += &format!("{:<22}", method.name());
            for &mode in &modes {
                for split in [SplitRole::Seen, SplitRole::Unseen] {
                    out += &match self.mean(split, method, mode) {
                        Some(v) => format!(" {v:>14.2}"),
                        None => format!(" {:>14}", "-"),
                    };
                }
            }
            out.push('\n');
        }
        out
    }

    /// Checks that every row's checksums name cache records whose mean reward is the row's reward.
    pub fn verify_against(&self, cache: &RewardCache) -> Result<()> {
        let by_sum: BTreeMap<String, RewardRecord> = cache
            .records()
            .into_iter()
            .map(|r| (r.checksum(), r))
            .collect();
        for row in &self.rows {
            let recs: Vec<&RewardRecord> = row
                .records
                .split(';')
                .map(|c| {
                    by_sum.get(c).ok_or_else(|| {
                        Error::Config(format!(
                            "row {}/{} cites unknown record {c}",
                            row.task,
                            row.method.name()
                        ))
                    })
                })
                .collect::<Result<_>>()?;
            let mean = recs.iter().map(|r| r.reward).sum::<f64>() / recs.len() as f64;
            if mean != row.reward {
                return Err(Error::Config(format!(
                    "row {}/{} disagrees with its records",
                    row.task,
                    row.method.name()
                )));
            }
        }
        Ok(())
    }
}

/// Ranks starting at 1; tied values share the mean of their positions.
fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut r = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let mean = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            r[k] = mean;
        }
        i = j + 1;
    }
    r
}

/// Spearman rank correlation (Pearson correlation of tie-averaged ranks).
pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::Shape(format!(
            "spearman over {} and {} values",
            a.len(),
            b.len()
        )));
    }
    let (ra, rb) = (ranks(a), ranks(b));
    let n = a.len() as f64;
    let mean = (n + 1.0) / 2.0;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in ra.iter().zip(&rb) {
        sab += (x - mean) * (y - mean);
        saa += (x - mean) * (x - mean);
        sbb += (y - mean) * (y - mean);
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(Error::InvalidArgument(
            "spearman of a constant sequence".into(),
        ));
    }
    Ok(sab / (saa * sbb).sqrt())
}

/// Actions used by the random baseline: one uniform bitstring per seed, shared by all tasks.
pub fn random_actions(m: usize, seeds: usize, base_seed: u64) -> Result<Vec<SimParams>> {
    (0..seeds)
        .map(|k| {
            baseline_action(
                BaselineKind::Random,
                m,
                seed::derive(base_seed, "random-method", k as u64),
            )
        })
        .collect()
}

/// Evaluates every method on every task of the suite under each mode.
///
/// `predictions` maps task name to the predicted action.
pub fn compare_methods(
    suite: &Suite,
    predictions: &BTreeMap<String, SimParams>,
    oracle: &RewardOracle,
    modes: &[EvalMode],
    m: usize,
    random_seeds: usize,
    base_seed: u64,
) -> Result<ResultsTable> {
    if random_seeds < 1 {
        return Err(Error::InvalidArgument(
            "need at least one random seed".into(),
        ));
    }
    let randoms = random_actions(m, random_seeds, base_seed)?;
    let dr = baseline_action(BaselineKind::DomainRandomization, m, 0)?;
    let tasks: Vec<_> = suite.tasks().collect();
    let keyed = KeyedTask::all(tasks.iter().copied())?;
    // one backbone per distinct action; evaluate all tasks on it at once
    let mut wanted: BTreeMap<(BackboneSource, SimParams), Vec<usize>> = BTreeMap::new();
    for (i, t) in tasks.iter().enumerate() {
        let p = predictions.get(t.name()).ok_or_else(|| {
            Error::InvalidArgument(format!("no prediction for task {}", t.name()))
        })?;
        for a in std::iter::once(p)
            .chain(&randoms)
            .chain(std::iter::once(&dr))
        {
            wanted
                .entry((BackboneSource::Simulated, a.clone()))
                .or_default()
                .push(i);
        }
        wanted
            .entry((BackboneSource::Scratch, SimParams::all_off(m)))
            .or_default()
            .push(i);
        wanted
            .entry((BackboneSource::Reference, SimParams::all_off(m)))
            .or_default()
            .push(i);
    }
    for ((source, action), idx) in &wanted {
        let mut idx = idx.clone();
        idx.sort_unstable();
        idx.dedup();
        let sel: Vec<KeyedTask> = idx.iter().map(|&i| keyed[i].clone()).collect();
        oracle.evaluate(&sel, *source, action, modes)?;
    }
    let rec = |t: &KeyedTask, source: BackboneSource, a: &SimParams, mode: EvalMode| {
        oracle
            .evaluate(std::slice::from_ref(t), source, a, &[mode])
            .map(|mut v| v.pop().expect("one record"))
    };
    let mut rows = Vec::new();
    for (task, kt) in tasks.iter().zip(&keyed) {
        for &mode in modes {
            for method in Method::ALL {
                let (actions, records): (Vec<Option<SimParams>>, Vec<RewardRecord>) = match method {
                    Method::Predicted => {
                        let a = predictions[task.name()].clone();
                        (
                            vec![Some(a.clone())],
                            vec![rec(kt, BackboneSource::Simulated, &a, mode)?],
                        )
                    }
                    Method::Random => {
                        let recs = randoms
                            .iter()
                            .map(|a| rec(kt, BackboneSource::Simulated, a, mode))
                            .collect::<Result<_>>()?;
                        (randoms.iter().cloned().map(Some).collect(), recs)
                    }
                    Method::DomainRandomization => (
                        vec![Some(dr.clone())],
                        vec![rec(kt, BackboneSource::Simulated, &dr, mode)?],
                    ),
                    Method::Scratch => (
                        vec![None],
                        vec![rec(
                            kt,
                            BackboneSource::Scratch,
                            &SimParams::all_off(m),
                            mode,
                        )?],
                    ),
                    Method::Reference => (
                        vec![None],
                        vec![rec(
                            kt,
                            BackboneSource::Reference,
                            &SimParams::all_off(m),
                            mode,
                        )?],
                    ),
                };
                let reward = records.iter().map(|r| r.reward).sum::<f64>() / records.len() as f64;
                rows.push(ResultRow {
                    task: task.name().to_string(),
                    split: task.spec.role,
                    method,
                    mode,
                    actions: actions
                        .iter()
                        .map(|a| a.as_ref().map_or("-".to_string(), |a| a.bitstring()))
                        .collect::<Vec<_>>()
                        .join(";"),
                    reward,
                    records: records
                        .iter()
                        .map(|r| r.checksum())
                        .collect::<Vec<_>>()
                        .join(";"),
                });
            }
        }
    }
    Ok(ResultsTable { rows })
}
