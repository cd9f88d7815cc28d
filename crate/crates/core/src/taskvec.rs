//! Task embeddings from the diagonal of the Fisher information of a shared
//! probe network whose classifier head alone is fitted to each task.

use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkit::checkpoint::{self, NETWORK_MAGIC};
use crate::numkit::{softmax, GradientSet, Layer, Network, Tensor};
use crate::reward::{
    features, pretrain_on, train_classifier, LrSchedule, PretrainConfig, SgdSchedule,
};
use crate::scenegen::{render_dataset, SimParams, DEFAULT_M};
use crate::seed;
use crate::tasks::{subsample_task, TaskData};

pub const EMBEDDING_MAGIC: &[u8; 8] = b"S2T-EMB1";

/// A frozen backbone shared by every task embedding.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbeNetwork {
    pub backbone: Network,
    checksum: String,
}

impl ProbeNetwork {
    pub fn new(backbone: Network) -> Self {
        let checksum = seed::checksum(&checkpoint::encode(&backbone, NETWORK_MAGIC));
        ProbeNetwork { backbone, checksum }
    }

    /// Pre-trains the probe on the all-variations-on dataset over the full class bank.
    pub fn pretrain(cfg: &PretrainConfig) -> Result<Self> {
        let data = render_dataset(&cfg.gen_spec(&SimParams::all_on(DEFAULT_M)))?;
        Ok(Self::new(pretrain_on(&data, cfg)?))
    }

    pub fn checksum(&self) -> &str {
        &self.checksum
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        checkpoint::save(&self.backbone, NETWORK_MAGIC, path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(Self::new(checkpoint::load(path, NETWORK_MAGIC)?))
    }

    /// Seeded dense head sized for `classes`.
    pub fn head_template(&self, classes: usize, seed: u64) -> Result<Network> {
        Network::builder(
            &[self.backbone.output_len()],
            seed::derive(seed, "probe-head", 0),
        )
        .dense(classes)?
        .build()
    }

    fn with_head(&self, head: &Network) -> Result<Network> {
        if head.input_len() != self.backbone.output_len() {
            return Err(Error::Shape(format!(
                "head expects {} inputs, probe emits {}",
                head.input_len(),
                self.backbone.output_len()
            )));
        }
        self.backbone.extended(head.layers().to_vec())
    }
}

/// Settings for embedding a task.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbedConfig {
    pub head: SgdSchedule,
    pub mc_samples: usize,
}

impl Default for EmbedConfig {
    fn default() -> Self {
        EmbedConfig {
            head: SgdSchedule {
                epochs: 30,
                lr: 0.05,
                momentum: 0.9,
                batch_size: 50,
                schedule: LrSchedule::Cosine,
            },
            mc_samples: 1,
        }
    }
}

/// Fits a fresh head on frozen probe features of the task's train split.
pub fn fit_probe_head(
    probe: &ProbeNetwork,
    task: &TaskData,
    sched: &SgdSchedule,
    seed: u64,
) -> Result<Network> {
    if task.train.is_empty() {
        return Err(Error::InvalidArgument(
            "task has no training examples".into(),
        ));
    }
    let mut head = probe.head_template(task.num_classes(), seed)?;
    fit_head(probe, &mut head, task, sched, seed)?;
    Ok(head)
}

/// Trains `head` in place; fails if its class count disagrees with the task.
pub fn fit_head(
    probe: &ProbeNetwork,
    head: &mut Network,
    task: &TaskData,
    sched: &SgdSchedule,
    seed: u64,
) -> Result<()> {
    if head.output_len() != task.num_classes() {
        return Err(Error::Shape(format!(
            "head has {} classes, task has {}",
            head.output_len(),
            task.num_classes()
        )));
    }
    if sched.epochs == 0 {
        return Ok(());
    }
    let feats = features(&probe.backbone, &task.train.images)?;
    train_classifier(
        head,
        &feats,
        &task.train.labels,
        sched,
        seed::derive(seed, "probe-fit", 0),
        0,
    )?;
    Ok(())
}

/// How labels are drawn when estimating the Fisher information.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum FisherLabels {
    /// `mc_samples` labels per example drawn from the model's predictive distribution.
    Sampled { mc_samples: usize, seed: u64 },
    /// The exact expectation over the predictive distribution.
    Exact,
}

const FIM_CHUNK: usize = 16;

/// Per-parameter Fisher diagonal of `net` over `inputs` for the parameters of
/// layers `0..backbone_layers`, flattened in parameter order.
pub fn fisher_diagonal_raw(
    net: &Network,
    backbone_layers: usize,
    inputs: &Tensor,
    labels: FisherLabels,
) -> Result<Vec<f64>> {
    if inputs.rows() == 0 {
        return Err(Error::InvalidArgument("empty task".into()));
    }
    if let FisherLabels::Sampled { mc_samples: 0, .. } = labels {
        return Err(Error::InvalidArgument(
            "mc_samples must be at least 1".into(),
        ));
    }
    let n = inputs.rows();
    let width: usize = net.layers()[..backbone_layers]
        .iter()
        .flat_map(|l| l.params())
        .map(|t| t.len())
        .sum();
    let rows: Vec<usize> = (0..n).collect();
    let parts: Vec<Vec<f64>> = rows
        .par_chunks(FIM_CHUNK)
        .map(|chunk| {
            let mut acc = vec![0.0; width];
            for &i in chunk {
                let trace = net.trace(inputs.row(i))?;
                let p = softmax(trace.output());
                let draws: Vec<(usize, f64)> = match labels {
                    FisherLabels::Exact => p.iter().copied().enumerate().collect(),
                    FisherLabels::Sampled { mc_samples, seed } => {
                        let mut rng = seed::stream(seed, "fisher-label", i as u64);
                        (0..mc_samples)
                            .map(|_| (sample_index(&p, rng.gen()), 1.0 / mc_samples as f64))
                            .collect()
                    }
                };
                for (y, weight) in draws {
                    if weight == 0.0 {
                        continue;
                    }
                    // d(-log p_y)/dz = p - e_y; the sign is irrelevant once squared.
                    let mut dz = p.clone();
                    dz[y] -= 1.0;
                    let mut g = GradientSet::zeros_like(net);
                    net.backward_trace(&trace, &dz, &mut g, 0);
                    let flat = g.layers[..backbone_layers]
                        .iter()
                        .flatten()
                        .flat_map(|t| t.data());
                    for (a, v) in acc.iter_mut().zip(flat) {
                        *a += weight * v * v;
                    }
                }
            }
            Ok(acc)
        })
        .collect::<Result<_>>()?;
    let mut total = vec![0.0; width];
    for part in &parts {
        for (t, v) in total.iter_mut().zip(part) {
            *t += v / n as f64;
        }
    }
    Ok(total)
}

fn sample_index(p: &[f64], u: f64) -> usize {
    let mut c = 0.0;
    for (i, &pi) in p.iter().enumerate() {
        c += pi;
        if u < c {
            return i;
        }
    }
    p.len() - 1
}

/// Averages raw per-parameter entries over each filter (conv output channel or
/// dense output unit), weights and bias together.
pub fn reduce_per_filter(net: &Network, backbone_layers: usize, raw: &[f64]) -> Vec<f64> {
    let mut out = Vec::new();
    let mut at = 0;
    for layer in &net.layers()[..backbone_layers] {
        if let Layer::Dense { weight, bias } | Layer::Conv3x3 { weight, bias, .. } = layer {
            let filters = weight.shape()[0];
            let per = weight.len() / filters;
            let (w, b) = (
                &raw[at..at + weight.len()],
                &raw[at + weight.len()..at + weight.len() + bias.len()],
            );
            for f in 0..filters {
                let s: f64 = w[f * per..(f + 1) * per].iter().sum::<f64>() + b[f];
                out.push(s / (per + 1) as f64);
            }
            at += weight.len() + bias.len();
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingMeta {
    pub task: String,
    pub fraction: f64,
    pub probe_checksum: String,
    pub normalized: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TaskEmbedding {
    pub values: Vec<f64>,
    pub meta: EmbeddingMeta,
}

impl TaskEmbedding {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn normalized(mut self) -> Result<Self> {
        let n = self.norm();
        if !(n > 0.0 && n.is_finite()) {
            return Err(Error::NonFinite(format!(
                "embedding of {} has norm {n}",
                self.meta.task
            )));
        }
        self.values.iter_mut().for_each(|v| *v /= n);
        self.meta.normalized = true;
        Ok(self)
    }

    pub fn cosine(&self, other: &TaskEmbedding) -> f64 {
        cosine(&self.values, &other.values)
    }

    /// Layout: magic, u32 length, f64 values (little-endian), JSON metadata to end of file.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = EMBEDDING_MAGIC.to_vec();
        out.extend_from_slice(&(self.values.len() as u32).to_le_bytes());
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend(serde_json::to_vec(&self.meta)?);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |d: &str| Error::format("embedding", d);
        if bytes.len() < 12 || &bytes[..8] != EMBEDDING_MAGIC {
            return Err(bad("bad magic or truncated header"));
        }
        let n = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let end = 12 + 8 * n;
        if bytes.len() < end {
            return Err(bad("truncated values"));
        }
        let values = bytes[12..end]
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
            .collect();
        Ok(TaskEmbedding {
            values,
            meta: serde_json::from_slice(&bytes[end..])?,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::io::write_atomic(path, &self.to_bytes()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&crate::io::read(path)?)
    }
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

/// Unnormalized, per-filter-reduced Fisher diagonal of the probe backbone with `head` attached.
pub fn fim_diagonal(
    probe: &ProbeNetwork,
    head: &Network,
    task: &TaskData,
    mc_samples: usize,
    seed: u64,
) -> Result<TaskEmbedding> {
    fim_diagonal_with(
        probe,
        head,
        task,
        FisherLabels::Sampled {
            mc_samples,
            seed: seed::derive(seed, "fim", 0),
        },
    )
}

pub fn fim_diagonal_with(
    probe: &ProbeNetwork,
    head: &Network,
    task: &TaskData,
    labels: FisherLabels,
) -> Result<TaskEmbedding> {
    let net = probe.with_head(head)?;
    let depth = probe.backbone.layers().len();
    let raw = fisher_diagonal_raw(&net, depth, &task.train.images, labels)?;
    Ok(TaskEmbedding {
        values: reduce_per_filter(&net, depth, &raw),
        meta: EmbeddingMeta {
            task: task.name().to_string(),
            fraction: 1.0,
            probe_checksum: probe.checksum.clone(),
            normalized: false,
        },
    })
}

/// Seeds of the three random steps of [`embed_task`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmbedSeeds {
    pub subsample: u64,
    pub head: u64,
    pub fim: u64,
}

impl EmbedSeeds {
    pub fn from_seed(seed: u64) -> Self {
        EmbedSeeds {
            subsample: seed::derive(seed, "embed-subsample", 0),
            head: seed::derive(seed, "embed-head", 0),
            fim: seed::derive(seed, "embed-fim", 0),
        }
    }
}

/// Stretches `sched` so training on `sub` examples takes as many SGD steps as `full` would.
fn same_steps(sched: &SgdSchedule, full: usize, sub: usize) -> SgdSchedule {
    let b = sched.batch_size.max(1);
    let steps = sched.epochs * full.div_ceil(b);
    SgdSchedule {
        epochs: steps.div_ceil(sub.div_ceil(b).max(1)),
        ..sched.clone()
    }
}

/// Subsample, fit the head on as many SGD steps as the full split would take,
/// take the Fisher diagonal, normalize to unit length.
pub fn embed_task(
    probe: &ProbeNetwork,
    task: &TaskData,
    fraction: f64,
    cfg: &EmbedConfig,
    seeds: EmbedSeeds,
) -> Result<TaskEmbedding> {
    let sub = subsample_task(task, fraction, seeds.subsample)?;
    let head = fit_probe_head(
        probe,
        &sub,
        &same_steps(&cfg.head, task.train.len(), sub.train.len()),
        seeds.head,
    )?;
    let mut e = fim_diagonal(probe, &head, &sub, cfg.mc_samples, seeds.fim)?.normalized()?;
    e.meta.fraction = fraction;
    Ok(e)
}
