//! Downstream evaluation of a backbone: 5-NN, linear probe, and full finetuning.

use serde::{Deserialize, Serialize};

use super::pretrain::{accuracy, train_classifier, LrSchedule, SgdSchedule};
use crate::error::{Error, Result};
use crate::numkit::{argmax, Network, Tensor};
use crate::seed;
use crate::tasks::TaskData;

pub const KNN_K: usize = 5;

/// Schedules for the two trained evaluation modes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub linear: SgdSchedule,
    pub finetune: SgdSchedule,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            linear: SgdSchedule {
                epochs: 40,
                lr: 0.05,
                momentum: 0.9,
                batch_size: 50,
                schedule: LrSchedule::Cosine,
            },
            finetune: SgdSchedule {
                epochs: 8,
                lr: 0.02,
                momentum: 0.9,
                batch_size: 25,
                schedule: LrSchedule::Cosine,
            },
            seed: 0,
        }
    }
}

/// Percent of test rows whose 5 nearest train rows (squared Euclidean) vote for their label.
///
/// Neighbors at equal distance are ordered by train index. A tied vote goes
/// to whichever tied label appears first among the neighbors, i.e. the label
/// of the nearest neighbor carrying one of the tied labels.
pub fn knn5(
    train: &Tensor,
    train_labels: &[usize],
    test: &Tensor,
    test_labels: &[usize],
) -> Result<f64> {
    if train.rows() < KNN_K {
        return Err(Error::InvalidArgument(format!(
            "5-NN needs at least 5 train points, got {}",
            train.rows()
        )));
    }
    check_rows(train, train_labels)?;
    check_rows(test, test_labels)?;
    if train.row_len() != test.row_len() {
        return Err(Error::Shape("train and test feature widths differ".into()));
    }
    let pred: Vec<usize> = (0..test.rows())
        .map(|i| knn_predict(train, train_labels, test.row(i)))
        .collect();
    Ok(accuracy(&pred, test_labels))
}

fn check_rows(x: &Tensor, labels: &[usize]) -> Result<()> {
    if x.rows() != labels.len() {
        return Err(Error::Shape(format!(
            "{} rows for {} labels",
            x.rows(),
            labels.len()
        )));
    }
    Ok(())
}

fn knn_predict(train: &Tensor, labels: &[usize], q: &[f64]) -> usize {
    let mut d: Vec<(f64, usize)> = (0..train.rows())
        .map(|j| {
            let dist = train
                .row(j)
                .iter()
                .zip(q)
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            (dist, j)
        })
        .collect();
    d.select_nth_unstable_by(KNN_K - 1, |a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut nearest = d[..KNN_K].to_vec();
    nearest.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let votes = |l: usize| nearest.iter().filter(|&&(_, j)| labels[j] == l).count();
    let best = nearest
        .iter()
        .map(|&(_, j)| votes(labels[j]))
        .max()
        .unwrap_or(0);
    nearest
        .iter()
        .map(|&(_, j)| labels[j])
        .find(|&l| votes(l) == best)
        .expect("k >= 1")
}

/// Train-set mean and standard deviation per column; constant columns get unit scale.
fn standardizer(x: &Tensor) -> (Vec<f64>, Vec<f64>) {
    let (n, d) = (x.rows() as f64, x.row_len());
    let mut mean = vec![0.0; d];
    for i in 0..x.rows() {
        for (m, v) in mean.iter_mut().zip(x.row(i)) {
            *m += v / n;
        }
    }
    let mut sd = vec![0.0; d];
    for i in 0..x.rows() {
        for ((s, v), m) in sd.iter_mut().zip(x.row(i)).zip(&mean) {
            *s += (v - m) * (v - m) / n;
        }
    }
    let sd = sd
        .into_iter()
        .map(|v| if v.sqrt() > 1e-12 { v.sqrt() } else { 1.0 })
        .collect();
    (mean, sd)
}

fn standardize(x: &Tensor, mean: &[f64], sd: &[f64]) -> Tensor {
    let d = x.row_len();
    let data = x
        .data()
        .iter()
        .enumerate()
        .map(|(k, v)| (v - mean[k % d]) / sd[k % d])
        .collect();
    Tensor::from_vec(&[x.rows(), d], data).expect("same shape")
}

/// Percent accuracy of a zero-initialised dense head trained on standardized features.
pub fn linear_probe(
    train: &Tensor,
    train_labels: &[usize],
    test: &Tensor,
    test_labels: &[usize],
    num_classes: usize,
    sched: &SgdSchedule,
    seed: u64,
) -> Result<f64> {
    check_rows(train, train_labels)?;
    check_rows(test, test_labels)?;
    let (mean, sd) = standardizer(train);
    let (xtr, xte) = (
        standardize(train, &mean, &sd),
        standardize(test, &mean, &sd),
    );
    let mut head = Network::builder(&[train.row_len()], seed)
        .dense_zero(num_classes)?
        .build()?;
    if sched.epochs > 0 {
        train_classifier(&mut head, &xtr, train_labels, sched, seed, 0)?;
    }
    let (_, logits) = head.forward(&xte)?;
    let pred: Vec<usize> = (0..logits.rows()).map(|i| argmax(logits.row(i))).collect();
    Ok(accuracy(&pred, test_labels))
}

/// Backbone features of every image, one row each.
pub fn features(backbone: &Network, images: &Tensor) -> Result<Tensor> {
    backbone.forward(images).map(|(f, _)| f)
}

/// Backbone features for both splits of a task.
pub struct TaskFeatures {
    pub train: Tensor,
    pub test: Tensor,
}

impl TaskFeatures {
    pub fn extract(backbone: &Network, task: &TaskData) -> Result<Self> {
        Ok(TaskFeatures {
            train: features(backbone, &task.train.images)?,
            test: features(backbone, &task.test.images)?,
        })
    }
}

pub fn eval_knn5(backbone: &Network, task: &TaskData) -> Result<f64> {
    let f = TaskFeatures::extract(backbone, task)?;
    knn5(&f.train, &task.train.labels, &f.test, &task.test.labels)
}

pub fn eval_linear(
    backbone: &Network,
    task: &TaskData,
    sched: &SgdSchedule,
    seed: u64,
) -> Result<f64> {
    let f = TaskFeatures::extract(backbone, task)?;
    linear_probe(
        &f.train,
        &task.train.labels,
        &f.test,
        &task.test.labels,
        task.num_classes(),
        sched,
        seed,
    )
}

/// Trains the backbone and a fresh seeded head on the task, all layers free.
pub fn eval_finetune(
    backbone: &Network,
    task: &TaskData,
    sched: &SgdSchedule,
    seed: u64,
) -> Result<f64> {
    let head = Network::builder(
        &[backbone.output_len()],
        seed::derive(seed, "finetune-head", 0),
    )
    .dense(task.num_classes())?
    .build()?;
    let mut net = backbone.extended(head.layers().to_vec())?;
    train_classifier(
        &mut net,
        &task.train.images,
        &task.train.labels,
        sched,
        seed::derive(seed, "finetune", 0),
        0,
    )?;
    Ok(accuracy(
        &net.predict(&task.test.images)?,
        &task.test.labels,
    ))
}
