//! Backbone architecture, SGD training loop, and pre-training on generated data.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkit::{Network, Sgd, Tensor};
use crate::scenegen::{render_dataset, GenSpec, LabeledImageSet, SimParams};
use crate::seed;

/// Conv-block widths, written as a tag such as `c16-32-64`.
///
/// Each block is conv3x3, ReLU, then 2x2 average pooling; the last block ends
/// in global average pooling, whose output is the feature vector.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Arch {
    pub widths: Vec<usize>,
}

impl Arch {
    pub fn feature_len(&self) -> usize {
        *self.widths.last().expect("parsed arch has widths")
    }

    /// Randomly initialised backbone for `image_size` RGB inputs, without a head.
    pub fn build(&self, image_size: usize, seed: u64) -> Result<Network> {
        let mut b = Network::builder(&[3, image_size, image_size], seed);
        for (i, &w) in self.widths.iter().enumerate() {
            b = b.conv(w, 1)?.relu()?;
            b = if i + 1 == self.widths.len() {
                b.global_avg_pool()?
            } else {
                b.avg_pool()?
            };
        }
        b.features_here().build()
    }
}

impl fmt::Display for Arch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let w: Vec<String> = self.widths.iter().map(|w| w.to_string()).collect();
        write!(f, "c{}", w.join("-"))
    }
}

impl FromStr for Arch {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidArgument(format!("arch tag `{s}` is not of the form c16-32-64"));
        let widths = s
            .strip_prefix('c')
            .ok_or_else(bad)?
            .split('-')
            .map(|w| w.parse::<usize>().ok().filter(|&w| w > 0).ok_or_else(bad))
            .collect::<Result<Vec<_>>>()?;
        if widths.is_empty() {
            return Err(bad());
        }
        Ok(Arch { widths })
    }
}

impl Serialize for Arch {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Arch {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        String::deserialize(d)?
            .parse()
            .map_err(serde::de::Error::custom)
    }
}

/// Indices of the layers that close each conv block: the stage outputs used for CKA.
pub fn stage_layers(net: &Network) -> Vec<usize> {
    use crate::numkit::Layer;
    net.layers()
        .iter()
        .enumerate()
        .filter(|(_, l)| matches!(l, Layer::AvgPool2 | Layer::GlobalAvgPool))
        .map(|(i, _)| i)
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LrSchedule {
    Constant,
    /// Half-cosine decay from `lr` to zero over all steps.
    Cosine,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SgdSchedule {
    pub epochs: usize,
    pub lr: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub schedule: LrSchedule,
}

impl SgdSchedule {
    fn lr_at(&self, step: usize, total: usize) -> f64 {
        match self.schedule {
            LrSchedule::Constant => self.lr,
            LrSchedule::Cosine => {
                0.5 * self.lr
                    * (1.0 + (std::f64::consts::PI * step as f64 / total.max(1) as f64).cos())
            }
        }
    }
}

/// Minibatch SGD on mean cross-entropy. Layers below `first_trainable` stay frozen.
/// Returns the mean training loss of the last epoch (0 when `epochs` is 0).
pub fn train_classifier(
    net: &mut Network,
    inputs: &Tensor,
    labels: &[usize],
    sched: &SgdSchedule,
    seed: u64,
    first_trainable: usize,
) -> Result<f64> {
    if inputs.rows() != labels.len() || labels.is_empty() {
        return Err(Error::Shape(format!(
            "{} inputs for {} labels",
            inputs.rows(),
            labels.len()
        )));
    }
    if sched.batch_size == 0 {
        return Err(Error::InvalidArgument("batch_size must be positive".into()));
    }
    let mut opt = Sgd::new(sched.lr.max(f64::MIN_POSITIVE), sched.momentum)?;
    let n = labels.len();
    let per_epoch = n.div_ceil(sched.batch_size);
    let total = per_epoch * sched.epochs;
    let mut order: Vec<usize> = (0..n).collect();
    let mut last = 0.0;
    for epoch in 0..sched.epochs {
        order.shuffle(&mut seed::stream(seed, "shuffle", epoch as u64));
        let mut epoch_loss = 0.0;
        for (b, idx) in order.chunks(sched.batch_size).enumerate() {
            let x = inputs.select_rows(idx);
            let y: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
            let (loss, grads) = net.loss_and_grad_from(&x, &y, first_trainable)?;
            opt.set_lr(sched.lr_at(epoch * per_epoch + b, total));
            opt.step(net, &grads);
            epoch_loss += loss * idx.len() as f64;
        }
        last = epoch_loss / n as f64;
    }
    Ok(last)
}

/// Pre-training budget and schedule.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PretrainConfig {
    pub num_classes: usize,
    pub images_per_class: usize,
    pub image_size: usize,
    pub arch: Arch,
    pub schedule: SgdSchedule,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            num_classes: 12,
            images_per_class: 48,
            image_size: 16,
            arch: Arch {
                widths: vec![16, 32, 64],
            },
            schedule: SgdSchedule {
                epochs: 8,
                lr: 0.05,
                momentum: 0.9,
                batch_size: 24,
                schedule: LrSchedule::Cosine,
            },
            seed: 0,
        }
    }
}

impl PretrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.schedule.epochs < 1 {
            return Err(Error::InvalidArgument(
                "pre-training needs at least one epoch".into(),
            ));
        }
        Ok(())
    }

    pub fn gen_spec(&self, params: &SimParams) -> GenSpec {
        GenSpec {
            num_classes: self.num_classes,
            images_per_class: self.images_per_class,
            image_size: self.image_size,
            seed: self.seed,
            params: params.clone(),
        }
    }
}

/// Trains backbone plus a classifier head on `data`; the head stays attached.
pub fn pretrain_classifier(data: &LabeledImageSet, cfg: &PretrainConfig) -> Result<Network> {
    cfg.validate()?;
    let backbone = cfg
        .arch
        .build(cfg.image_size, seed::derive(cfg.seed, "backbone-init", 0))?;
    let head = Network::builder(
        &[cfg.arch.feature_len()],
        seed::derive(cfg.seed, "head-init", 0),
    )
    .dense(data.num_classes())?
    .build()?;
    let mut net = backbone.extended(head.layers().to_vec())?;
    train_classifier(
        &mut net,
        &data.images,
        &data.labels,
        &cfg.schedule,
        seed::derive(cfg.seed, "pretrain", 0),
        0,
    )?;
    Ok(net)
}

/// Pre-trains on `data` and discards the head.
pub fn pretrain_on(data: &LabeledImageSet, cfg: &PretrainConfig) -> Result<Network> {
    let net = pretrain_classifier(data, cfg)?;
    net.truncated(net.feature_index())
}

/// Renders the dataset for `params` and pre-trains on it.
pub fn pretrain_backbone(params: &SimParams, cfg: &PretrainConfig) -> Result<Network> {
    let data = render_dataset(&cfg.gen_spec(params))?;
    pretrain_on(&data, cfg)
}

/// Classification accuracy in percent.
pub fn accuracy(pred: &[usize], labels: &[usize]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    let hits = pred.iter().zip(labels).filter(|(p, l)| p == l).count();
    100.0 * hits as f64 / labels.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn arch_tag_round_trips() {
        let a: Arch = "c8-16-32".parse().unwrap();
        assert_eq!(a.widths, vec![8, 16, 32]);
        assert_eq!(a.to_string(), "c8-16-32");
        assert!("x8-16".parse::<Arch>().is_err());
        assert!("c8--16".parse::<Arch>().is_err());
        let net = a.build(16, 1).unwrap();
        assert_eq!(net.feature_len(), 32);
        assert_eq!(stage_layers(&net).len(), 3);
    }

    #[test]
    fn cosine_schedule_ends_at_zero() {
        let s = SgdSchedule {
            epochs: 1,
            lr: 0.2,
            momentum: 0.0,
            batch_size: 1,
            schedule: LrSchedule::Cosine,
        };
        assert_eq!(s.lr_at(0, 10), 0.2);
        assert!(s.lr_at(10, 10).abs() < 1e-15);
    }

    #[test]
    fn all_zero_flags_are_memorised() {
        let cfg = PretrainConfig {
            num_classes: 4,
            images_per_class: 4,
            arch: "c8-16".parse().unwrap(),
            schedule: SgdSchedule {
                epochs: 60,
                lr: 0.2,
                momentum: 0.0,
                batch_size: 8,
                schedule: LrSchedule::Constant,
            },
            ..PretrainConfig::default()
        };
        let data = render_dataset(&cfg.gen_spec(&SimParams::all_off(8))).unwrap();
        let net = pretrain_classifier(&data, &cfg).unwrap();
        assert_eq!(
            accuracy(&net.predict(&data.images).unwrap(), &data.labels),
            100.0
        );
        let backbone = pretrain_on(&data, &cfg).unwrap();
        assert_eq!(backbone.output_len(), 16);
        let again = pretrain_on(&data, &cfg).unwrap();
        use crate::numkit::checkpoint::{encode, NETWORK_MAGIC};
        assert_eq!(
            encode(&backbone, NETWORK_MAGIC),
            encode(&again, NETWORK_MAGIC)
        );
    }
}
