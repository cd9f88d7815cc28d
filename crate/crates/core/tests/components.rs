mod common;

use std::collections::HashSet;

use adaptsim::numkit::{Layer, Network, Tensor};
use adaptsim::reward::{knn5, BackboneSource, EvalMode, KeyedTask, RewardCache, RewardOracle};
use adaptsim::scenegen::SimParams;
use adaptsim::tasks::{build_suite_with, SuiteConfig};
use adaptsim::taskvec::{embed_task, fisher_diagonal_raw, EmbedSeeds, FisherLabels, ProbeNetwork};

fn rows(v: &[&[f64]]) -> Tensor {
    Tensor::stack(
        &[v[0].len()],
        &v.iter().map(|r| r.to_vec()).collect::<Vec<_>>(),
    )
    .unwrap()
}

#[test]
fn knn5_hand_fixture() {
    // seven train points on a line, labels 0 0 1 1 1 2 2
    let train = rows(&[&[0.0], &[1.0], &[2.0], &[3.0], &[4.0], &[10.0], &[11.0]]);
    let labels = [0, 0, 1, 1, 1, 2, 2];
    // query 2.0: neighbours 2,1,3,0,4 vote 1 x3, 0 x2 -> 1
    // query 10.5: neighbours 10,11,4,3,2 vote 2 x2, 1 x3 -> 1
    // query -1: neighbours 0,1,2,3,4 vote 0 x2, 1 x3 -> 1
    let test = rows(&[&[2.0], &[10.5], &[-1.0]]);
    assert_eq!(knn5(&train, &labels, &test, &[1, 1, 1]).unwrap(), 100.0);
    assert!((knn5(&train, &labels, &test, &[1, 2, 0]).unwrap() - 100.0 / 3.0).abs() < 1e-12);

    // a 2-2-1 vote: labels 0 and 1 tie, the nearest of them (label 1 at distance 0.1) wins
    let train = rows(&[&[0.1], &[0.3], &[-0.5], &[0.6], &[-0.9]]);
    let tied = [1, 0, 1, 0, 2];
    let q = rows(&[&[0.0]]);
    assert_eq!(knn5(&train, &tied, &q, &[1]).unwrap(), 100.0);

    // equal distances fall back to train order: the point at index 0 counts as nearer
    let train = rows(&[&[1.0], &[-1.0], &[5.0], &[-5.0], &[9.0]]);
    assert_eq!(knn5(&train, &[3, 4, 0, 1, 2], &q, &[3]).unwrap(), 100.0);
    assert!(knn5(&train.select_rows(&[0, 1, 2, 3]), &[0, 0, 0, 0], &q, &[0]).is_err());
}

#[test]
fn sampled_fisher_converges_to_the_exact_expectation() {
    let layer = Layer::Dense {
        weight: Tensor::from_vec(&[3, 2], vec![0.4, -0.8, 0.1, 0.5, -0.3, 0.2]).unwrap(),
        bias: Tensor::from_vec(&[3], vec![0.05, -0.1, 0.0]).unwrap(),
    };
    let net = Network::new(vec![2], vec![layer], 0).unwrap();
    let inputs = rows(&[&[1.0, 0.5], &[-0.7, 1.2], &[0.3, -1.5], &[2.0, 0.1]]);
    let exact = fisher_diagonal_raw(&net, 1, &inputs, FisherLabels::Exact).unwrap();
    let sampled = |n: usize| {
        fisher_diagonal_raw(
            &net,
            1,
            &inputs,
            FisherLabels::Sampled {
                mc_samples: n,
                seed: 3,
            },
        )
        .unwrap()
    };
    let err = |est: &[f64]| {
        let num: f64 = est.iter().zip(&exact).map(|(a, b)| (a - b).powi(2)).sum();
        (num / exact.iter().map(|b| b * b).sum::<f64>()).sqrt()
    };
    let (coarse, fine) = (err(&sampled(4)), err(&sampled(4000)));
    assert!(fine < 0.05, "relative error with 4000 samples: {fine}");
    assert!(fine < coarse);
    assert_eq!(sampled(64), sampled(64));
}

#[test]
fn task_embedding_is_deterministic_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = common::tiny_config(dir.path());
    let suite = build_suite_with(&cfg.suite).unwrap();
    let probe = ProbeNetwork::pretrain(&cfg.probe).unwrap();
    let task = suite.tasks().next().unwrap();
    let embed = |seed| {
        embed_task(
            &probe,
            task,
            1.0,
            &cfg.embed.settings,
            EmbedSeeds::from_seed(seed),
        )
        .unwrap()
    };
    let a = embed(1);
    assert_eq!(a.to_bytes().unwrap(), embed(1).to_bytes().unwrap());
    assert!((a.norm() - 1.0).abs() < 1e-12);
    assert_ne!(a.values, embed(2).values);
    let half = embed_task(
        &probe,
        task,
        0.5,
        &cfg.embed.settings,
        EmbedSeeds::from_seed(1),
    )
    .unwrap();
    assert_eq!(half.meta.fraction, 0.5);
    assert_eq!(half.len(), a.len());
}

#[test]
fn reward_cache_is_transparent() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = common::tiny_config(dir.path());
    let suite = build_suite_with(&cfg.suite).unwrap();
    let tasks = KeyedTask::all(suite.tasks()).unwrap();
    let action = SimParams::new(vec![true, false, true]).unwrap();
    let modes = [EvalMode::Knn5, EvalMode::Linear];

    let uncached = RewardOracle::new(
        cfg.pretrain.clone(),
        cfg.eval.clone(),
        RewardCache::in_memory(),
    )
    .unwrap();
    let fresh = uncached
        .evaluate(&tasks, BackboneSource::Simulated, &action, &modes)
        .unwrap();

    let cache_dir = dir.path().join("cache");
    let disk = RewardOracle::open(cfg.pretrain.clone(), cfg.eval.clone(), &cache_dir).unwrap();
    let first = disk
        .evaluate(&tasks, BackboneSource::Simulated, &action, &modes)
        .unwrap();
    let misses = disk.cache.misses();
    let again = disk
        .evaluate(&tasks, BackboneSource::Simulated, &action, &modes)
        .unwrap();
    assert_eq!(disk.cache.misses(), misses);
    assert_eq!(first, again);

    let reopened = RewardOracle::open(cfg.pretrain.clone(), cfg.eval.clone(), &cache_dir).unwrap();
    assert_eq!(reopened.cache.len(), first.len());
    let replayed = reopened
        .evaluate(&tasks, BackboneSource::Simulated, &action, &modes)
        .unwrap();
    assert_eq!(replayed, first);
    assert_eq!(reopened.cache.misses(), 0);

    for (a, b) in fresh.iter().zip(&first) {
        assert_eq!(a.reward, b.reward);
        assert_eq!(a.checksum(), b.checksum());
    }
}

#[test]
fn seen_and_unseen_tasks_share_no_image() {
    let suite = build_suite_with(&SuiteConfig::new(0)).unwrap();
    let row = |t: &adaptsim::tasks::TaskData| t.train.image_shape().iter().product::<usize>();
    let bytes = |x: &[f64]| {
        x.iter()
            .flat_map(|v| (*v as f32).to_le_bytes())
            .collect::<Vec<u8>>()
    };
    let mut seen = HashSet::new();
    for t in &suite.seen {
        let n = row(t);
        for set in [&t.train, &t.test] {
            seen.extend(set.images.data().chunks(n).map(bytes));
        }
    }
    for t in &suite.unseen {
        let n = row(t);
        for set in [&t.train, &t.test] {
            assert!(
                set.images
                    .data()
                    .chunks(n)
                    .all(|img| !seen.contains(&bytes(img))),
                "{}",
                t.name()
            );
        }
    }
}
