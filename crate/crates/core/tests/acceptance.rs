//! Acceptance suite. Runs as a plain binary and prints one line per criterion.
//!
//! ```bash
//! cargo test --release --test acceptance            # every criterion
//! cargo test --release --test acceptance -- 1 2 7   # a subset
//! ```
//!
//! The end-to-end criteria share a reward cache under the cargo target
//! directory, so only the first run pays for the 256-action sweep.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::Rng;

use adaptsim::analysis::{linear_cka, spearman, Method, ResultsTable};
use adaptsim::experiment::{
    load_predictions, load_results, run_experiment, run_robustness, ExperimentConfig,
};
use adaptsim::numkit::checkpoint::{self, NETWORK_MAGIC};
use adaptsim::numkit::{finite_diff_check, Layer, Network, Tensor};
use adaptsim::policy::{
    expected_reward, log_prob, log_prob_grad, policy_forward, predict, reinforce_update,
    sample_action, train_policy, PolicyModel, TableReward, TrainerConfig,
};
use adaptsim::reward::{best_code, brute_force_best, EvalMode, KeyedTask, RewardCache};
use adaptsim::scenegen::{render_dataset, GenSpec, LabeledImageSet, SimParams};
use adaptsim::seed::stream;
use adaptsim::tasks::{load_suite, save_suite, Family, SplitRole, Suite};
use adaptsim::taskvec::{EmbeddingMeta, TaskEmbedding};

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn fail<E: std::fmt::Display>(e: E) -> String {
    format!("error: {e}")
}

fn root() -> PathBuf {
    Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance")
}

fn fresh_dir(p: &Path) -> PathBuf {
    let _ = std::fs::remove_dir_all(p);
    std::fs::create_dir_all(p).expect("create scratch dir");
    p.to_path_buf()
}

fn quiet(_: &str) {}

fn random_tensor(rng: &mut impl Rng, shape: &[usize], scale: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::from_vec(
        shape,
        (0..n).map(|_| rng.gen_range(-scale..scale)).collect(),
    )
    .unwrap()
}

fn randomize(net: &mut Network, rng: &mut impl Rng, scale: f64) {
    for t in net.params_mut() {
        for v in t.data_mut() {
            *v += rng.gen_range(-scale..scale);
        }
    }
}

// ---------------------------------------------------------------- criterion 1

fn criterion_1() -> Outcome {
    let mut worst_net: f64 = 0.0;
    for s in 0..10u64 {
        let mut rng = stream(s, "c1-backbone", 0);
        let net = Network::builder(&[3, 8, 8], s)
            .conv(4, 1)
            .and_then(|b| b.relu())
            .and_then(|b| b.avg_pool())
            .and_then(|b| b.conv(6, 2))
            .and_then(|b| b.relu())
            .and_then(|b| b.global_avg_pool())
            .map(|b| b.features_here())
            .and_then(|b| b.dense(3))
            .and_then(|b| b.build())
            .map_err(fail)?;
        let batch = random_tensor(&mut rng, &[4, 3, 8, 8], 1.0);
        let labels: Vec<usize> = (0..4).map(|_| rng.gen_range(0..3)).collect();
        worst_net = worst_net.max(finite_diff_check(&net, &batch, &labels, 1e-6).map_err(fail)?);
    }
    let mut worst_pol: f64 = 0.0;
    for s in 0..10u64 {
        let mut rng = stream(s, "c1-policy", 0);
        let mut model = PolicyModel::new(12, &[16, 16], 4, s).map_err(fail)?;
        randomize(&mut model.net, &mut rng, 0.5);
        let x: Vec<f64> = (0..12).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let a = SimParams::new((0..4).map(|_| rng.gen_bool(0.5)).collect()).map_err(fail)?;
        let analytic = log_prob_grad(&model, &x, &a).map_err(fail)?.flatten();
        let eps = 1e-6;
        let mut k = 0;
        let counts: Vec<usize> = model.net.params().iter().map(|t| t.len()).collect();
        for (p, &count) in counts.iter().enumerate() {
            for j in 0..count {
                let orig = model.net.params()[p].data()[j];
                model.net.params_mut()[p].data_mut()[j] = orig + eps;
                let up = log_prob(&model, &x, &a).map_err(fail)?;
                model.net.params_mut()[p].data_mut()[j] = orig - eps;
                let down = log_prob(&model, &x, &a).map_err(fail)?;
                model.net.params_mut()[p].data_mut()[j] = orig;
                let numeric = (up - down) / (2.0 * eps);
                let denom = analytic[k].abs().max(numeric.abs()).max(1e-3);
                worst_pol = worst_pol.max((analytic[k] - numeric).abs() / denom);
                k += 1;
            }
        }
    }
    check(
        worst_net <= 1e-4 && worst_pol <= 1e-5,
        format!("backbone max rel err {worst_net:.2e} (<= 1e-4), policy {worst_pol:.2e} (<= 1e-5)"),
    )
}

// ---------------------------------------------------------------- criterion 2

fn criterion_2() -> Outcome {
    let mut unchanged = true;
    let mut flags_rise = true;
    let mut joint_rises = true;
    for s in 0..10u64 {
        let mut rng = stream(s, "c2", 0);
        let x: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();

        // a = nu: the baseline cancels and nothing moves
        let mut model = PolicyModel::new(6, &[8, 8], 5, s).map_err(fail)?;
        randomize(&mut model.net, &mut rng, 0.5);
        let nu = predict(&model, &x).map_err(fail)?;
        let before = checkpoint::encode(&model.net, NETWORK_MAGIC);
        reinforce_update(&mut model, &x, &nu, 55.0, 55.0, 0.1).map_err(fail)?;
        unchanged &= checkpoint::encode(&model.net, NETWORK_MAGIC) == before;

        // on an arbitrary model the summed log-probability of a must rise
        let pi = policy_forward(&model, &x).map_err(fail)?;
        let a = sample_action(&pi, 0.5, s).map_err(fail)?;
        let lp = log_prob(&model, &x, &a).map_err(fail)?;
        reinforce_update(&mut model, &x, &a, 70.0, 50.0, 1e-3).map_err(fail)?;
        joint_rises &= log_prob(&model, &x, &a).map_err(fail)? > lp;

        // per flag: a freshly initialised policy, where the heads do not yet
        // feed gradient back into the shared trunk, and a single-head policy
        let mut fresh = PolicyModel::new(6, &[8, 8], 5, s).map_err(fail)?;
        let mut single = PolicyModel::new(6, &[8, 8], 1, s).map_err(fail)?;
        randomize(&mut single.net, &mut rng, 0.5);
        for model in [&mut fresh, &mut single] {
            let pi = policy_forward(model, &x).map_err(fail)?;
            let a = sample_action(&pi, 0.5, s + 100).map_err(fail)?;
            reinforce_update(model, &x, &a, 70.0, 50.0, 1e-3).map_err(fail)?;
            let after = policy_forward(model, &x).map_err(fail)?;
            for (i, &on) in a.flags().iter().enumerate() {
                let j = usize::from(on);
                flags_rise &= after[i][j] > pi[i][j];
            }
        }
    }
    // worked example: one head, pi = (0.6, 0.4), a = on, gap 20
    let head = Layer::Dense {
        weight: Tensor::zeros(&[2, 1]),
        bias: Tensor::from_vec(&[2], vec![0.6f64.ln(), 0.4f64.ln()]).map_err(fail)?,
    };
    let mut model = PolicyModel::from_network(Network::new(vec![1], vec![head], 0).map_err(fail)?)
        .map_err(fail)?;
    let x = [1.0];
    let bias_of = |m: &PolicyModel| m.net.params()[1].data().to_vec();
    let b0 = bias_of(&model);
    reinforce_update(&mut model, &x, &SimParams::all_on(1), 70.0, 50.0, 1.0).map_err(fail)?;
    let b1 = bias_of(&model);
    let step = [b1[0] - b0[0], b1[1] - b0[1]];
    let worked = (step[0] + 12.0).abs() <= 1e-12 && (step[1] - 12.0).abs() <= 1e-12;
    check(
        unchanged && flags_rise && joint_rises && worked,
        format!(
            "a=nu bitwise unchanged: {unchanged}; chosen flags all rise: {flags_rise}; joint log-prob rises: {joint_rises}; worked step ({:.15}, {:.15})",
            step[0], step[1]
        ),
    )
}

// ---------------------------------------------------------------- criterion 3

fn criterion_3() -> Outcome {
    let (mut hits, mut pairs, mut rose) = (0, 0, 0);
    for s in 0..20u64 {
        let mut rng = stream(s, "c3-tables", 0);
        let tables: Vec<Vec<f64>> = (0..4)
            .map(|_| (0..8).map(|_| rng.gen_range(0.0..100.0)).collect())
            .collect();
        let x: Vec<Vec<f64>> = (0..4)
            .map(|_| {
                let v: Vec<f64> = (0..16).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let n = v.iter().map(|a| a * a).sum::<f64>().sqrt();
                v.iter().map(|a| a / n).collect()
            })
            .collect();
        let cfg = TrainerConfig {
            epochs: 500,
            batch_tasks: 4,
            self_imitation_steps: 5,
            eps0: 0.5,
            eps_floor: 0.0,
            seed: s,
            ..TrainerConfig::default()
        };
        let src = TableReward::new(3, tables.clone()).map_err(fail)?;
        let start = PolicyModel::new(16, &cfg.hidden, 3, cfg.seed).map_err(fail)?;
        let out = train_policy(&x, 3, &src, &cfg).map_err(fail)?;
        let (mut e0, mut e1) = (0.0, 0.0);
        for i in 0..4 {
            pairs += 1;
            if predict(&out.model, &x[i]).map_err(fail)?.encode() as usize == best_code(&tables[i])
            {
                hits += 1;
            }
            e0 += expected_reward(&start, &x[i], &tables[i]).map_err(fail)?;
            e1 += expected_reward(&out.model, &x[i], &tables[i]).map_err(fail)?;
        }
        if e1 > e0 {
            rose += 1;
        }
    }
    check(
        hits * 10 >= pairs * 9 && rose >= 19,
        format!("predict = brute force in {hits}/{pairs} pairs (>= 90%); expected reward rose in {rose}/20 seeds (>= 19)"),
    )
}

// ---------------------------------------------------------------- criterion 7

fn criterion_7() -> Outcome {
    let mut rng = stream(7, "c7", 0);
    let x = random_tensor(&mut rng, &[30, 5], 1.0);
    let self_sim = linear_cka(&x, &x).map_err(fail)?;
    let scaled =
        Tensor::from_vec(&[30, 5], x.data().iter().map(|v| -3.7 * v).collect()).map_err(fail)?;
    let scale_inv = linear_cka(&x, &scaled).map_err(fail)?;
    // random orthogonal Q by Gram-Schmidt on a random 5x5 matrix
    let mut q: Vec<Vec<f64>> = (0..5)
        .map(|_| (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect();
    for i in 0..5 {
        for j in 0..i {
            let d: f64 = (0..5).map(|k| q[i][k] * q[j][k]).sum();
            for k in 0..5 {
                q[i][k] -= d * q[j][k];
            }
        }
        let n = q[i].iter().map(|v| v * v).sum::<f64>().sqrt();
        q[i].iter_mut().for_each(|v| *v /= n);
    }
    let mut xq = vec![0.0; 150];
    for r in 0..30 {
        for c in 0..5 {
            xq[r * 5 + c] = (0..5).map(|k| x.data()[r * 5 + k] * q[k][c]).sum();
        }
    }
    let orth_inv = linear_cka(&x, &Tensor::from_vec(&[30, 5], xq).map_err(fail)?).map_err(fail)?;
    // centred columns give ||Yc'Xc||^2 = 5, ||Xc'Xc||^2 = 8, ||Yc'Yc||^2 = 337/16
    let hx =
        Tensor::from_vec(&[4, 2], vec![1.0, 0.0, 0.0, 1.0, 2.0, 1.0, 1.0, 2.0]).map_err(fail)?;
    let hy = Tensor::from_vec(
        &[4, 3],
        vec![1.0, 0.0, 1.0, 0.0, 2.0, 0.0, 1.0, 1.0, 1.0, 2.0, 0.0, 0.0],
    )
    .map_err(fail)?;
    let hand = linear_cka(&hx, &hy).map_err(fail)?;
    let expected = 20.0 / 2696f64.sqrt();
    let y = random_tensor(&mut rng, &[30, 7], 1.0);
    let asym = (linear_cka(&x, &y).map_err(fail)? - linear_cka(&y, &x).map_err(fail)?).abs();
    let ok = (self_sim - 1.0).abs() <= 1e-9
        && (scale_inv - 1.0).abs() <= 1e-6
        && (orth_inv - 1.0).abs() <= 1e-6
        && (hand - expected).abs() <= 1e-9
        && asym <= 1e-9;
    check(
        ok,
        format!(
            "self {self_sim:.12}, scale {scale_inv:.12}, orthogonal {orth_inv:.12}, fixture {hand:.12} vs {expected:.12}, asymmetry {asym:.1e}"
        ),
    )
}

// ---------------------------------------------------------------- end to end

const SEEDS: u64 = 5;

fn base_config() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.run.cache_dir = root().join("reward-cache");
    cfg.compare.modes = vec![EvalMode::Knn5];
    cfg
}

fn seed_config(s: u64) -> ExperimentConfig {
    let mut cfg = base_config().with_experiment_seed(s);
    cfg.run.out_dir = root().join(format!("seed-{s}"));
    cfg
}

/// Fills the reward cache for every task and action in both modes.
fn warm_cache(suite: &Suite) -> Result<(), String> {
    let cfg = base_config();
    let oracle = cfg.oracle().map_err(fail)?;
    let tasks = KeyedTask::all(suite.tasks()).map_err(fail)?;
    let start = Instant::now();
    let progress = |d: usize, t: usize| {
        if d.is_multiple_of(32) || d == t {
            eprintln!(
                "  sweep {d}/{t} actions ({:.0}s)",
                start.elapsed().as_secs_f64()
            );
        }
    };
    oracle
        .sweep(
            &tasks,
            cfg.m,
            &[EvalMode::Knn5, EvalMode::Linear],
            Some(&progress),
        )
        .map_err(fail)
}

struct SeedRun {
    suite: Suite,
    results: ResultsTable,
    predictions: BTreeMap<String, SimParams>,
}

fn run_seed(s: u64) -> Result<SeedRun, String> {
    let cfg = seed_config(s);
    fresh_dir(&cfg.run.out_dir);
    run_experiment(&cfg, &quiet).map_err(fail)?;
    Ok(SeedRun {
        suite: load_suite(&cfg.run.out_dir.join("suite")).map_err(fail)?,
        results: load_results(&cfg.run.out_dir).map_err(fail)?,
        predictions: load_predictions(&cfg.run.out_dir.join("predictions.json")).map_err(fail)?,
    })
}

fn seen_partner(suite: &Suite, family: Family) -> Option<&str> {
    suite
        .seen
        .iter()
        .find(|t| t.spec.family == family)
        .map(|t| t.name())
}

fn criterion_4(runs: &[SeedRun]) -> Outcome {
    let oracle = base_config().oracle().map_err(fail)?;
    let mode = EvalMode::Knn5;
    let mut good = 0;
    let mut lines = Vec::new();
    let bests: Vec<f64> = runs[0]
        .suite
        .seen
        .iter()
        .map(|t| {
            let k = KeyedTask::new(t).map_err(fail)?;
            let (best, table) =
                brute_force_best(&k, base_config().m, mode, &oracle).map_err(fail)?;
            Ok(table[best.encode() as usize])
        })
        .collect::<Result<_, String>>()?;
    for (s, run) in runs.iter().enumerate() {
        let mean = |m| {
            run.results
                .mean(SplitRole::Seen, m, mode)
                .unwrap_or(f64::NAN)
        };
        let (t2s, dr, rnd) = (
            mean(Method::Predicted),
            mean(Method::DomainRandomization),
            mean(Method::Random),
        );
        let near = run
            .suite
            .seen
            .iter()
            .zip(&bests)
            .filter(|(t, b)| {
                run.results
                    .get(t.name(), Method::Predicted, mode)
                    .is_some_and(|r| *b - r.reward <= 2.0)
            })
            .count();
        let ok = t2s - dr > 0.0 && t2s - rnd > 0.0 && near >= 4;
        good += usize::from(ok);
        lines.push(format!(
            "seed {s}: t2s {t2s:.2} dr {dr:.2} random {rnd:.2} near-best {near}/6"
        ));
    }
    check(
        good >= 4,
        format!("{good}/{SEEDS} seeds pass (>= 4) [{}]", lines.join("; ")),
    )
}

fn criterion_5(runs: &[SeedRun]) -> Outcome {
    let mode = EvalMode::Knn5;
    let mut good = 0;
    let mut lines = Vec::new();
    for (s, run) in runs.iter().enumerate() {
        let t2s = run
            .results
            .mean(SplitRole::Unseen, Method::Predicted, mode)
            .unwrap_or(f64::NAN);
        let rnd = run
            .results
            .mean(SplitRole::Unseen, Method::Random, mode)
            .unwrap_or(f64::NAN);
        let agree = run
            .suite
            .unseen
            .iter()
            .filter(|t| {
                let sig = t.spec.family.signature();
                seen_partner(&run.suite, t.spec.family).is_some_and(|p| {
                    run.predictions[p].is_on(sig) == run.predictions[t.name()].is_on(sig)
                })
            })
            .count();
        let ok = t2s >= rnd && agree >= 3;
        good += usize::from(ok);
        lines.push(format!(
            "seed {s}: t2s {t2s:.2} random {rnd:.2} signature agreement {agree}/4"
        ));
    }
    check(
        good >= 4,
        format!("{good}/{SEEDS} seeds pass (>= 4) [{}]", lines.join("; ")),
    )
}

fn criterion_6() -> Outcome {
    let cfg = seed_config(0);
    let fractions = [1.0, 0.5, 0.2, 0.1];
    let table = run_robustness(&cfg, &fractions, &quiet).map_err(fail)?;
    let mode = EvalMode::Knn5;
    let full = table
        .mean(1.0, SplitRole::Seen, mode)
        .ok_or("no fraction-1.0 rows")?;
    let mut ok = true;
    let mut parts = Vec::new();
    for f in fractions {
        let m = table
            .mean(f, SplitRole::Seen, mode)
            .ok_or("missing fraction")?;
        ok &= (m - full).abs() <= 2.0;
        parts.push(format!("{f}: {m:.2}"));
    }
    check(
        ok,
        format!(
            "seen means {} (each within 2.0 of {full:.2})",
            parts.join(", ")
        ),
    )
}

fn criterion_8(first: &SeedRun) -> Outcome {
    // repeated run with the same config, into a fresh directory
    let mut cfg = seed_config(0);
    cfg.run.out_dir = root().join("seed-0-repeat");
    fresh_dir(&cfg.run.out_dir);
    run_experiment(&cfg, &quiet).map_err(fail)?;
    let a = std::fs::read(seed_config(0).run.out_dir.join("results.csv")).map_err(fail)?;
    let b = std::fs::read(cfg.run.out_dir.join("results.csv")).map_err(fail)?;
    let identical = a == b;
    let mut notes = vec![format!("results.csv identical across runs: {identical}")];

    let scratch = fresh_dir(&root().join("formats"));
    let mut trips = Vec::new();
    let data = render_dataset(&GenSpec {
        num_classes: 3,
        images_per_class: 4,
        image_size: 16,
        seed: 5,
        params: "10110011".parse().map_err(fail)?,
    })
    .map_err(fail)?;
    data.save(&scratch.join("d.s2tds")).map_err(fail)?;
    trips.push((
        "dataset",
        LabeledImageSet::load(&scratch.join("d.s2tds")).map_err(fail)? == data,
    ));

    let net = adaptsim::reward::Arch { widths: vec![4, 8] }
        .build(8, 3)
        .map_err(fail)?;
    checkpoint::save(&net, NETWORK_MAGIC, &scratch.join("n.s2tnet")).map_err(fail)?;
    trips.push((
        "network",
        checkpoint::load(&scratch.join("n.s2tnet"), NETWORK_MAGIC).map_err(fail)? == net,
    ));

    let mut pol = PolicyModel::new(5, &[4, 4], 3, 1).map_err(fail)?;
    randomize(&mut pol.net, &mut stream(1, "c8", 0), 0.3);
    pol.save(&scratch.join("p.s2tpol")).map_err(fail)?;
    trips.push((
        "policy",
        PolicyModel::load(&scratch.join("p.s2tpol")).map_err(fail)? == pol,
    ));

    let emb = TaskEmbedding {
        values: vec![0.1, -2.5e-7, 3.0, f64::MIN_POSITIVE],
        meta: EmbeddingMeta {
            task: "t".into(),
            fraction: 0.2,
            probe_checksum: "abc".into(),
            normalized: false,
        },
    };
    emb.save(&scratch.join("e.s2temb")).map_err(fail)?;
    trips.push((
        "embedding",
        TaskEmbedding::load(&scratch.join("e.s2temb")).map_err(fail)? == emb,
    ));

    let suite = &first.suite;
    save_suite(suite, &scratch.join("suite")).map_err(fail)?;
    let back = load_suite(&scratch.join("suite")).map_err(fail)?;
    trips.push((
        "suite",
        back.seen == suite.seen && back.unseen == suite.unseen,
    ));

    let csv = first.results.to_csv().map_err(fail)?;
    trips.push((
        "results csv",
        ResultsTable::from_csv(&csv)
            .map_err(fail)?
            .to_csv()
            .map_err(fail)?
            == csv,
    ));

    let cache = RewardCache::open(&base_config().run.cache_dir).map_err(fail)?;
    first.results.verify_against(&cache).map_err(fail)?;
    let reopened = RewardCache::open(&base_config().run.cache_dir).map_err(fail)?;
    trips.push(("reward log", reopened.records() == cache.records()));

    let failed: Vec<&str> = trips
        .iter()
        .filter(|(_, ok)| !ok)
        .map(|(n, _)| *n)
        .collect();
    notes.push(format!(
        "{} formats round-trip, failures {:?}",
        trips.len(),
        failed
    ));

    let off = render_dataset(&GenSpec {
        num_classes: 4,
        images_per_class: 6,
        image_size: 16,
        seed: 11,
        params: SimParams::all_off(8),
    })
    .map_err(fail)?;
    let mut max_var: f64 = 0.0;
    for c in 0..4 {
        let rows: Vec<&[f64]> = (0..off.len())
            .filter(|&i| off.labels[i] == c)
            .map(|i| off.images.row(i))
            .collect();
        for p in 0..rows[0].len() {
            let mean = rows.iter().map(|r| r[p]).sum::<f64>() / rows.len() as f64;
            let var = rows.iter().map(|r| (r[p] - mean).powi(2)).sum::<f64>() / rows.len() as f64;
            max_var = max_var.max(var);
        }
    }
    notes.push(format!("all-off intra-class variance {max_var:e}"));
    check(
        identical && failed.is_empty() && max_var == 0.0,
        notes.join("; "),
    )
}

fn criterion_9(suite: &Suite) -> Outcome {
    let cfg = base_config();
    let oracle = cfg.oracle().map_err(fail)?;
    let mut worst = f64::INFINITY;
    let mut parts = Vec::new();
    for t in &suite.seen {
        let k = KeyedTask::new(t).map_err(fail)?;
        let knn = oracle
            .reward_table(&k, cfg.m, EvalMode::Knn5)
            .map_err(fail)?;
        let lin = oracle
            .reward_table(&k, cfg.m, EvalMode::Linear)
            .map_err(fail)?;
        let r = spearman(&knn, &lin).map_err(fail)?;
        worst = worst.min(r);
        parts.push(format!("{} {r:.3}", t.name()));
    }
    check(
        worst > 0.0,
        format!("Spearman(knn5, linear) per seen task: {}", parts.join(", ")),
    )
}

// ---------------------------------------------------------------- driver

fn main() {
    let wanted: Vec<usize> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .filter_map(|a| a.parse().ok())
        .collect();
    let want = |n: usize| wanted.is_empty() || wanted.contains(&n);
    let mut results: Vec<(usize, &str, Outcome, f64)> = Vec::new();
    let mut timed = |n: usize, name: &'static str, f: &mut dyn FnMut() -> Outcome| {
        if want(n) {
            let t = Instant::now();
            let out = f();
            let secs = t.elapsed().as_secs_f64();
            let tag = if out.is_ok() { "PASS" } else { "FAIL" };
            let detail = match &out {
                Ok(d) | Err(d) => d.clone(),
            };
            println!("criterion {n} [{name}]: {tag} ({secs:.1}s) {detail}");
            results.push((n, name, out, secs));
        }
    };
    timed(1, "gradient exactness", &mut criterion_1);
    timed(2, "policy-gradient step semantics", &mut criterion_2);
    timed(3, "trainer convergence on reward tables", &mut criterion_3);
    timed(7, "linear CKA", &mut criterion_7);

    if [4, 5, 6, 8, 9].iter().any(|&n| want(n)) {
        std::fs::create_dir_all(root()).expect("acceptance dir");
        let suite = adaptsim::tasks::build_suite_with(&base_config().suite).expect("suite");
        if let Err(e) = warm_cache(&suite) {
            println!("reward sweep failed: {e}");
            std::process::exit(1);
        }
        timed(9, "knn5 and linear rewards agree in rank", &mut || {
            criterion_9(&suite)
        });
        let need_runs = [4, 5, 8].iter().any(|&n| want(n));
        let runs: Vec<SeedRun> = if need_runs {
            match (0..SEEDS).map(run_seed).collect::<Result<Vec<_>, _>>() {
                Ok(r) => r,
                Err(e) => {
                    println!("experiment run failed: {e}");
                    std::process::exit(1);
                }
            }
        } else {
            Vec::new()
        };
        timed(4, "seen tasks beat the baselines", &mut || {
            criterion_4(&runs)
        });
        timed(5, "unseen tasks generalize", &mut || criterion_5(&runs));
        timed(6, "embedding subsampling robustness", &mut criterion_6);
        timed(8, "determinism and file formats", &mut || {
            criterion_8(&runs[0])
        });
    }
    results.sort_by_key(|r| r.0);
    let failed: Vec<usize> = results
        .iter()
        .filter(|r| r.2.is_err())
        .map(|r| r.0)
        .collect();
    println!(
        "acceptance: {}/{} criteria pass{}",
        results.len() - failed.len(),
        results.len(),
        if failed.is_empty() {
            String::new()
        } else {
            format!(", failing {failed:?}")
        }
    );
    if !failed.is_empty() {
        std::process::exit(1);
    }
}
