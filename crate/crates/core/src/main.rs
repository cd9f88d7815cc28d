use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use adaptsim::analysis::linear_cka;
use adaptsim::experiment::{
    embed_tasks, run_experiment, run_robustness, train_resumable, with_jobs, write_log_file,
    ExperimentConfig,
};
use adaptsim::numkit::checkpoint::{self, NETWORK_MAGIC};
use adaptsim::policy::{predict, OracleReward, PolicyModel};
use adaptsim::reward::{stage_layers, EvalMode, KeyedTask};
use adaptsim::scenegen::{render_dataset, GenSpec, LabeledImageSet, SimParams};
use adaptsim::tasks::{build_suite_with, load_suite, save_suite, SuiteConfig, TaskData};
use adaptsim::taskvec::{embed_task, EmbedSeeds, ProbeNetwork, TaskEmbedding};
use adaptsim::{Error, Result};

#[derive(Parser)]
#[command(
    name = "adaptsim",
    version,
    about = "Learn which rendering variations to pre-train on, per task"
)]
struct Cli {
    /// Worker threads (0 = all cores). Overrides the config's `run.jobs`.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Print (or write) the default experiment config.
    InitConfig {
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Build the seen/unseen task suite.
    BuildSuite {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render a labeled dataset for one action.
    GenDataset {
        /// Flag bitstring, one character per parameter, e.g. `10110000`.
        #[arg(long)]
        params: SimParams,
        #[arg(long, default_value_t = 12)]
        classes: usize,
        #[arg(long, default_value_t = 48)]
        per_class: usize,
        #[arg(long, default_value_t = 16)]
        size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compute a task's Fisher embedding with a probe network.
    EmbedTask {
        /// Task directory written by `build-suite`.
        #[arg(long)]
        task: PathBuf,
        /// Probe backbone checkpoint (`S2T-NET1`).
        #[arg(long)]
        probe: PathBuf,
        #[arg(long, default_value_t = 1.0)]
        fraction: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score one action on one task.
    EvalReward {
        #[arg(long)]
        task: PathBuf,
        #[arg(long)]
        params: SimParams,
        /// knn5, linear or finetune.
        #[arg(long, default_value = "knn5")]
        mode: EvalMode,
        /// Experiment config supplying the pre-training and evaluation settings.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Reward cache directory; defaults to the config's `run.cache_dir`.
        #[arg(long)]
        cache: Option<PathBuf>,
    },
    /// Score every action of the 2^M space on one task and print the table.
    Sweep {
        #[arg(long)]
        task: PathBuf,
        #[arg(long = "M", default_value_t = 8)]
        m: usize,
        #[arg(long, default_value = "knn5")]
        mode: EvalMode,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        cache: Option<PathBuf>,
    },
    /// Train the policy on a suite's seen tasks.
    TrainPolicy {
        #[arg(long)]
        suite: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the predicted bitstring for an embedding.
    Predict {
        #[arg(long)]
        policy: PathBuf,
        #[arg(long)]
        embedding: PathBuf,
    },
    /// Tabulate every method on every task of a suite.
    Compare {
        #[arg(long)]
        suite: PathBuf,
        #[arg(long)]
        policy: PathBuf,
        /// Directory holding `<task>.s2temb`; embeddings are computed when absent.
        #[arg(long)]
        embeddings: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', default_value = "knn5")]
        modes: Vec<EvalMode>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "results.csv")]
        out: PathBuf,
    },
    /// Linear CKA between two backbones at one stage.
    Cka {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        /// Index into the backbone's stage layers (0 is the earliest).
        #[arg(long, default_value_t = 0)]
        stage: usize,
        /// A dataset file whose images are fed to both backbones.
        #[arg(long)]
        eval_set: PathBuf,
    },
    /// Re-embed at several data fractions and score the re-predicted actions.
    Robustness {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated, e.g. `1,0.5,0.2,0.1`; defaults to the config's list.
        #[arg(long, value_delimiter = ',')]
        fractions: Option<Vec<f64>>,
    },
    /// Run (or resume) the full experiment.
    Run {
        #[arg(long)]
        config: PathBuf,
    },
}

fn load_config(path: Option<&Path>, jobs: Option<usize>) -> Result<ExperimentConfig> {
    let mut cfg = match path {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(j) = jobs {
        cfg.run.jobs = j;
    }
    Ok(cfg)
}

fn log(msg: &str) {
    eprintln!("{msg}");
}

fn probe_for(cfg: &ExperimentConfig) -> Result<ProbeNetwork> {
    log("pre-training probe network");
    ProbeNetwork::pretrain(&cfg.probe)
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = dispatch(cli) {
        eprintln!("error: {e}");
        let mut src = std::error::Error::source(&e);
        while let Some(s) = src {
            eprintln!("  caused by: {s}");
            src = s.source();
        }
        std::process::exit(1);
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    let jobs = cli.jobs;
    match cli.cmd {
        Cmd::InitConfig { out } => {
            let text = ExperimentConfig::default().to_toml()?;
            match out {
                Some(p) => adaptsim::io::write_atomic(&p, text.as_bytes())?,
                None => print!("{text}"),
            }
        }
        Cmd::BuildSuite { seed, out } => {
            let suite = build_suite_with(&SuiteConfig::new(seed))?;
            let manifest = save_suite(&suite, &out)?;
            for e in manifest.tasks {
                println!("{:<28} {:?} {}", e.spec.name, e.spec.role, e.checksum);
            }
        }
        Cmd::GenDataset {
            params,
            classes,
            per_class,
            size,
            seed,
            out,
        } => {
            let data = render_dataset(&GenSpec {
                num_classes: classes,
                images_per_class: per_class,
                image_size: size,
                params,
                seed,
            })?;
            data.save(&out)?;
            println!("{}", data.checksum()?);
        }
        Cmd::EmbedTask {
            task,
            probe,
            fraction,
            seed,
            config,
            out,
        } => {
            let cfg = load_config(config.as_deref(), jobs)?;
            let task = TaskData::load(&task)?;
            let probe = ProbeNetwork::load(&probe)?;
            let mut e = with_jobs(cfg.run.jobs, || {
                embed_task(
                    &probe,
                    &task,
                    fraction,
                    &cfg.embed.settings,
                    EmbedSeeds::from_seed(seed),
                )
            })??;
            e.meta.task = task.name().to_string();
            e.save(&out)?;
            println!("{} dims, norm {:.6}", e.len(), e.norm());
        }
        Cmd::EvalReward {
            task,
            params,
            mode,
            config,
            cache,
        } => {
            let mut cfg = load_config(config.as_deref(), jobs)?;
            if let Some(c) = cache {
                cfg.run.cache_dir = c;
            }
            let task = TaskData::load(&task)?;
            let oracle = cfg.oracle()?;
            let rec = with_jobs(cfg.run.jobs, || {
                oracle.record(&KeyedTask::new(&task)?, &params, mode)
            })??;
            println!("{:.4}", rec.reward);
        }
        Cmd::Sweep {
            task,
            m,
            mode,
            config,
            cache,
        } => {
            let mut cfg = load_config(config.as_deref(), jobs)?;
            if let Some(c) = cache {
                cfg.run.cache_dir = c;
            }
            let task = TaskData::load(&task)?;
            let oracle = cfg.oracle()?;
            let keyed = vec![KeyedTask::new(&task)?];
            let progress = |d: usize, t: usize| {
                if d.is_multiple_of(16) || d == t {
                    log(&format!("{d}/{t} actions"));
                }
            };
            with_jobs(cfg.run.jobs, || {
                oracle.sweep(&keyed, m, &[mode], Some(&progress))
            })??;
            let table = oracle.reward_table(&keyed[0], m, mode)?;
            println!("action,reward");
            for (code, r) in table.iter().enumerate() {
                println!("{},{r:.4}", SimParams::decode(code as u32, m)?);
            }
        }
        Cmd::TrainPolicy { suite, config, out } => {
            let cfg = load_config(config.as_deref(), jobs)?;
            let suite = load_suite(&suite)?;
            with_jobs(cfg.run.jobs, || -> Result<()> {
                let probe = probe_for(&cfg)?;
                let seen: Vec<&TaskData> = suite.seen.iter().collect();
                let embs = embed_tasks(
                    &probe,
                    &seen,
                    cfg.embed.fraction,
                    &cfg.embed.settings,
                    cfg.embed.seed,
                )?;
                for e in &embs {
                    e.save(
                        &out.join("embeddings")
                            .join(format!("{}.s2temb", e.meta.task)),
                    )?;
                }
                let x: Vec<Vec<f64>> = embs.into_iter().map(|e| e.values).collect();
                let oracle = cfg.oracle()?;
                let rewards = OracleReward {
                    oracle: &oracle,
                    tasks: KeyedTask::all(suite.seen.iter())?,
                    mode: cfg.compare.train_mode,
                };
                let (model, best, trail) = train_resumable(
                    &x,
                    cfg.m,
                    &rewards,
                    &cfg.trainer,
                    &out.join("snapshot"),
                    &log,
                )?;
                model.save(&out.join("policy.s2tpol"))?;
                write_log_file(&out.join("train_log.jsonl"), &trail)?;
                adaptsim::io::write_json(&out.join("best_actions.json"), &best)?;
                for (t, x) in suite.seen.iter().zip(&x) {
                    println!("{:<28} {}", t.name(), predict(&model, x)?);
                }
                Ok(())
            })??;
        }
        Cmd::Predict { policy, embedding } => {
            let model = PolicyModel::load(&policy)?;
            let e = TaskEmbedding::load(&embedding)?;
            println!("{}", predict(&model, &e.values)?);
        }
        Cmd::Compare {
            suite,
            policy,
            embeddings,
            modes,
            config,
            out,
        } => {
            let cfg = load_config(config.as_deref(), jobs)?;
            let suite = load_suite(&suite)?;
            let model = PolicyModel::load(&policy)?;
            let table = with_jobs(cfg.run.jobs, || -> Result<_> {
                let tasks: Vec<&TaskData> = suite.tasks().collect();
                let x: Vec<Vec<f64>> = match &embeddings {
                    Some(dir) => tasks
                        .iter()
                        .map(|t| {
                            Ok(
                                TaskEmbedding::load(&dir.join(format!("{}.s2temb", t.name())))?
                                    .values,
                            )
                        })
                        .collect::<Result<_>>()?,
                    None => {
                        let probe = probe_for(&cfg)?;
                        embed_tasks(
                            &probe,
                            &tasks,
                            cfg.embed.fraction,
                            &cfg.embed.settings,
                            cfg.embed.seed,
                        )?
                        .into_iter()
                        .map(|e| e.values)
                        .collect()
                    }
                };
                let preds = tasks
                    .iter()
                    .zip(&x)
                    .map(|(t, x)| Ok((t.name().to_string(), predict(&model, x)?)))
                    .collect::<Result<_>>()?;
                let c = &cfg.compare;
                adaptsim::analysis::compare_methods(
                    &suite,
                    &preds,
                    &cfg.oracle()?,
                    &modes,
                    cfg.m,
                    c.random_seeds,
                    c.random_seed,
                )
            })??;
            table.save_csv(&out)?;
            print!("{}", table.summary());
        }
        Cmd::Cka {
            a,
            b,
            stage,
            eval_set,
        } => {
            let na = checkpoint::load(&a, NETWORK_MAGIC)?;
            let nb = checkpoint::load(&b, NETWORK_MAGIC)?;
            let data = LabeledImageSet::load(&eval_set)?;
            let at = |net: &adaptsim::numkit::Network| -> Result<_> {
                let stages = stage_layers(net);
                let layer = *stages.get(stage).ok_or_else(|| {
                    Error::InvalidArgument(format!("stage {stage} of {}", stages.len()))
                })?;
                net.activations_at(&data.images, layer)
            };
            println!("{:.9}", linear_cka(&at(&na)?, &at(&nb)?)?);
        }
        Cmd::Robustness { config, fractions } => {
            let cfg = load_config(Some(&config), jobs)?;
            let fractions = fractions.unwrap_or_else(|| cfg.robustness.fractions.clone());
            let table = run_robustness(&cfg, &fractions, &log)?;
            print!("{}", table.summary(&cfg.compare.modes));
        }
        Cmd::Run { config } => {
            let cfg = load_config(Some(&config), jobs)?;
            let report = run_experiment(&cfg, &log)?;
            let names = |v: &[adaptsim::experiment::Stage]| {
                v.iter().map(|s| s.name()).collect::<Vec<_>>().join(", ")
            };
            log(&format!(
                "ran: [{}]  skipped: [{}]",
                names(&report.ran),
                names(&report.skipped)
            ));
            print!(
                "{}",
                std::fs::read_to_string(cfg.run.out_dir.join("summary.txt")).unwrap_or_default()
            );
        }
    }
    Ok(())
}
