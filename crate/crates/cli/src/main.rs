//! `bcrl`: command-line front end for the backchannel batch-RL pipeline.
//!
//! Exit codes: 0 success, 1 invalid input or configuration, 2 runtime or
//! numeric failure. Logs go to stderr; set `BCRL_LOG` for the level.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};

use bcrl::batch_rl::{bellman_residual, train, Algorithm};
use bcrl::config::Config;
use bcrl::dataset::{self, loso_split, TupleDataset};
use bcrl::engagement::{extract_connection_events, io as eio, reward_series, WindowAlignment};
use bcrl::error::{Error, Result};
use bcrl::features::{extract_base_frames, extract_states, io as fio, wav, StateVector};
use bcrl::ope::{evaluate, naturalness, Baseline, PolicyTable};
use bcrl::pipeline::{run_pipeline, train_config, write_json, write_manifest, PipelineLayout};
use bcrl::qnet::io as qio;
use bcrl::synth::generate_corpus;

#[derive(Parser)]
#[command(name = "bcrl", version, about = "Batch RL for backchannel timing")]
struct Cli {
    /// Cap on worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus.
    Synth {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Extract feature frames from a 16 kHz mono WAV file.
    Features {
        #[arg(long)]
        wav: PathBuf,
        /// `.csv` or `.jsonl`.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Write the 19-value base frames instead of state vectors.
        #[arg(long)]
        base: bool,
    },
    /// Compute the 40 Hz reward stream of one annotated session.
    Rewards {
        #[arg(long)]
        annotations: PathBuf,
        #[arg(long)]
        duration: f64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        reward_window: Option<WindowAlignment>,
    },
    /// Build the transition dataset from features and annotations.
    Tuples {
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        annotations: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        augment: bool,
        #[arg(long)]
        reward_window: Option<WindowAlignment>,
    },
    /// Train a Q-network; with `--fold`, on that fold's training part only.
    Train {
        #[arg(long)]
        algo: Algorithm,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        fold: Option<usize>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        report: PathBuf,
    },
    /// Bellman residual of a model; with `--fold`, on the held-out part.
    Residual {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        fold: Option<usize>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Off-policy value of a model's softened greedy policy.
    Ope {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        baseline: Option<Baseline>,
        #[arg(long)]
        fold: Option<usize>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Laugh-duration statistics of a model against the logged data.
    Stats {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        fold: Option<usize>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Synthetic corpus through every stage into one directory.
    Pipeline {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn load_config(path: Option<&Path>) -> Result<Config> {
    match path {
        Some(p) => Config::load(p),
        None => Ok(Config::default()),
    }
}

fn create_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => std::fs::create_dir_all(d)
            .map_err(|e| Error::io(format!("creating {}", d.display()), e)),
        _ => Ok(()),
    }
}

/// The dataset, or with a fold index its (training, held-out) part.
fn select(ds: TupleDataset, fold: Option<usize>, held_out: bool) -> Result<TupleDataset> {
    match fold {
        None => Ok(ds),
        Some(k) => {
            let split = loso_split(&ds.session_ids())?;
            let (train, test) = ds.fold(&split, k)?;
            Ok(if held_out { test } else { train })
        }
    }
}

fn run(command: Command) -> Result<()> {
    let started = Instant::now();
    match command {
        Command::Synth { config, out, seed } => {
            let c = load_config(config.as_deref())?;
            let seed = seed.unwrap_or(c.synth.seed);
            let corpus = generate_corpus(&c.synth, seed)?;
            corpus.write(&out)?;
            let inputs: Vec<&Path> = config.iter().map(PathBuf::as_path).collect();
            write_manifest("synth", &c.hash(), Some(seed), &inputs, &out, started)
        }
        Command::Features {
            wav: input,
            out,
            config,
            base,
        } => {
            let c = load_config(config.as_deref())?;
            let clip = wav::read_wav(&input)?;
            let rows: Vec<StateVector> = if base {
                extract_base_frames(&clip, &c.features)?
                    .into_iter()
                    .map(|f| StateVector {
                        values: f.values.to_vec(),
                        timestamp: f.timestamp,
                    })
                    .collect()
            } else {
                extract_states(&clip, &c.features)?
            };
            create_parent(&out)?;
            let hash = bcrl::manifest::config_hash(&c.features);
            fio::write_features(&out, &rows, &hash)?;
            write_manifest("features", &hash, None, &[&input], &out, started)
        }
        Command::Rewards {
            annotations,
            duration,
            out,
            config,
            reward_window,
        } => {
            let mut c = load_config(config.as_deref())?;
            if let Some(w) = reward_window {
                c.reward.alignment = w;
            }
            if !(duration > 0.0) {
                return Err(Error::Validation(format!(
                    "duration must be positive, got {duration}"
                )));
            }
            let ann = eio::read_annotations(&annotations)?;
            for a in &ann {
                a.validate(Some(duration))?;
            }
            let ces = extract_connection_events(&ann, &c.reward)?;
            let n = (duration * c.reward.frame_rate).round() as usize;
            let series = reward_series(&ces, n, &c.reward);
            create_parent(&out)?;
            eio::write_rewards(&out, &series)?;
            write_manifest("rewards", &c.hash(), None, &[&annotations], &out, started)
        }
        Command::Tuples {
            features,
            annotations,
            out,
            config,
            augment,
            reward_window,
        } => {
            let mut c = load_config(config.as_deref())?;
            c.dataset.augment |= augment;
            if let Some(w) = reward_window {
                c.reward.alignment = w;
            }
            let hash = c.hash();
            let ds = dataset::ingest::build_dataset(
                &features,
                &annotations,
                &c.ingest_options(),
                &hash,
            )?;
            log::info!("{} sessions, {} transitions", ds.sessions().len(), ds.len());
            create_parent(&out)?;
            dataset::io::save(&ds, &out)?;
            write_manifest(
                "tuples",
                &hash,
                None,
                &[&features, &annotations],
                &out,
                started,
            )
        }
        Command::Train {
            algo,
            data,
            fold,
            config,
            out,
            report,
        } => {
            let c = load_config(config.as_deref())?;
            let ds = select(dataset::io::load(&data)?, fold, false)?;
            let tc = train_config(&c);
            let result = train(algo, &ds, &tc)?;
            let hash = c.hash();
            create_parent(&out)?;
            create_parent(&report)?;
            qio::save_params(&out, &result.params, &hash)?;
            write_json(&report, &result.report)?;
            let seed = Some(tc.seed);
            write_manifest("train", &hash, seed, &[&data], &out, started)?;
            write_manifest("train", &hash, seed, &[&data], &report, started)
        }
        Command::Residual {
            model,
            data,
            fold,
            config,
            out,
        } => {
            let c = load_config(config.as_deref())?;
            let params = qio::load_params_checked(&model, &c.hash())?;
            let ds = select(dataset::io::load(&data)?, fold, true)?;
            let residual = bellman_residual(&params, &ds, c.train.gamma)?;
            create_parent(&out)?;
            write_json(
                &out,
                &serde_json::json!({ "residual": residual, "n_transitions": ds.len(), "gamma": c.train.gamma, "fold": fold }),
            )?;
            write_manifest("residual", &c.hash(), None, &[&model, &data], &out, started)
        }
        Command::Ope {
            data,
            model,
            baseline,
            fold,
            config,
            out,
        } => {
            let c = load_config(config.as_deref())?;
            let params = qio::load_params_checked(&model, &c.hash())?;
            let ds = select(dataset::io::load(&data)?, fold, true)?;
            let behavior =
                PolicyTable::behavior(&ds, baseline.unwrap_or(c.pipeline.baseline), &c.ope.knn)?;
            let report = evaluate(&ds, &params, &behavior, &c.ope)?;
            create_parent(&out)?;
            write_json(&out, &report)?;
            write_manifest("ope", &c.hash(), None, &[&model, &data], &out, started)
        }
        Command::Stats {
            model,
            data,
            fold,
            config,
            out,
        } => {
            let c = load_config(config.as_deref())?;
            let params = qio::load_params_checked(&model, &c.hash())?;
            let ds = select(dataset::io::load(&data)?, fold, true)?;
            let report = naturalness(&params, &ds, c.reward.frame_rate)?;
            create_parent(&out)?;
            write_json(&out, &report)?;
            write_manifest("stats", &c.hash(), None, &[&model, &data], &out, started)
        }
        Command::Pipeline { config, out } => {
            let c = load_config(config.as_deref())?;
            let report = run_pipeline(&c, &out)?;
            for s in &report.summary {
                log::info!(
                    "{:?}: held-out residual {:.6}, value {:.4} vs behavior {:.4}",
                    s.algorithm,
                    s.mean_heldout_residual,
                    s.mean_target_value,
                    s.mean_behavior_value
                );
            }
            log::info!(
                "report written to {}",
                PipelineLayout { root: out }.report().display()
            );
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("BCRL_LOG", "info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let shown = e.print().is_ok();
            let informational = matches!(
                e.kind(),
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion
            );
            return if informational && shown {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            };
        }
    };
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
        {
            eprintln!("error: cannot configure {n} threads: {e}");
            return ExitCode::from(2);
        }
    }
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 1 } else { 2 })
        }
    }
}
