//! End-to-end run: synthetic corpus, ingestion, leave-one-pair-out folds,
//! training, held-out residuals, off-policy values and laugh statistics.
//!
//! Report files hold no timing information, so two runs with the same
//! config are byte-identical; wall-clock time goes to the manifests.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::batch_rl::{bellman_residual, train, Algorithm, TrainConfig, TrainReport};
use crate::config::Config;
use crate::dataset::{self, loso_split, FoldSplit, TupleDataset};
use crate::error::{Error, Result};
use crate::manifest::RunManifest;
use crate::ope::{evaluate, naturalness, NaturalnessReport, OpeReport, PolicyTable, PolicyTag};
use crate::qnet::{io as qio, QParams};
use crate::synth::generate_corpus;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlgorithmResult {
    pub algorithm: Algorithm,
    pub train: TrainReport,
    pub heldout_residual: f64,
    pub ope: OpeReport,
    pub stats: NaturalnessReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: usize,
    pub test_pairs: Vec<String>,
    pub n_train_transitions: usize,
    pub n_test_transitions: usize,
    pub behavior: PolicyTag,
    pub results: Vec<AlgorithmResult>,
}

impl FoldResult {
    pub fn get(&self, algorithm: Algorithm) -> Option<&AlgorithmResult> {
        self.results.iter().find(|r| r.algorithm == algorithm)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlgorithmSummary {
    pub algorithm: Algorithm,
    pub mean_heldout_residual: f64,
    pub mean_target_value: f64,
    pub mean_behavior_value: f64,
    pub mean_symmetric_kl: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub config_hash: String,
    pub seed: u64,
    pub corpus_hash: String,
    pub n_sessions: usize,
    pub n_transitions: usize,
    pub folds: Vec<FoldResult>,
    pub summary: Vec<AlgorithmSummary>,
}

/// Training settings for a pipeline run: the pipeline seed drives training.
pub fn train_config(config: &Config) -> TrainConfig {
    TrainConfig {
        seed: config.pipeline.seed,
        ..config.train.clone()
    }
}

/// Trains every configured algorithm on the training part of fold `k` and
/// evaluates it on the held-out part. Returns the trained parameters in the
/// order of `config.pipeline.algorithms`.
pub fn evaluate_fold(
    dataset: &TupleDataset,
    split: &FoldSplit,
    k: usize,
    config: &Config,
) -> Result<(FoldResult, Vec<QParams>)> {
    let (train_ds, test_ds) = dataset.fold(split, k)?;
    if train_ds.is_empty() || test_ds.is_empty() {
        return Err(Error::EmptyDataset);
    }
    log::info!(
        "fold {k}: {} training and {} held-out transitions",
        train_ds.len(),
        test_ds.len()
    );
    let behavior = PolicyTable::behavior(&test_ds, config.pipeline.baseline, &config.ope.knn)?;
    let tc = train_config(config);
    let mut results = Vec::new();
    let mut models = Vec::new();
    for &algorithm in &config.pipeline.algorithms {
        let out = train(algorithm, &train_ds, &tc)?;
        let heldout_residual = bellman_residual(&out.params, &test_ds, tc.gamma)?;
        let ope = evaluate(&test_ds, &out.params, &behavior, &config.ope)?;
        let stats = naturalness(&out.params, &test_ds, config.reward.frame_rate)?;
        log::info!(
            "fold {k} {algorithm:?}: held-out residual {heldout_residual:.6}, value {:.4} vs behavior {:.4}",
            ope.target.step_wis,
            ope.behavior.step_wis
        );
        results.push(AlgorithmResult {
            algorithm,
            train: out.report,
            heldout_residual,
            ope,
            stats,
        });
        models.push(out.params);
    }
    Ok((
        FoldResult {
            fold: k,
            test_pairs: split.folds[k].test_pairs.clone(),
            n_train_transitions: train_ds.len(),
            n_test_transitions: test_ds.len(),
            behavior: behavior.tag,
            results,
        },
        models,
    ))
}

pub fn summarize(folds: &[FoldResult], algorithms: &[Algorithm]) -> Vec<AlgorithmSummary> {
    algorithms
        .iter()
        .map(|&algorithm| {
            let rs: Vec<&AlgorithmResult> = folds.iter().filter_map(|f| f.get(algorithm)).collect();
            let mean = |f: &dyn Fn(&AlgorithmResult) -> f64| {
                rs.iter().map(|r| f(r)).sum::<f64>() / rs.len().max(1) as f64
            };
            AlgorithmSummary {
                algorithm,
                mean_heldout_residual: mean(&|r| r.heldout_residual),
                mean_target_value: mean(&|r| r.ope.target.step_wis),
                mean_behavior_value: mean(&|r| r.ope.behavior.step_wis),
                mean_symmetric_kl: mean(&|r| r.stats.symmetric_kl),
            }
        })
        .collect()
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let json = serde_json::to_string_pretty(value)?;
    fs::write(path, json + "\n").map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

/// Writes `<output>.manifest.json` for one output.
pub fn write_manifest(
    command: &str,
    config_hash: &str,
    seed: Option<u64>,
    inputs: &[&Path],
    output: &Path,
    started: Instant,
) -> Result<()> {
    let mut m = RunManifest::new(command, config_hash.to_string());
    m.seed = seed;
    for p in inputs {
        m.add_input(p)?;
    }
    m.add_output(output)?;
    m.wall_clock_s = started.elapsed().as_secs_f64();
    m.write(&RunManifest::path_for(output))
}

/// Output locations of a pipeline run under one directory.
#[derive(Debug, Clone)]
pub struct PipelineLayout {
    pub root: PathBuf,
}

impl PipelineLayout {
    pub fn corpus(&self) -> PathBuf {
        self.root.join("corpus")
    }
    pub fn dataset(&self) -> PathBuf {
        self.root.join("data.bin")
    }
    pub fn report(&self) -> PathBuf {
        self.root.join("report.json")
    }
    pub fn fold_file(&self, k: usize, algorithm: Algorithm, what: &str) -> PathBuf {
        let name = match algorithm {
            Algorithm::Nfq => "nfq",
            Algorithm::BatchDqn => "batch-dqn",
        };
        self.root.join(format!("fold{k}_{name}_{what}"))
    }
}

/// Full run under `out`; every output gets a manifest.
pub fn run_pipeline(config: &Config, out: &Path) -> Result<PipelineReport> {
    config.validate()?;
    let seed = config.pipeline.seed;
    let hash = config.hash();
    let layout = PipelineLayout {
        root: out.to_path_buf(),
    };
    fs::create_dir_all(out).map_err(|e| Error::io(format!("creating {}", out.display()), e))?;

    let t = Instant::now();
    let corpus = generate_corpus(&config.synth, seed)?;
    let corpus_dir = layout.corpus();
    let corpus_layout = corpus.write(&corpus_dir)?;
    write_manifest("pipeline synth", &hash, Some(seed), &[], &corpus_dir, t)?;
    drop(corpus);

    let t = Instant::now();
    let ds = dataset::ingest::build_dataset(
        &corpus_layout.features,
        &corpus_layout.annotations,
        &config.ingest_options(),
        &hash,
    )?;
    dataset::io::save(&ds, &layout.dataset())?;
    write_manifest(
        "pipeline tuples",
        &hash,
        Some(seed),
        &[&corpus_dir],
        &layout.dataset(),
        t,
    )?;

    let split = loso_split(&ds.session_ids())?;
    let folds: Vec<usize> = match &config.pipeline.folds {
        Some(f) => f.clone(),
        None => (0..split.folds.len()).collect(),
    };
    let mut results = Vec::with_capacity(folds.len());
    for k in folds {
        let t = Instant::now();
        let (fold, models) = evaluate_fold(&ds, &split, k, config)?;
        for (r, params) in fold.results.iter().zip(&models) {
            let inputs: [&Path; 1] = [&layout.dataset()];
            let model = layout.fold_file(k, r.algorithm, "model.bin");
            qio::save_params(&model, params, &hash)?;
            write_manifest("pipeline train", &hash, Some(seed), &inputs, &model, t)?;
            for (what, value) in [
                ("train.json", serde_json::to_value(&r.train)?),
                ("ope.json", serde_json::to_value(&r.ope)?),
                ("stats.json", serde_json::to_value(&r.stats)?),
            ] {
                let path = layout.fold_file(k, r.algorithm, what);
                write_json(&path, &value)?;
                write_manifest(
                    "pipeline",
                    &hash,
                    Some(seed),
                    &[&layout.dataset(), &model],
                    &path,
                    t,
                )?;
            }
        }
        results.push(fold);
    }

    let t = Instant::now();
    let report = PipelineReport {
        config_hash: hash.clone(),
        seed,
        corpus_hash: ds.manifest().corpus_hash.clone(),
        n_sessions: ds.sessions().len(),
        n_transitions: ds.len(),
        summary: summarize(&results, &config.pipeline.algorithms),
        folds: results,
    };
    write_json(&layout.report(), &report)?;
    write_manifest(
        "pipeline",
        &hash,
        Some(seed),
        &[&layout.dataset()],
        &layout.report(),
        t,
    )?;
    Ok(report)
}
