//! Run configuration: one TOML file with a section per stage.
//!
//! Every key is optional; missing keys take the defaults below and unknown
//! keys are rejected.
//!
//! | key | default |
//! |-----|---------|
//! | `features.win_ms` / `features.hop_ms` | 40 / 25 |
//! | `features.normalization` | `"none"` |
//! | `reward.window_s` | 15 |
//! | `reward.alignment` | `"trailing"` |
//! | `dataset.env_participant` | `"A"` |
//! | `dataset.augment` | false |
//! | `train.gamma` | 0.99 |
//! | `train.epochs` | 10 |
//! | `train.minibatch` | 512 |
//! | `train.target_sync` | 1000 |
//! | `train.buffer_capacity` | 50000 |
//! | `train.qnet.hidden` | [100, 25] |
//! | `train.qnet.learning_rate` | 1e-4 |
//! | `ope.horizon` / `ope.shift` | 100 / 1 |
//! | `ope.return_horizon` | 250 |
//! | `ope.softening` | 0.9 |
//! | `ope.p_floor` | 0.01 |
//! | `ope.knn.k` / `ope.knn.alpha` | 50 / 1 |
//! | `synth.n_pairs` x `synth.sessions_per_pair` | 5 x 4 |
//! | `synth.duration_s` | 300 |
//! | `pipeline.seed` | 0 |

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::batch_rl::{Algorithm, TrainConfig};
use crate::dataset::ingest::IngestOptions;
use crate::engagement::{Participant, RewardConfig};
use crate::error::{Error, Result};
use crate::features::FeatureConfig;
use crate::ope::{Baseline, OpeConfig};
use crate::synth::SynthConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    /// Participant whose speech is the environment.
    pub env_participant: Participant,
    /// Add role-swapped twins of every session.
    pub augment: bool,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            env_participant: Participant::A,
            augment: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    /// Seeds corpus generation and training.
    pub seed: u64,
    /// Held-out folds to evaluate; all when absent.
    pub folds: Option<Vec<usize>>,
    pub algorithms: Vec<Algorithm>,
    pub baseline: Baseline,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            folds: None,
            algorithms: vec![Algorithm::Nfq, Algorithm::BatchDqn],
            baseline: Baseline::Knn,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub features: FeatureConfig,
    pub reward: RewardConfig,
    pub dataset: DatasetConfig,
    pub train: TrainConfig,
    pub ope: OpeConfig,
    pub synth: SynthConfig,
    pub pipeline: PipelineConfig,
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self> {
        let config: Self =
            toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
        config.validate()?;
        Ok(config)
    }

    /// Reads and validates a config file.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(format!("reading config {}", path.display()), e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.features.validate()?;
        self.reward.validate()?;
        self.train.validate()?;
        self.ope.validate()?;
        self.synth.validate()?;
        if self.pipeline.algorithms.is_empty() {
            return Err(Error::Config(
                "pipeline.algorithms must not be empty".into(),
            ));
        }
        if (self.reward.frame_rate - self.features.frame_rate()).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "reward.frame_rate ({}) must match the feature frame rate ({})",
                self.reward.frame_rate,
                self.features.frame_rate()
            )));
        }
        Ok(())
    }

    pub fn ingest_options(&self) -> IngestOptions {
        IngestOptions {
            env_participant: self.dataset.env_participant,
            augment: self.dataset.augment,
            normalization: self.features.normalization,
            reward: self.reward.clone(),
        }
    }

    pub fn hash(&self) -> String {
        crate::manifest::config_hash(self)
    }
}
