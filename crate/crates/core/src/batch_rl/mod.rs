//! Offline trainers: neural fitted Q-iteration (NFQ) and batch-DQN with a
//! greedy-consistency filtered replay buffer.

mod buffer;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::TupleDataset;
use crate::error::{Error, Result};
use crate::qnet::{QLearner, QNetConfig, QParams, Sample, N_ACTIONS};

pub use buffer::{InsertEvent, ReplayBuffer};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    Nfq,
    BatchDqn,
}

impl std::str::FromStr for Algorithm {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nfq" => Ok(Self::Nfq),
            "batch-dqn" | "batch_dqn" | "dqn" => Ok(Self::BatchDqn),
            other => Err(Error::Validation(format!(
                "unknown algorithm {other:?} (expected nfq or batch-dqn)"
            ))),
        }
    }
}

/// Exploration rate decaying geometrically from `start` to `end` over the
/// epochs; the last epoch uses exactly `end`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EpsilonSchedule {
    pub start: f64,
    pub end: f64,
}

impl Default for EpsilonSchedule {
    fn default() -> Self {
        Self {
            start: 1.0,
            end: 0.05,
        }
    }
}

impl EpsilonSchedule {
    pub fn at(&self, epoch: usize, epochs: usize) -> f64 {
        if epochs <= 1 || epoch + 1 >= epochs {
            return self.end;
        }
        let frac = epoch as f64 / (epochs - 1) as f64;
        self.start * (self.end / self.start).powf(frac)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub gamma: f64,
    pub epochs: usize,
    pub minibatch: usize,
    /// Gradient steps between target-network syncs (batch-DQN).
    pub target_sync: usize,
    pub buffer_capacity: usize,
    /// Gradient steps per batch-DQN epoch; defaults to `|D| / minibatch`.
    pub steps_per_epoch: Option<usize>,
    /// Shuffled minibatch passes over the dataset per NFQ epoch.
    pub nfq_passes: usize,
    pub epsilon: EpsilonSchedule,
    /// Learning-rate factor applied after every epoch.
    pub lr_decay: f64,
    pub divergence_limit: f64,
    /// Compute the training-set residual every this many epochs (and always
    /// after the last one).
    pub residual_every: usize,
    pub seed: u64,
    pub qnet: QNetConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            epochs: 10,
            minibatch: 512,
            target_sync: 1000,
            buffer_capacity: 50_000,
            steps_per_epoch: None,
            nfq_passes: 1,
            epsilon: EpsilonSchedule::default(),
            lr_decay: 1.0,
            divergence_limit: 1e6,
            residual_every: 1,
            seed: 0,
            qnet: QNetConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.gamma >= 0.0 && self.gamma < 1.0) {
            return bad(format!(
                "train.gamma must lie in [0, 1), got {}",
                self.gamma
            ));
        }
        if self.epochs == 0 || self.minibatch == 0 || self.target_sync == 0 {
            return bad(
                "train.epochs, train.minibatch and train.target_sync must be positive".into(),
            );
        }
        if self.buffer_capacity < self.minibatch {
            return bad(format!(
                "train.buffer_capacity ({}) must be at least train.minibatch ({})",
                self.buffer_capacity, self.minibatch
            ));
        }
        if self.nfq_passes == 0 || self.residual_every == 0 || self.steps_per_epoch == Some(0) {
            return bad(
                "train.nfq_passes, train.residual_every and train.steps_per_epoch must be positive"
                    .into(),
            );
        }
        let EpsilonSchedule { start, end } = self.epsilon;
        if !(0.0 < end && end <= start && start <= 1.0) {
            return bad(format!(
                "train.epsilon needs 0 < end <= start <= 1, got {start} -> {end}"
            ));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return bad(format!(
                "train.lr_decay must lie in (0, 1], got {}",
                self.lr_decay
            ));
        }
        if !(self.divergence_limit > 0.0) {
            return bad("train.divergence_limit must be positive".into());
        }
        self.qnet.validate()
    }
}

/// Ties go to action 0.
pub fn greedy_action(q: &[f64; N_ACTIONS]) -> u8 {
    u8::from(q[1] > q[0])
}

/// Q-values of every state, per session.
pub fn state_q_values(params: &QParams, dataset: &TupleDataset) -> Vec<Vec<[f64; N_ACTIONS]>> {
    dataset
        .sessions()
        .iter()
        .map(|b| {
            (0..b.n_states())
                .into_par_iter()
                .map(|t| params.q_values(b.state(t)))
                .collect()
        })
        .collect()
}

/// Mean squared one-step Bellman error over the dataset.
pub fn bellman_residual(params: &QParams, dataset: &TupleDataset, gamma: f64) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let q = state_q_values(params, dataset);
    Ok(residual_from_cache(&q, dataset, gamma))
}

fn residual_from_cache(q: &[Vec<[f64; N_ACTIONS]>], dataset: &TupleDataset, gamma: f64) -> f64 {
    let mut sum = 0.0;
    for (b, qs) in dataset.sessions().iter().zip(q) {
        for t in 0..b.n_transitions() {
            let a = b.actions()[t] as usize;
            let r = b.rewards()[t + 1];
            let next = qs[t + 1][0].max(qs[t + 1][1]);
            let e = qs[t][a] - r - gamma * next;
            sum += e * e;
        }
    }
    sum / dataset.len() as f64
}

/// Per-epoch training record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub residual: Option<f64>,
    pub mean_loss: f64,
    pub gradient_steps: u64,
    pub epsilon: Option<f64>,
    pub offered: Option<u64>,
    pub accepted: Option<u64>,
    pub buffer_len: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub algorithm: Algorithm,
    pub n_transitions: usize,
    pub epochs: Vec<EpochStats>,
    pub final_residual: f64,
    pub gradient_steps: u64,
}

pub struct TrainOutput {
    pub params: QParams,
    pub report: TrainReport,
    /// Buffer of the batch-DQN run, with its insertion log.
    pub buffer: Option<ReplayBuffer>,
}

fn check_divergence(residual: f64, limit: f64) -> Result<()> {
    if !residual.is_finite() || residual > limit {
        return Err(Error::Diverged { residual, limit });
    }
    Ok(())
}

fn check_inputs(dataset: &TupleDataset, config: &TrainConfig) -> Result<()> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if dataset.dim() != config.qnet.input_dim {
        return Err(Error::DimensionMismatch {
            expected: config.qnet.input_dim,
            got: dataset.dim(),
        });
    }
    Ok(())
}

fn wants_residual(epoch: usize, config: &TrainConfig) -> bool {
    (epoch + 1).is_multiple_of(config.residual_every) || epoch + 1 == config.epochs
}

/// NFQ: each epoch freezes targets `r + gamma max_a' Q(s', a')` over the whole
/// dataset, then fits them with shuffled minibatch Adam passes.
pub fn nfq_train(dataset: &TupleDataset, config: &TrainConfig) -> Result<TrainOutput> {
    check_inputs(dataset, config)?;
    let mut learner = QLearner::new(&config.qnet, config.seed);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x6e66_7100);
    let n = dataset.len();
    let mut order: Vec<u32> = (0..n as u32).collect();
    let mut targets = vec![0.0; n];
    let mut epochs = Vec::with_capacity(config.epochs);
    let mut steps = 0u64;
    let mut final_residual = f64::NAN;
    for epoch in 0..config.epochs {
        let q = state_q_values(&learner.params, dataset);
        fill_targets(&q, dataset, config.gamma, &mut targets);
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for _ in 0..config.nfq_passes {
            order.shuffle(&mut rng);
            for chunk in order.chunks(config.minibatch) {
                let batch: Vec<Sample<'_>> = chunk
                    .iter()
                    .map(|&i| {
                        let tr = dataset.transition(i as usize);
                        Sample {
                            state: tr.s,
                            action: tr.a,
                            target: targets[i as usize],
                        }
                    })
                    .collect();
                loss_sum += learner.train_step(&batch);
                batches += 1;
                steps += 1;
            }
        }
        learner.adam.lr *= config.lr_decay;
        if !learner.params.is_finite() {
            return Err(Error::Diverged {
                residual: f64::NAN,
                limit: config.divergence_limit,
            });
        }
        let residual = if wants_residual(epoch, config) {
            let r = bellman_residual(&learner.params, dataset, config.gamma)?;
            check_divergence(r, config.divergence_limit)?;
            final_residual = r;
            Some(r)
        } else {
            None
        };
        log::info!("nfq epoch {epoch}: residual {residual:?}");
        epochs.push(EpochStats {
            epoch,
            residual,
            mean_loss: loss_sum / batches.max(1) as f64,
            gradient_steps: steps,
            epsilon: None,
            offered: None,
            accepted: None,
            buffer_len: None,
        });
    }
    Ok(TrainOutput {
        params: learner.params,
        report: TrainReport {
            algorithm: Algorithm::Nfq,
            n_transitions: n,
            epochs,
            final_residual,
            gradient_steps: steps,
        },
        buffer: None,
    })
}

fn fill_targets(q: &[Vec<[f64; N_ACTIONS]>], dataset: &TupleDataset, gamma: f64, out: &mut [f64]) {
    let mut i = 0;
    for (b, qs) in dataset.sessions().iter().zip(q) {
        for t in 0..b.n_transitions() {
            out[i] = b.rewards()[t + 1] + gamma * qs[t + 1][0].max(qs[t + 1][1]);
            i += 1;
        }
    }
}

/// Offers dataset transitions to the buffer: each is accepted when a fresh
/// uniform draw falls below `epsilon` or its logged action is greedy under
/// `params`. Returns the number accepted.
pub fn filter_insert(
    buffer: &mut ReplayBuffer,
    params: &QParams,
    dataset: &TupleDataset,
    candidates: &[u32],
    epsilon: f64,
    rng: &mut impl Rng,
) -> usize {
    let states: Vec<&[f32]> = candidates
        .iter()
        .map(|&i| dataset.transition(i as usize).s)
        .collect();
    let q = params.forward_batch(&states);
    let mut accepted = 0;
    for (&i, qv) in candidates.iter().zip(&q) {
        let u: f64 = rng.random();
        let logged = dataset.transition(i as usize).a;
        let greedy = greedy_action(qv);
        if u < epsilon || logged == greedy {
            buffer.push(i, u, logged, greedy);
            accepted += 1;
        }
    }
    accepted
}

/// Batch-DQN: every step samples a dataset minibatch, filters it into the
/// FIFO buffer, then takes one Adam step on a buffer minibatch against a
/// target network synced every `target_sync` steps.
pub fn batch_dqn_train(dataset: &TupleDataset, config: &TrainConfig) -> Result<TrainOutput> {
    batch_dqn_train_logged(dataset, config, false)
}

/// As [`batch_dqn_train`], optionally recording every buffer insertion.
pub fn batch_dqn_train_logged(
    dataset: &TupleDataset,
    config: &TrainConfig,
    log_inserts: bool,
) -> Result<TrainOutput> {
    check_inputs(dataset, config)?;
    let mut learner = QLearner::new(&config.qnet, config.seed);
    let mut target = learner.params.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x6471_6e00);
    let n = dataset.len();
    let mb = config.minibatch;
    let steps_per_epoch = config.steps_per_epoch.unwrap_or((n / mb).max(1));
    let mut buffer = ReplayBuffer::new(config.buffer_capacity, log_inserts);
    let mut epochs = Vec::with_capacity(config.epochs);
    let mut steps = 0u64;
    let mut final_residual = f64::NAN;
    let draw = |rng: &mut ChaCha8Rng| -> Vec<u32> {
        (0..mb).map(|_| rng.random_range(0..n as u32)).collect()
    };

    for epoch in 0..config.epochs {
        let eps = config.epsilon.at(epoch, config.epochs);
        let (mut offered, mut accepted) = (0u64, 0u64);
        let mut loss_sum = 0.0;
        for _ in 0..steps_per_epoch {
            // warm fill: an empty buffer is seeded without filtering
            while buffer.len() < mb {
                let c = draw(&mut rng);
                offered += c.len() as u64;
                accepted +=
                    filter_insert(&mut buffer, &learner.params, dataset, &c, 1.0, &mut rng) as u64;
            }
            let c = draw(&mut rng);
            offered += c.len() as u64;
            accepted +=
                filter_insert(&mut buffer, &learner.params, dataset, &c, eps, &mut rng) as u64;

            let picks = buffer.sample(mb, &mut rng);
            let next: Vec<&[f32]> = picks
                .iter()
                .map(|&i| dataset.transition(i as usize).s_next)
                .collect();
            let q_next = target.forward_batch(&next);
            let batch: Vec<Sample<'_>> = picks
                .iter()
                .zip(&q_next)
                .map(|(&i, qn)| {
                    let tr = dataset.transition(i as usize);
                    Sample {
                        state: tr.s,
                        action: tr.a,
                        target: tr.r + config.gamma * qn[0].max(qn[1]),
                    }
                })
                .collect();
            loss_sum += learner.train_step(&batch);
            steps += 1;
            if steps.is_multiple_of(config.target_sync as u64) {
                target = learner.params.clone();
            }
        }
        learner.adam.lr *= config.lr_decay;
        if !learner.params.is_finite() {
            return Err(Error::Diverged {
                residual: f64::NAN,
                limit: config.divergence_limit,
            });
        }
        let residual = if wants_residual(epoch, config) {
            let r = bellman_residual(&learner.params, dataset, config.gamma)?;
            check_divergence(r, config.divergence_limit)?;
            final_residual = r;
            Some(r)
        } else {
            None
        };
        log::info!(
            "batch-dqn epoch {epoch}: eps {eps:.4}, accepted {accepted}/{offered}, residual {residual:?}"
        );
        epochs.push(EpochStats {
            epoch,
            residual,
            mean_loss: loss_sum / steps_per_epoch as f64,
            gradient_steps: steps,
            epsilon: Some(eps),
            offered: Some(offered),
            accepted: Some(accepted),
            buffer_len: Some(buffer.len()),
        });
    }
    Ok(TrainOutput {
        params: learner.params,
        report: TrainReport {
            algorithm: Algorithm::BatchDqn,
            n_transitions: n,
            epochs,
            final_residual,
            gradient_steps: steps,
        },
        buffer: Some(buffer),
    })
}

pub fn train(
    algorithm: Algorithm,
    dataset: &TupleDataset,
    config: &TrainConfig,
) -> Result<TrainOutput> {
    match algorithm {
        Algorithm::Nfq => nfq_train(dataset, config),
        Algorithm::BatchDqn => batch_dqn_train(dataset, config),
    }
}
