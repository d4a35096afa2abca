//! Off-policy evaluation of learned backchannel policies on logged data.

pub mod durations;
pub mod knn;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::batch_rl::greedy_action;
use crate::dataset::TupleDataset;
use crate::error::{Error, Result};
use crate::qnet::QParams;

pub use durations::{duration_stats, laugh_runs, symmetric_kl, DurationHistogram, DurationStats};
pub use knn::{KnnConfig, KnnPolicy};

pub const P_FLOOR: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyTag {
    BehaviorKnn,
    SoftenedGreedy,
    Uniform,
}

/// Maps a state to `(p(a=0|s), p(a=1|s))`.
#[derive(Debug, Clone)]
pub enum PolicySpec {
    BehaviorKnn(KnnPolicy),
    SoftenedGreedy { params: QParams, p: f64 },
    Uniform,
}

impl PolicySpec {
    pub fn tag(&self) -> PolicyTag {
        match self {
            PolicySpec::BehaviorKnn(_) => PolicyTag::BehaviorKnn,
            PolicySpec::SoftenedGreedy { .. } => PolicyTag::SoftenedGreedy,
            PolicySpec::Uniform => PolicyTag::Uniform,
        }
    }

    pub fn probs(&self, s: &[f32]) -> [f64; 2] {
        match self {
            PolicySpec::BehaviorKnn(knn) => knn.probs(s),
            PolicySpec::SoftenedGreedy { params, p } => soften(&params.q_values(s), *p),
            PolicySpec::Uniform => [0.5, 0.5],
        }
    }

    /// Action probabilities for every state of every session.
    pub fn table(&self, dataset: &TupleDataset) -> Vec<Vec<[f64; 2]>> {
        dataset
            .sessions()
            .iter()
            .map(|b| {
                (0..b.n_states())
                    .into_par_iter()
                    .map(|t| self.probs(b.state(t)))
                    .collect()
            })
            .collect()
    }
}

/// `p` on the greedy action (ties to action 0), `1 - p` on the other.
pub fn soften(q: &[f64; 2], p: f64) -> [f64; 2] {
    if greedy_action(q) == 0 {
        [p, 1.0 - p]
    } else {
        [1.0 - p, p]
    }
}

pub fn soften_greedy(params: QParams, p: f64) -> Result<PolicySpec> {
    if !(p > 0.5 && p < 1.0) {
        return Err(Error::Validation(format!(
            "softening probability must lie in (0.5, 1), got {p}"
        )));
    }
    Ok(PolicySpec::SoftenedGreedy { params, p })
}

pub fn estimate_behavior_policy(dataset: &TupleDataset, config: &KnnConfig) -> Result<PolicySpec> {
    Ok(PolicySpec::BehaviorKnn(KnnPolicy::fit(dataset, config)?))
}

/// `len` consecutive transitions of one session starting at `start`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OpeTrajectory {
    pub session: usize,
    pub start: usize,
    pub len: usize,
}

/// Sliding windows over each session's transitions; shorter sessions
/// contribute nothing.
pub fn make_trajectories(dataset: &TupleDataset, len: usize, shift: usize) -> Vec<OpeTrajectory> {
    assert!(
        len > 0 && shift > 0,
        "trajectory length and shift must be positive"
    );
    let mut out = Vec::new();
    for (si, b) in dataset.sessions().iter().enumerate() {
        let n = b.n_transitions();
        if n < len {
            log::debug!("session {} too short for trajectories of {len}", b.key());
            continue;
        }
        out.extend((0..=n - len).step_by(shift).map(|start| OpeTrajectory {
            session: si,
            start,
            len,
        }));
    }
    out
}

/// One trajectory in estimator form: per-step likelihood ratios of the taken
/// action and the rewards.
#[derive(Debug, Clone, PartialEq)]
pub struct RatioTrajectory {
    pub ratios: Vec<f64>,
    pub rewards: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WisEstimate {
    pub value: f64,
    pub n_trajectories: usize,
    pub horizon: usize,
}

/// Normalized step weights `rho_t^(i) / sum_j rho_t^(j)`, indexed `[t][i]`.
/// Computed in log space with a per-step shift, so long products do not
/// underflow. Trajectories must share one length.
pub fn step_weights(trajectories: &[RatioTrajectory]) -> Vec<Vec<f64>> {
    let horizon = trajectories
        .iter()
        .map(|t| t.ratios.len())
        .max()
        .unwrap_or(0);
    let mut log_rho = vec![0.0; trajectories.len()];
    let mut out = Vec::with_capacity(horizon);
    for t in 0..horizon {
        for (lr, tr) in log_rho.iter_mut().zip(trajectories) {
            *lr += tr.ratios[t].ln();
        }
        let m = log_rho.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let w: Vec<f64> = log_rho.iter().map(|&l| (l - m).exp()).collect();
        let total: f64 = w.iter().sum();
        out.push(w.into_iter().map(|x| x / total).collect());
    }
    out
}

/// Step-wise weighted importance sampling:
/// `sum_t gamma^t sum_i w_t^(i) r_t^(i)` with per-step normalized cumulative
/// ratios. All trajectories must share one length.
pub fn step_wis_ratios(trajectories: &[RatioTrajectory], gamma: f64) -> Result<WisEstimate> {
    let Some(first) = trajectories.first() else {
        return Err(Error::EmptyDataset);
    };
    let horizon = first.ratios.len();
    if trajectories
        .iter()
        .any(|t| t.ratios.len() != horizon || t.rewards.len() != horizon)
    {
        return Err(Error::Validation(
            "trajectories must share one length".into(),
        ));
    }
    if trajectories
        .iter()
        .flat_map(|t| &t.ratios)
        .any(|&r| !(r > 0.0 && r.is_finite()))
    {
        return Err(Error::Validation(
            "likelihood ratios must be positive and finite".into(),
        ));
    }
    let n = trajectories.len();
    let all_one = trajectories
        .iter()
        .flat_map(|t| &t.ratios)
        .all(|&r| r == 1.0);
    let mut value = 0.0;
    let mut discount = 1.0;
    if all_one {
        // Equal weights reduce to the Monte Carlo mean; summed in the same
        // order as `mean_discounted_return` so the two agree bitwise.
        let total: f64 = trajectories
            .iter()
            .map(|tr| discounted_sum(tr.rewards.iter().copied(), gamma))
            .sum();
        value = total / n as f64;
    } else {
        let weights = step_weights(trajectories);
        for (t, w) in weights.iter().enumerate() {
            let step: f64 = w
                .iter()
                .zip(trajectories)
                .map(|(w, tr)| w * tr.rewards[t])
                .sum();
            value += discount * step;
            discount *= gamma;
        }
    }
    Ok(WisEstimate {
        value,
        n_trajectories: n,
        horizon,
    })
}

/// Step-WIS of `pi` from data logged under `pi_b` (both as per-state tables
/// from [`PolicySpec::table`]). Errors when a behavior probability of a taken
/// action falls below the floor.
pub fn step_wis(
    dataset: &TupleDataset,
    trajectories: &[OpeTrajectory],
    pi: &[Vec<[f64; 2]>],
    pi_b: &[Vec<[f64; 2]>],
    gamma: f64,
    floor: f64,
) -> Result<WisEstimate> {
    for (si, b) in dataset.sessions().iter().enumerate() {
        for t in 0..b.n_transitions() {
            let pb = pi_b[si][t][b.actions()[t] as usize];
            if pb < floor {
                return Err(Error::BelowFloor { p: pb, floor });
            }
        }
    }
    let trs: Vec<RatioTrajectory> = trajectories
        .iter()
        .map(|tr| {
            let b = &dataset.sessions()[tr.session];
            let steps = tr.start..tr.start + tr.len;
            RatioTrajectory {
                ratios: steps
                    .clone()
                    .map(|t| {
                        let a = b.actions()[t] as usize;
                        pi[tr.session][t][a] / pi_b[tr.session][t][a]
                    })
                    .collect(),
                rewards: steps.map(|t| b.rewards()[t + 1]).collect(),
            }
        })
        .collect();
    step_wis_ratios(&trs, gamma)
}

/// Mean discounted return of the logged data over the given windows.
pub fn mean_discounted_return(
    dataset: &TupleDataset,
    trajectories: &[OpeTrajectory],
    gamma: f64,
) -> f64 {
    let total: f64 = trajectories
        .iter()
        .map(|tr| {
            let b = &dataset.sessions()[tr.session];
            discounted_sum(
                b.rewards()[tr.start + 1..tr.start + tr.len + 1]
                    .iter()
                    .copied(),
                gamma,
            )
        })
        .sum();
    total / trajectories.len().max(1) as f64
}

fn discounted_sum(rewards: impl Iterator<Item = f64>, gamma: f64) -> f64 {
    let mut d = 1.0;
    let mut g = 0.0;
    for r in rewards {
        g += d * r;
        d *= gamma;
    }
    g
}

/// Greedy actions frame by frame over each session, then laugh runs.
pub fn policy_rollout_durations(
    params: &QParams,
    dataset: &TupleDataset,
    frame_rate: f64,
) -> Vec<f64> {
    dataset
        .sessions()
        .iter()
        .flat_map(|b| {
            let actions: Vec<u8> = (0..b.n_states())
                .into_par_iter()
                .map(|t| greedy_action(&params.q_values(b.state(t))))
                .collect();
            laugh_runs(&actions, frame_rate)
        })
        .collect()
}

/// Laugh runs of the logged actions.
pub fn logged_durations(dataset: &TupleDataset, frame_rate: f64) -> Vec<f64> {
    dataset
        .sessions()
        .iter()
        .flat_map(|b| laugh_runs(b.actions(), frame_rate))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OpeConfig {
    pub gamma: f64,
    pub horizon: usize,
    pub shift: usize,
    /// Window for the secondary discounted-return estimates.
    pub return_horizon: usize,
    pub softening: f64,
    pub p_floor: f64,
    pub knn: KnnConfig,
}

impl Default for OpeConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            horizon: 100,
            shift: 1,
            return_horizon: 250,
            softening: 0.9,
            p_floor: P_FLOOR,
            knn: KnnConfig::default(),
        }
    }
}

impl OpeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::Config(format!(
                "ope.gamma must lie in [0, 1), got {}",
                self.gamma
            )));
        }
        if self.horizon == 0 || self.shift == 0 || self.return_horizon == 0 {
            return Err(Error::Config(
                "ope.horizon, ope.shift and ope.return_horizon must be positive".into(),
            ));
        }
        if !(self.softening > 0.5 && self.softening < 1.0) {
            return Err(Error::Config(format!(
                "ope.softening must lie in (0.5, 1), got {}",
                self.softening
            )));
        }
        if !(self.p_floor > 0.0 && self.p_floor < 0.5) {
            return Err(Error::Config(format!(
                "ope.p_floor must lie in (0, 0.5), got {}",
                self.p_floor
            )));
        }
        self.knn.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyValue {
    pub policy: PolicyTag,
    pub step_wis: f64,
    pub step_wis_return_horizon: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpeReport {
    pub n_trajectories: usize,
    pub n_trajectories_return_horizon: usize,
    pub behavior: PolicyValue,
    pub target: PolicyValue,
    /// Plain mean discounted return of the logged data.
    pub logged_return: f64,
    pub logged_return_return_horizon: Option<f64>,
    pub config: OpeConfig,
}

/// Behavior policy choice for evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Baseline {
    #[default]
    Knn,
    Uniform,
}

impl std::str::FromStr for Baseline {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "knn" => Ok(Self::Knn),
            "uniform" => Ok(Self::Uniform),
            other => Err(Error::Validation(format!(
                "baseline must be knn or uniform, got {other:?}"
            ))),
        }
    }
}

/// A policy evaluated once on every state of a dataset.
#[derive(Debug, Clone)]
pub struct PolicyTable {
    pub tag: PolicyTag,
    pub probs: Vec<Vec<[f64; 2]>>,
}

impl PolicyTable {
    pub fn new(spec: &PolicySpec, dataset: &TupleDataset) -> Self {
        Self {
            tag: spec.tag(),
            probs: spec.table(dataset),
        }
    }

    /// The behavior policy of `dataset` under the chosen baseline.
    pub fn behavior(dataset: &TupleDataset, baseline: Baseline, knn: &KnnConfig) -> Result<Self> {
        let spec = match baseline {
            Baseline::Knn => estimate_behavior_policy(dataset, knn)?,
            Baseline::Uniform => PolicySpec::Uniform,
        };
        Ok(Self::new(&spec, dataset))
    }
}

/// Values of the softened greedy policy of `params` and of the behavior
/// policy itself, both estimated against the behavior policy.
pub fn evaluate(
    dataset: &TupleDataset,
    params: &QParams,
    behavior: &PolicyTable,
    config: &OpeConfig,
) -> Result<OpeReport> {
    config.validate()?;
    let target = PolicyTable::new(&soften_greedy(params.clone(), config.softening)?, dataset);
    let pi_b = &behavior.probs;
    let short = make_trajectories(dataset, config.horizon, config.shift);
    let long = make_trajectories(dataset, config.return_horizon, config.shift);
    if short.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let est = |trs: &[OpeTrajectory], p: &[Vec<[f64; 2]>]| -> Result<Option<f64>> {
        if trs.is_empty() {
            return Ok(None);
        }
        Ok(Some(
            step_wis(dataset, trs, p, pi_b, config.gamma, config.p_floor)?.value,
        ))
    };
    Ok(OpeReport {
        n_trajectories: short.len(),
        n_trajectories_return_horizon: long.len(),
        behavior: PolicyValue {
            policy: behavior.tag.clone(),
            step_wis: est(&short, pi_b)?.expect("nonempty"),
            step_wis_return_horizon: est(&long, pi_b)?,
        },
        target: PolicyValue {
            policy: target.tag.clone(),
            step_wis: est(&short, &target.probs)?.expect("nonempty"),
            step_wis_return_horizon: est(&long, &target.probs)?,
        },
        logged_return: mean_discounted_return(dataset, &short, config.gamma),
        logged_return_return_horizon: (!long.is_empty())
            .then(|| mean_discounted_return(dataset, &long, config.gamma)),
        config: config.clone(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NaturalnessReport {
    pub behavior: Option<DurationStats>,
    pub policy: Option<DurationStats>,
    pub symmetric_kl: f64,
    pub behavior_histogram: DurationHistogram,
    pub policy_histogram: DurationHistogram,
}

pub fn naturalness(
    params: &QParams,
    dataset: &TupleDataset,
    frame_rate: f64,
) -> Result<NaturalnessReport> {
    let human = logged_durations(dataset, frame_rate);
    let agent = policy_rollout_durations(params, dataset, frame_rate);
    let hb = DurationHistogram::new(&human);
    let ha = DurationHistogram::new(&agent);
    Ok(NaturalnessReport {
        behavior: duration_stats(&human).ok(),
        policy: duration_stats(&agent).ok(),
        symmetric_kl: symmetric_kl(&ha, &hb)?,
        behavior_histogram: hb,
        policy_histogram: ha,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{DatasetBuilder, SessionBlock};
    use crate::engagement::Participant;

    fn dataset(lengths: &[usize]) -> TupleDataset {
        let mut b = DatasetBuilder::new(1, "t");
        for (i, &n) in lengths.iter().enumerate() {
            b.push_block(
                SessionBlock::new(
                    format!("s{i}"),
                    format!("p{i}"),
                    Participant::A,
                    40,
                    1,
                    (0..n).map(|t| t as f32).collect(),
                    (0..n).map(|t| (t % 3 == 0) as u8).collect(),
                    (0..n).map(|t| t as f64 * 0.01).collect(),
                )
                .unwrap(),
            )
            .unwrap();
        }
        b.build()
    }

    #[test]
    fn trajectory_counts() {
        assert_eq!(make_trajectories(&dataset(&[151]), 100, 1).len(), 51);
        assert_eq!(make_trajectories(&dataset(&[100]), 100, 1).len(), 0);
        assert_eq!(
            make_trajectories(&dataset(&[151, 121]), 100, 1).len(),
            51 + 21
        );
        let trs = make_trajectories(&dataset(&[151, 121]), 100, 1);
        assert!(trs
            .iter()
            .all(|t| t.start + t.len <= if t.session == 0 { 150 } else { 120 }));
    }

    #[test]
    fn softening_rule() {
        assert_eq!(soften(&[1.0, 0.0], 0.9), [0.9, 1.0 - 0.9]);
        assert_eq!(soften(&[0.0, 1.0], 0.9), [1.0 - 0.9, 0.9]);
        assert_eq!(soften(&[0.5, 0.5], 0.9), [0.9, 1.0 - 0.9]);
        assert!(soften_greedy(QParams::init(&[1, 2], 0), 0.4).is_err());
    }

    #[test]
    fn hand_expanded_two_trajectories() {
        // rho for trajectory 1: 2, 2*0.5 = 1; trajectory 2: 0.5, 0.5*4 = 2
        let trs = vec![
            RatioTrajectory {
                ratios: vec![2.0, 0.5],
                rewards: vec![1.0, 3.0],
            },
            RatioTrajectory {
                ratios: vec![0.5, 4.0],
                rewards: vec![2.0, 0.0],
            },
        ];
        let g = 0.9;
        let step0 = (2.0 * 1.0 + 0.5 * 2.0) / 2.5;
        let step1 = (1.0 * 3.0 + 2.0 * 0.0) / 3.0;
        let v = step_wis_ratios(&trs, g).unwrap().value;
        assert!((v - (step0 + g * step1)).abs() < 1e-14);
    }

    #[test]
    fn on_policy_equals_monte_carlo() {
        let ds = dataset(&[300, 260]);
        let trs = make_trajectories(&ds, 100, 1);
        let pb = PolicySpec::Uniform.table(&ds);
        let v = step_wis(&ds, &trs, &pb, &pb, 0.99, P_FLOOR).unwrap().value;
        let mc = mean_discounted_return(&ds, &trs, 0.99);
        assert_eq!(v, mc);
    }

    #[test]
    fn floor_enforced() {
        let ds = dataset(&[150]);
        let trs = make_trajectories(&ds, 100, 1);
        let bad: Vec<Vec<[f64; 2]>> = vec![vec![[0.995, 0.005]; 150]];
        let pi = PolicySpec::Uniform.table(&ds);
        assert!(matches!(
            step_wis(&ds, &trs, &pi, &bad, 0.99, P_FLOOR),
            Err(Error::BelowFloor { .. })
        ));
    }

    #[test]
    fn rollout_durations_follow_greedy() {
        let ds = dataset(&[120, 80]);
        let zero = QParams::init(&[1, 2], 0).zeros_like();
        assert!(policy_rollout_durations(&zero, &ds, 40.0).is_empty());
        let mut ones = zero.clone();
        ones.layers[0].biases[1] = 1.0;
        assert_eq!(policy_rollout_durations(&ones, &ds, 40.0), vec![3.0, 2.0]);
    }
}
