//! Synthetic dyadic corpus with a known-best backchannel policy.
//!
//! Two participants alternate turns. From a channel's point of view the
//! regime is *speaking* during its own turn, *post-utterance* in the gap after
//! it and *pausing* otherwise (the partner's turn and gap). Listener laughs
//! start with a per-tick probability that depends on the speaker's regime. A
//! laugh in the post-utterance regime triggers extra backchannels from the
//! speaker; a laugh elsewhere suppresses the baseline events that follow.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Geometric, Poisson, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::ingest::{
    session_from_parts, write_session_index, IngestOptions, SessionInfo, SESSION_INDEX,
};
use crate::dataset::SessionRecord;
use crate::engagement::io::write_annotations;
use crate::engagement::{AnnotationKind, BackchannelKind, EventAnnotation, Participant};
use crate::error::{Error, Result};
use crate::features::io::write_features;
use crate::features::{summarize_stream, BaseFeatureFrame, StateVector, BASE_DIM};
use crate::manifest::config_hash;

pub const FRAME_RATE: f64 = 40.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    Speaking = 0,
    Pausing = 1,
    PostUtterance = 2,
}

impl Regime {
    pub const ALL: [Regime; 3] = [Regime::Speaking, Regime::Pausing, Regime::PostUtterance];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub n_pairs: usize,
    pub sessions_per_pair: usize,
    pub duration_s: f64,
    /// Mean turn length.
    pub speaking_mean_s: f64,
    /// Mean gap after a turn before the partner starts.
    pub post_mean_s: f64,
    /// Per-tick laugh onset probability of the listener, indexed by the
    /// speaker's regime `[speaking, pausing, post_utterance]`.
    pub laugh_onset_prob: [f64; 3],
    pub laugh_mean_s: f64,
    /// Rate of spontaneous connection events (nods, smiles, mutual gaze).
    pub baseline_ce_rate_hz: f64,
    /// Expected extra backchannels after a post-utterance laugh.
    pub post_laugh_boost: f64,
    /// Probability that a baseline event following an off-regime laugh is lost.
    pub off_regime_suppression: f64,
    pub effect_window_s: f64,
    pub feature_separation: f64,
    pub feature_noise: f64,
    /// Discount of the regime-level MDP.
    pub gamma: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_pairs: 5,
            sessions_per_pair: 4,
            duration_s: 300.0,
            speaking_mean_s: 3.0,
            post_mean_s: 1.0,
            laugh_onset_prob: [0.004, 0.002, 0.02],
            laugh_mean_s: 0.95,
            baseline_ce_rate_hz: 0.3,
            post_laugh_boost: 2.0,
            off_regime_suppression: 0.7,
            effect_window_s: 8.0,
            feature_separation: 1.0,
            feature_noise: 1.0,
            gamma: 0.99,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n_pairs == 0 || self.sessions_per_pair == 0 {
            return bad("synth.n_pairs and synth.sessions_per_pair must be positive".into());
        }
        if !(self.duration_s >= 2.0) {
            return bad(format!(
                "synth.duration_s must be at least 2, got {}",
                self.duration_s
            ));
        }
        for (name, v) in [
            ("speaking_mean_s", self.speaking_mean_s),
            ("post_mean_s", self.post_mean_s),
            ("laugh_mean_s", self.laugh_mean_s),
            ("effect_window_s", self.effect_window_s),
        ] {
            if !(v * FRAME_RATE >= 1.0) || !v.is_finite() {
                return bad(format!("synth.{name} must be at least one tick, got {v}"));
            }
        }
        for (name, v) in [
            (
                "laugh_onset_prob",
                self.laugh_onset_prob.iter().copied().fold(0.0, f64::max),
            ),
            (
                "laugh_onset_prob",
                self.laugh_onset_prob.iter().copied().fold(1.0, f64::min),
            ),
            ("off_regime_suppression", self.off_regime_suppression),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return bad(format!("synth.{name} must lie in [0, 1], got {v}"));
            }
        }
        for (name, v) in [
            ("baseline_ce_rate_hz", self.baseline_ce_rate_hz),
            ("post_laugh_boost", self.post_laugh_boost),
            ("feature_separation", self.feature_separation),
            ("feature_noise", self.feature_noise),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return bad(format!("synth.{name} must be nonnegative, got {v}"));
            }
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return bad(format!(
                "synth.gamma must lie in [0, 1), got {}",
                self.gamma
            ));
        }
        Ok(())
    }

    pub fn n_sessions(&self) -> usize {
        self.n_pairs * self.sessions_per_pair
    }

    pub fn n_ticks(&self) -> usize {
        (self.duration_s * FRAME_RATE).round() as usize
    }

    /// Expected regime dwell times `[speaking, pausing, post]`; a pause spans
    /// the partner's turn and gap.
    pub fn dwell_means(&self) -> [f64; 3] {
        [
            self.speaking_mean_s,
            self.speaking_mean_s + self.post_mean_s,
            self.post_mean_s,
        ]
    }

    /// Expected change in connection-event count caused by one laugh onset
    /// in each regime (the laugh itself counts as one).
    pub fn laugh_effect(&self) -> [f64; 3] {
        let lost = self.off_regime_suppression * self.baseline_ce_rate_hz * self.effect_window_s;
        [1.0 - lost, 1.0 - lost, 1.0 + self.post_laugh_boost]
    }
}

/// Regime means of the base features; distinct, fixed directions.
pub fn regime_feature_mean(regime: Regime, dim: usize) -> f64 {
    let g = regime as usize as f64;
    (2.0 * PI * (g + 1.0) * dim as f64 / BASE_DIM as f64 + g).cos()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSession {
    pub info: SessionInfo,
    /// Base frames of participants A and B.
    pub frames: [Vec<BaseFeatureFrame>; 2],
    /// Per-tick regime of each participant's channel.
    pub regimes: [Vec<Regime>; 2],
    pub annotations: Vec<EventAnnotation>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthCorpus {
    pub config: SynthConfig,
    pub sessions: Vec<SynthSession>,
}

fn idx(p: Participant) -> usize {
    p as usize
}

fn geometric_ticks(mean_s: f64, rng: &mut impl Rng) -> usize {
    let p = (1.0 / (mean_s * FRAME_RATE)).min(1.0);
    1 + Geometric::new(p).expect("valid probability").sample(rng) as usize
}

fn backchannel(
    kind: BackchannelKind,
    who: Participant,
    start: f64,
    duration: f64,
) -> Option<EventAnnotation> {
    let end = (start + 0.4).min(duration);
    (end - start > 0.01)
        .then(|| EventAnnotation::new(AnnotationKind::Backchannel(kind), who, start, end))
}

fn generate_session(config: &SynthConfig, index: usize, seed: u64) -> SynthSession {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64 + 1);
    let n = config.n_ticks();
    let duration = n as f64 / FRAME_RATE;
    let pair = index / config.sessions_per_pair;
    let info = SessionInfo {
        session_id: format!("pair{pair}_s{}", index % config.sessions_per_pair),
        subject_pair_id: format!("pair{pair}"),
        duration_s: duration,
    };

    // turns and regimes
    let mut regimes = [vec![Regime::Pausing; n], vec![Regime::Pausing; n]];
    let mut annotations = Vec::new();
    let mut speaker = if rng.random_bool(0.5) {
        Participant::A
    } else {
        Participant::B
    };
    let mut t = 0;
    while t < n {
        let end = (t + geometric_ticks(config.speaking_mean_s, &mut rng)).min(n);
        regimes[idx(speaker)][t..end].fill(Regime::Speaking);
        annotations.push(EventAnnotation::new(
            AnnotationKind::Turn,
            speaker,
            t as f64 / FRAME_RATE,
            end as f64 / FRAME_RATE,
        ));
        t = end;
        let end = (t + geometric_ticks(config.post_mean_s, &mut rng)).min(n);
        regimes[idx(speaker)][t..end].fill(Regime::PostUtterance);
        t = end;
        speaker = speaker.other();
    }

    // listener laughs, conditioned on the speaker's regime
    let mut onsets: Vec<(f64, Participant, Regime)> = Vec::new();
    for listener in [Participant::A, Participant::B] {
        let speaker_regime = &regimes[idx(listener.other())];
        let mut t = 0;
        while t < n {
            let g = speaker_regime[t];
            if rng.random_bool(config.laugh_onset_prob[g as usize]) {
                let end = (t + geometric_ticks(config.laugh_mean_s, &mut rng)).min(n);
                annotations.push(EventAnnotation::new(
                    AnnotationKind::Backchannel(BackchannelKind::Laugh),
                    listener,
                    t as f64 / FRAME_RATE,
                    end as f64 / FRAME_RATE,
                ));
                onsets.push((t as f64 / FRAME_RATE, listener, g));
                t = end + 1;
            } else {
                t += 1;
            }
        }
    }

    // baseline engagement, thinned after off-regime laughs
    let w = config.effect_window_s;
    let suppressed = |u: f64| {
        onsets
            .iter()
            .any(|&(tau, _, g)| g != Regime::PostUtterance && u > tau && u <= tau + w)
    };
    if config.baseline_ce_rate_hz > 0.0 {
        let gap = Exp::new(config.baseline_ce_rate_hz).expect("positive rate");
        let mut u = gap.sample(&mut rng);
        while u < duration - 0.05 {
            let who = if rng.random_bool(0.5) {
                Participant::A
            } else {
                Participant::B
            };
            let kind = rng.random_range(0..3u8);
            let drop = suppressed(u) && rng.random_bool(config.off_regime_suppression);
            if !drop {
                match kind {
                    0 => annotations.extend(backchannel(BackchannelKind::Nod, who, u, duration)),
                    1 => annotations.extend(backchannel(BackchannelKind::Smile, who, u, duration)),
                    _ => {
                        // mutual gaze: the overlap starts at u
                        let end = (u + 0.8).min(duration);
                        if end - u >= 0.15 {
                            annotations.push(EventAnnotation::new(
                                AnnotationKind::GazeAtPartner,
                                who.other(),
                                (u - 0.3).max(0.0),
                                end,
                            ));
                            annotations.push(EventAnnotation::new(
                                AnnotationKind::GazeAtPartner,
                                who,
                                u,
                                end,
                            ));
                        }
                    }
                }
            }
            u += gap.sample(&mut rng);
        }
    }

    // engagement boost after well-timed laughs
    if config.post_laugh_boost > 0.0 {
        let boost = Poisson::new(config.post_laugh_boost).expect("positive mean");
        for &(tau, laugher, g) in &onsets {
            if g != Regime::PostUtterance {
                continue;
            }
            let k = boost.sample(&mut rng) as usize;
            for _ in 0..k {
                let u = tau + rng.random_range(0.0..w);
                let kind = if rng.random_bool(0.5) {
                    BackchannelKind::Nod
                } else {
                    BackchannelKind::Smile
                };
                if u < duration - 0.05 {
                    annotations.extend(backchannel(kind, laugher.other(), u, duration));
                }
            }
        }
    }
    annotations.sort_by(|a, b| a.start.total_cmp(&b.start));

    // regime-driven base features
    let frames = [0, 1].map(|c| {
        regimes[c]
            .iter()
            .enumerate()
            .map(|(t, &g)| {
                let mut values = [0.0; BASE_DIM];
                for (d, v) in values.iter_mut().enumerate() {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    *v = config.feature_separation * regime_feature_mean(g, d)
                        + config.feature_noise * z;
                }
                BaseFeatureFrame {
                    values,
                    timestamp: t as f64 / FRAME_RATE,
                }
            })
            .collect()
    });

    SynthSession {
        info,
        frames,
        regimes,
        annotations,
    }
}

/// Deterministic in `(config, seed)`; sessions are generated in parallel
/// from per-session streams of the seed.
pub fn generate_corpus(config: &SynthConfig, seed: u64) -> Result<SynthCorpus> {
    config.validate()?;
    let sessions = (0..config.n_sessions())
        .into_par_iter()
        .map(|i| generate_session(config, i, seed))
        .collect();
    Ok(SynthCorpus {
        config: config.clone(),
        sessions,
    })
}

/// Where [`write_corpus`] put things.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusLayout {
    pub features: PathBuf,
    pub annotations: PathBuf,
}

impl CorpusLayout {
    pub fn under(dir: &Path) -> Self {
        Self {
            features: dir.join("features"),
            annotations: dir.join("annotations"),
        }
    }
}

pub fn frames_to_states(frames: &[BaseFeatureFrame]) -> Vec<StateVector> {
    summarize_stream(frames, FRAME_RATE)
}

impl SynthCorpus {
    /// Session records built in memory, equivalent to writing the corpus and
    /// ingesting it.
    pub fn records(&self, opts: &IngestOptions) -> Result<Vec<SessionRecord>> {
        self.sessions
            .par_iter()
            .map(|s| {
                let env = idx(opts.env_participant);
                session_from_parts(
                    &s.info,
                    frames_to_states(&s.frames[env]),
                    Some(frames_to_states(&s.frames[1 - env])),
                    &s.annotations,
                    opts,
                )
            })
            .collect()
    }

    /// Writes base-frame feature CSVs, annotation JSONL and the session index
    /// in the layout read by ingestion.
    pub fn write(&self, dir: &Path) -> Result<CorpusLayout> {
        let layout = CorpusLayout::under(dir);
        for d in [&layout.features, &layout.annotations] {
            fs::create_dir_all(d).map_err(|e| Error::io(format!("creating {}", d.display()), e))?;
        }
        let hash = config_hash(&self.config);
        let infos: Vec<SessionInfo> = self.sessions.iter().map(|s| s.info.clone()).collect();
        write_session_index(&layout.annotations.join(SESSION_INDEX), &infos)?;
        self.sessions.par_iter().try_for_each(|s| -> Result<()> {
            for p in [Participant::A, Participant::B] {
                let rows: Vec<StateVector> = s.frames[idx(p)]
                    .iter()
                    .map(|f| StateVector {
                        values: f.values.to_vec(),
                        timestamp: f.timestamp,
                    })
                    .collect();
                let path =
                    layout
                        .features
                        .join(format!("{}_{}.csv", s.info.session_id, p.as_str()));
                write_features(&path, &rows, &hash)?;
            }
            write_annotations(
                &layout
                    .annotations
                    .join(format!("{}.jsonl", s.info.session_id)),
                &s.annotations,
            )
        })?;
        Ok(layout)
    }
}

/// Run lengths of each regime over the whole corpus (channel A), in seconds.
pub fn dwell_times(corpus: &SynthCorpus) -> [Vec<f64>; 3] {
    let mut out: [Vec<f64>; 3] = Default::default();
    for s in &corpus.sessions {
        let r = &s.regimes[0];
        let mut start = 0;
        for t in 1..=r.len() {
            if t == r.len() || r[t] != r[start] {
                // runs touching the session edges are censored
                if start > 0 && t < r.len() {
                    out[r[start] as usize].push((t - start) as f64 / FRAME_RATE);
                }
                start = t;
            }
        }
    }
    out
}
