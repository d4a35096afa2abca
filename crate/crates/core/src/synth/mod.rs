//! Ground truth: tabular MDPs solved exactly, the synthetic corpus and test
//! tones.

pub mod corpus;
pub mod mdp;

use crate::error::{Error, Result};
use crate::features::AudioClip;

pub use corpus::{generate_corpus, CorpusLayout, Regime, SynthConfig, SynthCorpus, SynthSession};
pub use mdp::{tiny_chain, OracleQ, TabularMdp, TabularTrajectory};

/// Sine of amplitude 0.5.
pub fn synth_tone(freq_hz: f64, duration_s: f64, sample_rate: u32) -> Result<AudioClip> {
    let sr = f64::from(sample_rate);
    if !(freq_hz > 0.0 && freq_hz < sr / 2.0) {
        return Err(Error::Validation(format!(
            "tone frequency must lie in (0, {}) Hz, got {freq_hz}",
            sr / 2.0
        )));
    }
    if !(duration_s >= 0.0) {
        return Err(Error::Validation(format!("negative duration {duration_s}")));
    }
    let n = (duration_s * sr).round() as usize;
    let samples = (0..n)
        .map(|i| 0.5 * (2.0 * std::f64::consts::PI * freq_hz * i as f64 / sr).sin())
        .collect();
    AudioClip::new(samples, sample_rate)
}

/// Regime-level abstraction of the synthetic corpus: states are the speaker's
/// regime, regime changes follow the mean dwell times at 40 Hz regardless of
/// the action, and laughing earns the expected engagement effect of a laugh
/// onset in that regime. Starts from the stationary regime distribution.
pub fn regime_mdp(config: &SynthConfig) -> Result<TabularMdp> {
    config.validate()?;
    let fr = corpus::FRAME_RATE;
    let leave = |mean_s: f64| (1.0 / (mean_s * fr)).min(1.0);
    let [sp, pa, po] = config.dwell_means().map(leave);
    // speaking -> post-utterance -> pausing -> speaking
    let chain = [
        [1.0 - sp, 0.0, sp],
        [pa, 1.0 - pa, 0.0],
        [0.0, po, 1.0 - po],
    ];
    let mut p = Vec::with_capacity(3 * 2 * 3);
    for row in &chain {
        for _ in 0..2 {
            p.extend_from_slice(row);
        }
    }
    let effect = config.laugh_effect();
    let r = effect.iter().flat_map(|&e| [0.0, e]).collect();
    let mut mdp = TabularMdp::new(3, 2, p, r, config.gamma, vec![1.0 / 3.0; 3])?;
    mdp.d0 = mdp.stationary(&[vec![1.0, 0.0], vec![1.0, 0.0], vec![1.0, 0.0]]);
    Ok(mdp)
}

/// Per-tick laughing probability of the corpus behavior policy in each
/// regime: the stationary fraction of time spent laughing under the onset
/// probability and mean laugh length, kept within `[floor, 1 - floor]`.
pub fn regime_behavior_policy(config: &SynthConfig, floor: f64) -> Vec<Vec<f64>> {
    let mean_ticks = config.laugh_mean_s * corpus::FRAME_RATE;
    config
        .laugh_onset_prob
        .iter()
        .map(|&q| {
            let busy = q * mean_ticks / (1.0 + q * mean_ticks);
            let p1 = busy.clamp(floor, 1.0 - floor);
            vec![1.0 - p1, p1]
        })
        .collect()
}
