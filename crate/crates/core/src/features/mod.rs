//! Speech features: 40 Hz base frames (13 MFCC + 6 prosody) summarized over
//! trailing one-second windows into 209-dimensional state vectors.

pub mod framing;
pub mod io;
pub mod mfcc;
pub mod prosody;
pub mod summary;
pub mod wav;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use framing::{frame_signal, hamming, FrameGeometry};
pub use mfcc::MfccExtractor;
pub use summary::{summarize, summarize_stream, STATE_DIM, WINDOW_FRAMES};

pub const CANONICAL_SAMPLE_RATE: u32 = 16_000;
/// 13 MFCC + intensity, pitch, confidence + their first differences.
pub const BASE_DIM: usize = 19;

#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl AudioClip {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::UnsupportedAudio("sample rate 0".into()));
        }
        if let Some(i) = samples.iter().position(|x| !x.is_finite()) {
            return Err(Error::UnsupportedAudio(format!("non-finite sample at {i}")));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / f64::from(self.sample_rate)
    }
}

/// One 25 ms tick of base features.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BaseFeatureFrame {
    /// `[mfcc_0..mfcc_12, intensity_db, pitch_hz, pitch_confidence,
    /// d_intensity, d_pitch, d_confidence]`
    pub values: [f64; BASE_DIM],
    pub timestamp: f64,
}

impl BaseFeatureFrame {
    pub fn mfcc(&self) -> &[f64] {
        &self.values[..13]
    }
    pub fn intensity_db(&self) -> f64 {
        self.values[13]
    }
    pub fn pitch_hz(&self) -> f64 {
        self.values[14]
    }
    pub fn pitch_confidence(&self) -> f64 {
        self.values[15]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StateVector {
    pub values: Vec<f64>,
    pub timestamp: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    #[default]
    None,
    /// z-score every state dimension with the session's own mean and std.
    PerSession,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FeatureConfig {
    pub sample_rate: u32,
    pub win_ms: f64,
    pub hop_ms: f64,
    pub n_mel_filters: usize,
    pub normalization: Normalization,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            sample_rate: CANONICAL_SAMPLE_RATE,
            win_ms: 40.0,
            hop_ms: 25.0,
            n_mel_filters: mfcc::N_MEL_FILTERS,
            normalization: Normalization::None,
        }
    }
}

impl FeatureConfig {
    pub fn validate(&self) -> Result<()> {
        if self.sample_rate != CANONICAL_SAMPLE_RATE {
            return Err(Error::Config(format!(
                "features.sample_rate: only {CANONICAL_SAMPLE_RATE} Hz is supported, got {}",
                self.sample_rate
            )));
        }
        if !(self.win_ms > 0.0 && self.hop_ms > 0.0) {
            return Err(Error::Config(
                "features.win_ms / features.hop_ms: must be positive".into(),
            ));
        }
        if self.n_mel_filters < mfcc::N_MFCC {
            return Err(Error::Config(format!(
                "features.n_mel_filters: must be at least {}",
                mfcc::N_MFCC
            )));
        }
        Ok(())
    }

    pub fn geometry(&self) -> FrameGeometry {
        FrameGeometry::from_ms(self.win_ms, self.hop_ms, self.sample_rate)
    }

    pub fn frame_rate(&self) -> f64 {
        1000.0 / self.hop_ms
    }
}

/// Base frames for a whole clip.
pub fn extract_base_frames(
    clip: &AudioClip,
    config: &FeatureConfig,
) -> Result<Vec<BaseFeatureFrame>> {
    if clip.sample_rate != config.sample_rate {
        return Err(Error::UnsupportedAudio(format!(
            "clip is {} Hz, expected {} Hz",
            clip.sample_rate, config.sample_rate
        )));
    }
    let geometry = config.geometry();
    let frames = frame_signal(clip, geometry)?;
    let extractor =
        MfccExtractor::with_filters(geometry.win, clip.sample_rate, config.n_mel_filters);
    let prosodic = prosody::prosody(&frames, clip.sample_rate);
    let hop_s = geometry.hop as f64 / f64::from(clip.sample_rate);
    Ok(frames
        .iter()
        .zip(prosodic)
        .enumerate()
        .map(|(k, (frame, p))| {
            let mut values = [0.0; BASE_DIM];
            values[..13].copy_from_slice(&extractor.mfcc(frame));
            values[13..].copy_from_slice(&[
                p.intensity_db,
                p.pitch_hz,
                p.pitch_confidence,
                p.d_intensity,
                p.d_pitch,
                p.d_confidence,
            ]);
            BaseFeatureFrame {
                values,
                timestamp: k as f64 * hop_s,
            }
        })
        .collect())
}

/// Full clip → state stream (one state per tick from t = 1 s onwards).
pub fn extract_states(clip: &AudioClip, config: &FeatureConfig) -> Result<Vec<StateVector>> {
    let base = extract_base_frames(clip, config)?;
    Ok(summarize_stream(&base, config.frame_rate()))
}

/// In-place per-session z-scoring. Dimensions with zero spread are only centered.
pub fn standardize_per_session(states: &mut [StateVector]) {
    let Some(first) = states.first() else { return };
    let dim = first.values.len();
    let n = states.len() as f64;
    let mut mean = vec![0.0; dim];
    for s in states.iter() {
        for (m, v) in mean.iter_mut().zip(&s.values) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; dim];
    for s in states.iter() {
        for ((acc, v), m) in var.iter_mut().zip(&s.values).zip(&mean) {
            *acc += (v - m) * (v - m);
        }
    }
    let scale: Vec<f64> = var
        .iter()
        .map(|v| {
            let sd = (v / n).sqrt();
            if sd > 1e-12 {
                1.0 / sd
            } else {
                1.0
            }
        })
        .collect();
    for s in states.iter_mut() {
        for ((v, m), k) in s.values.iter_mut().zip(&mean).zip(&scale) {
            *v = (*v - m) * k;
        }
    }
}
