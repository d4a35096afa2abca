//! Mel-frequency cepstral coefficients.
//!
//! Power spectrum (zero-padded FFT) → triangular HTK-mel filterbank spanning
//! 0 Hz to Nyquist → natural log with an energy floor → orthonormal DCT-II.
//! No pre-emphasis is applied.

use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

pub const N_MFCC: usize = 13;
pub const N_MEL_FILTERS: usize = 26;
pub const LOG_ENERGY_FLOOR: f64 = 1e-10;

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular filters over FFT bins `0..=fft_size/2`; row `m` holds the
/// weights of filter `m`.
pub fn mel_filterbank(n_filters: usize, fft_size: usize, sample_rate: f64) -> Vec<Vec<f64>> {
    let n_bins = fft_size / 2 + 1;
    let mel_hi = hz_to_mel(sample_rate / 2.0);
    let edges: Vec<f64> = (0..n_filters + 2)
        .map(|i| mel_to_hz(mel_hi * i as f64 / (n_filters + 1) as f64))
        .collect();
    (0..n_filters)
        .map(|m| {
            let (lo, center, hi) = (edges[m], edges[m + 1], edges[m + 2]);
            (0..n_bins)
                .map(|k| {
                    let f = k as f64 * sample_rate / fft_size as f64;
                    if f <= lo || f >= hi {
                        0.0
                    } else if f <= center {
                        (f - lo) / (center - lo)
                    } else {
                        (hi - f) / (hi - center)
                    }
                })
                .collect()
        })
        .collect()
}

/// Reusable MFCC computer for a fixed window length and sample rate.
pub struct MfccExtractor {
    fft: Arc<dyn Fft<f64>>,
    fft_size: usize,
    filterbank: Vec<Vec<f64>>,
    /// `N_MFCC x n_filters` orthonormal DCT-II rows.
    dct: Vec<Vec<f64>>,
}

impl std::fmt::Debug for MfccExtractor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MfccExtractor")
            .field("fft_size", &self.fft_size)
            .field("n_filters", &self.filterbank.len())
            .finish()
    }
}

impl MfccExtractor {
    pub fn new(window_len: usize, sample_rate: u32) -> Self {
        Self::with_filters(window_len, sample_rate, N_MEL_FILTERS)
    }

    pub fn with_filters(window_len: usize, sample_rate: u32, n_filters: usize) -> Self {
        let fft_size = window_len.max(1).next_power_of_two();
        let fft = FftPlanner::new().plan_fft_forward(fft_size);
        let filterbank = mel_filterbank(n_filters, fft_size, f64::from(sample_rate));
        let m = n_filters as f64;
        let dct = (0..N_MFCC)
            .map(|k| {
                let scale = if k == 0 {
                    (1.0 / m).sqrt()
                } else {
                    (2.0 / m).sqrt()
                };
                (0..n_filters)
                    .map(|j| scale * (PI * k as f64 * (2 * j + 1) as f64 / (2.0 * m)).cos())
                    .collect()
            })
            .collect();
        Self {
            fft,
            fft_size,
            filterbank,
            dct,
        }
    }

    pub fn fft_size(&self) -> usize {
        self.fft_size
    }

    pub fn power_spectrum(&self, frame: &[f64]) -> Vec<f64> {
        let mut buf: Vec<Complex<f64>> = frame
            .iter()
            .take(self.fft_size)
            .map(|&x| Complex::new(x, 0.0))
            .collect();
        buf.resize(self.fft_size, Complex::new(0.0, 0.0));
        self.fft.process(&mut buf);
        buf[..self.fft_size / 2 + 1]
            .iter()
            .map(|c| c.norm_sqr())
            .collect()
    }

    /// Log filterbank energies, floored at [`LOG_ENERGY_FLOOR`].
    pub fn log_mel_energies(&self, frame: &[f64]) -> Vec<f64> {
        let power = self.power_spectrum(frame);
        self.filterbank
            .iter()
            .map(|filter| {
                let e: f64 = filter.iter().zip(&power).map(|(w, p)| w * p).sum();
                e.max(LOG_ENERGY_FLOOR).ln()
            })
            .collect()
    }

    pub fn mfcc(&self, frame: &[f64]) -> [f64; N_MFCC] {
        let log_e = self.log_mel_energies(frame);
        let mut out = [0.0; N_MFCC];
        for (o, row) in out.iter_mut().zip(&self.dct) {
            *o = row.iter().zip(&log_e).map(|(c, e)| c * e).sum();
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn silence_puts_everything_in_c0() {
        let ex = MfccExtractor::new(640, 16_000);
        assert_eq!(ex.fft_size(), 1024);
        let c = ex.mfcc(&[0.0; 640]);
        let expected = (N_MEL_FILTERS as f64).sqrt() * LOG_ENERGY_FLOOR.ln();
        assert!((c[0] - expected).abs() < 1e-9, "{} vs {}", c[0], expected);
        for v in &c[1..] {
            assert!(v.abs() < 1e-9);
        }
    }

    #[test]
    fn filterbank_peaks_at_one() {
        let fb = mel_filterbank(26, 1024, 16_000.0);
        assert_eq!(fb.len(), 26);
        for row in &fb {
            let peak = row.iter().cloned().fold(0.0, f64::max);
            assert!(peak > 0.5 && peak <= 1.0);
        }
    }

    #[test]
    fn mel_scale_round_trips() {
        for hz in [0.0, 100.0, 1000.0, 8000.0] {
            assert!((mel_to_hz(hz_to_mel(hz)) - hz).abs() < 1e-9);
        }
    }

    proptest! {
        #[test]
        fn scaling_only_moves_c0(
            frame in prop::collection::vec(-1.0f64..1.0, 640),
            scale in 0.01f64..100.0,
        ) {
            let energy: f64 = frame.iter().map(|x| x * x).sum();
            prop_assume!(energy > 1e-3);
            let ex = MfccExtractor::new(640, 16_000);
            let a = ex.mfcc(&frame);
            let scaled: Vec<f64> = frame.iter().map(|x| x * scale).collect();
            let b = ex.mfcc(&scaled);
            for k in 1..N_MFCC {
                prop_assert!((a[k] - b[k]).abs() < 1e-9, "k={} {} {}", k, a[k], b[k]);
            }
            let shift = (N_MEL_FILTERS as f64).sqrt() * 2.0 * scale.ln();
            prop_assert!((b[0] - a[0] - shift).abs() < 1e-8);
        }
    }
}
