use std::f64::consts::PI;

use crate::error::{Error, Result};

use super::AudioClip;

/// Frame geometry in samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FrameGeometry {
    pub win: usize,
    pub hop: usize,
}

impl FrameGeometry {
    pub fn from_ms(win_ms: f64, hop_ms: f64, sample_rate: u32) -> Self {
        let sr = f64::from(sample_rate);
        Self {
            win: (win_ms * sr / 1000.0).round() as usize,
            hop: (hop_ms * sr / 1000.0).round() as usize,
        }
    }

    /// `floor((n - win) / hop) + 1`, or zero when the signal is shorter than a window.
    pub fn frame_count(&self, n_samples: usize) -> usize {
        if n_samples < self.win || self.hop == 0 {
            0
        } else {
            (n_samples - self.win) / self.hop + 1
        }
    }
}

/// Symmetric Hamming window.
pub fn hamming(len: usize) -> Vec<f64> {
    if len == 1 {
        return vec![1.0];
    }
    let denom = (len - 1) as f64;
    (0..len)
        .map(|n| 0.54 - 0.46 * (2.0 * PI * n as f64 / denom).cos())
        .collect()
}

/// Cuts the clip into Hamming-tapered windows; frame `k` covers samples
/// `[k * hop, k * hop + win)`.
pub fn frame_signal(clip: &AudioClip, geometry: FrameGeometry) -> Result<Vec<Vec<f64>>> {
    let n = clip.samples.len();
    if n < geometry.win || geometry.win == 0 {
        return Err(Error::InsufficientAudio {
            samples: n,
            needed: geometry.win,
        });
    }
    let window = hamming(geometry.win);
    let count = geometry.frame_count(n);
    Ok((0..count)
        .map(|k| {
            let start = k * geometry.hop;
            clip.samples[start..start + geometry.win]
                .iter()
                .zip(&window)
                .map(|(s, w)| s * w)
                .collect()
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn clip(n: usize) -> AudioClip {
        AudioClip::new(vec![0.1; n], 16_000).unwrap()
    }

    #[test]
    fn one_second_gives_39_frames() {
        let g = FrameGeometry::from_ms(40.0, 25.0, 16_000);
        assert_eq!(g, FrameGeometry { win: 640, hop: 400 });
        assert_eq!(frame_signal(&clip(16_000), g).unwrap().len(), 39);
    }

    #[test]
    fn exact_window_gives_one_frame() {
        let g = FrameGeometry { win: 640, hop: 400 };
        assert_eq!(frame_signal(&clip(640), g).unwrap().len(), 1);
    }

    #[test]
    fn short_clip_is_rejected() {
        let g = FrameGeometry { win: 640, hop: 400 };
        assert!(matches!(
            frame_signal(&clip(639), g),
            Err(Error::InsufficientAudio {
                samples: 639,
                needed: 640
            })
        ));
    }

    #[test]
    fn taper_is_applied() {
        let g = FrameGeometry { win: 640, hop: 400 };
        let frames = frame_signal(&clip(640), g).unwrap();
        let w = hamming(640);
        assert!((frames[0][0] - 0.1 * 0.08).abs() < 1e-15);
        assert!((frames[0][320] - 0.1 * w[320]).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn frame_count_formula(n in 1usize..5000, win in 1usize..400, hop in 1usize..300) {
            prop_assume!(n >= win);
            let g = FrameGeometry { win, hop };
            let c = AudioClip::new(vec![0.0; n], 16_000).unwrap();
            let frames = frame_signal(&c, g).unwrap();
            prop_assert_eq!(frames.len(), (n - win) / hop + 1);
            let last = (frames.len() - 1) * hop + win;
            prop_assert!(last <= n && last + hop > n);
        }
    }
}
