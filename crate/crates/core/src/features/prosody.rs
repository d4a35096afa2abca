//! Intensity, autocorrelation pitch and pitch confidence per frame.

pub const INTENSITY_FLOOR_DB: f64 = -100.0;
pub const PITCH_MIN_HZ: f64 = 50.0;
pub const PITCH_MAX_HZ: f64 = 500.0;

/// Candidate peaks within this fraction of the strongest one are eligible;
/// the shortest such lag wins, which suppresses sub-harmonic picks.
const PEAK_ACCEPT_RATIO: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProsodyFrame {
    pub intensity_db: f64,
    pub pitch_hz: f64,
    pub pitch_confidence: f64,
    pub d_intensity: f64,
    pub d_pitch: f64,
    pub d_confidence: f64,
}

pub fn intensity_db(frame: &[f64]) -> f64 {
    if frame.is_empty() {
        return INTENSITY_FLOOR_DB;
    }
    let ms = frame.iter().map(|x| x * x).sum::<f64>() / frame.len() as f64;
    if ms <= 0.0 {
        return INTENSITY_FLOOR_DB;
    }
    (10.0 * ms.log10()).max(INTENSITY_FLOOR_DB)
}

/// Normalized autocorrelation at `lag`: the cosine similarity between the
/// frame and its lagged copy over their overlap.
pub fn normalized_autocorrelation(frame: &[f64], lag: usize) -> f64 {
    if lag >= frame.len() {
        return 0.0;
    }
    let (head, tail) = (&frame[..frame.len() - lag], &frame[lag..]);
    let (mut xy, mut xx, mut yy) = (0.0, 0.0, 0.0);
    for (x, y) in head.iter().zip(tail) {
        xy += x * y;
        xx += x * x;
        yy += y * y;
    }
    let denom = (xx * yy).sqrt();
    if denom > 0.0 {
        xy / denom
    } else {
        0.0
    }
}

/// Returns `(pitch_hz, confidence)`; `(0, 0)` when the frame carries no energy
/// or no peak exists in the 50–500 Hz lag band.
pub fn pitch(frame: &[f64], sample_rate: u32) -> (f64, f64) {
    let sr = f64::from(sample_rate);
    if frame.iter().all(|&x| x == 0.0) {
        return (0.0, 0.0);
    }
    let min_lag = ((sr / PITCH_MAX_HZ).floor() as usize).max(1);
    let max_lag = ((sr / PITCH_MIN_HZ).ceil() as usize).min(frame.len().saturating_sub(2));
    if max_lag <= min_lag + 1 {
        return (0.0, 0.0);
    }
    let r: Vec<f64> = (min_lag..=max_lag)
        .map(|lag| normalized_autocorrelation(frame, lag))
        .collect();
    let peaks: Vec<usize> = (1..r.len() - 1)
        .filter(|&i| r[i] >= r[i - 1] && r[i] > r[i + 1] && r[i] > 0.0)
        .collect();
    let Some(best) = peaks.iter().map(|&i| r[i]).reduce(f64::max) else {
        return (0.0, 0.0);
    };
    let i = *peaks
        .iter()
        .find(|&&i| r[i] >= PEAK_ACCEPT_RATIO * best)
        .expect("best peak qualifies");
    // parabolic refinement of the lag
    let (a, b, c) = (r[i - 1], r[i], r[i + 1]);
    let curvature = a - 2.0 * b + c;
    let offset = if curvature < 0.0 {
        (0.5 * (a - c) / curvature).clamp(-0.5, 0.5)
    } else {
        0.0
    };
    let lag = (min_lag + i) as f64 + offset;
    (sr / lag, b.clamp(0.0, 1.0))
}

/// Per-frame prosody with first differences; the first frame's differences are zero.
pub fn prosody(frames: &[Vec<f64>], sample_rate: u32) -> Vec<ProsodyFrame> {
    let mut out: Vec<ProsodyFrame> = Vec::with_capacity(frames.len());
    for frame in frames {
        let intensity = intensity_db(frame);
        let (p, conf) = pitch(frame, sample_rate);
        let (d_i, d_p, d_c) = match out.last() {
            Some(prev) => (
                intensity - prev.intensity_db,
                p - prev.pitch_hz,
                conf - prev.pitch_confidence,
            ),
            None => (0.0, 0.0, 0.0),
        };
        out.push(ProsodyFrame {
            intensity_db: intensity,
            pitch_hz: p,
            pitch_confidence: conf,
            d_intensity: d_i,
            d_pitch: d_p,
            d_confidence: d_c,
        });
    }
    out
}
