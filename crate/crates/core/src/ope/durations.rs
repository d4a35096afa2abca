//! Laugh-duration naturalness: run extraction, summary statistics,
//! histograms and the symmetric KL divergence.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::{central_moments, quantile_sorted, sorted_copy};

pub const HIST_BIN_S: f64 = 0.25;
pub const HIST_MAX_S: f64 = 10.0;
pub const HIST_SMOOTHING: f64 = 1e-6;

/// Durations (s) of maximal runs of 1s in a binary action stream.
pub fn laugh_runs(actions: &[u8], frame_rate: f64) -> Vec<f64> {
    let mut out = Vec::new();
    let mut run = 0usize;
    for &a in actions {
        if a == 1 {
            run += 1;
        } else if run > 0 {
            out.push(run as f64 / frame_rate);
            run = 0;
        }
    }
    if run > 0 {
        out.push(run as f64 / frame_rate);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DurationStats {
    pub count: usize,
    pub mean: f64,
    pub max: f64,
    /// Population standard deviation.
    pub std: f64,
    pub iqr: f64,
}

pub fn duration_stats(durations: &[f64]) -> Result<DurationStats> {
    if durations.is_empty() {
        return Err(Error::Validation("no durations to summarize".into()));
    }
    let sorted = sorted_copy(durations);
    let (mean, var, _, _) = central_moments(durations);
    Ok(DurationStats {
        count: durations.len(),
        mean,
        max: *sorted.last().unwrap(),
        std: var.sqrt(),
        iqr: quantile_sorted(&sorted, 0.75) - quantile_sorted(&sorted, 0.25),
    })
}

/// Smoothed histogram over `[0, max)` in fixed bins plus one overflow bin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DurationHistogram {
    pub bin_width: f64,
    pub max: f64,
    pub smoothing: f64,
    pub counts: Vec<u64>,
    pub probs: Vec<f64>,
}

impl DurationHistogram {
    pub fn new(durations: &[f64]) -> Self {
        Self::with_binning(durations, HIST_BIN_S, HIST_MAX_S, HIST_SMOOTHING)
    }

    pub fn with_binning(durations: &[f64], bin_width: f64, max: f64, smoothing: f64) -> Self {
        let n_regular = (max / bin_width).round() as usize;
        let mut counts = vec![0u64; n_regular + 1];
        for &d in durations {
            let b = if d >= max {
                n_regular
            } else {
                ((d / bin_width).floor().max(0.0) as usize).min(n_regular - 1)
            };
            counts[b] += 1;
        }
        let total = durations.len() as f64 + smoothing * counts.len() as f64;
        let probs = counts
            .iter()
            .map(|&c| (c as f64 + smoothing) / total)
            .collect();
        Self {
            bin_width,
            max,
            smoothing,
            counts,
            probs,
        }
    }

    fn same_binning(&self, other: &Self) -> bool {
        self.bin_width == other.bin_width
            && self.max == other.max
            && self.probs.len() == other.probs.len()
    }
}

pub fn kl_divergence(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(p, _)| **p > 0.0)
        .map(|(p, q)| p * (p / q).ln())
        .sum()
}

/// `0.5 * (KL(P||Q) + KL(Q||P))` on the smoothed probabilities.
pub fn symmetric_kl(p: &DurationHistogram, q: &DurationHistogram) -> Result<f64> {
    if !p.same_binning(q) {
        return Err(Error::BinningMismatch);
    }
    Ok(0.5 * (kl_divergence(&p.probs, &q.probs) + kl_divergence(&q.probs, &p.probs)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn run_examples() {
        assert_eq!(laugh_runs(&[0, 1, 1, 1, 1, 0], 40.0), vec![0.1]);
        let mut a = vec![1u8; 40];
        a.push(0);
        a.extend(vec![1u8; 80]);
        assert_eq!(laugh_runs(&a, 40.0), vec![1.0, 2.0]);
        assert!(laugh_runs(&[0; 10], 40.0).is_empty());
    }

    #[test]
    fn stats_examples() {
        let s = duration_stats(&[1.0, 2.0]).unwrap();
        assert_eq!((s.mean, s.max), (1.5, 2.0));
        let s = duration_stats(&[0.7]).unwrap();
        assert_eq!((s.std, s.iqr), (0.0, 0.0));
        assert!(duration_stats(&[]).is_err());
    }

    #[test]
    fn histogram_layout() {
        let h = DurationHistogram::new(&[0.1, 0.3, 9.99, 10.0, 42.0]);
        assert_eq!(h.counts.len(), 41);
        assert_eq!(
            (h.counts[0], h.counts[1], h.counts[39], h.counts[40]),
            (1, 1, 1, 2)
        );
        assert!((h.probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let empty = DurationHistogram::new(&[]);
        assert!((empty.probs[0] - 1.0 / 41.0).abs() < 1e-15);
    }

    #[test]
    fn two_bin_jeffreys() {
        let mk = |p: [f64; 2]| DurationHistogram {
            bin_width: 1.0,
            max: 1.0,
            smoothing: 0.0,
            counts: vec![0, 0],
            probs: p.to_vec(),
        };
        let v = symmetric_kl(&mk([0.9, 0.1]), &mk([0.5, 0.5])).unwrap();
        let kl_pq = 0.9 * (0.9f64 / 0.5).ln() + 0.1 * (0.1f64 / 0.5).ln();
        let kl_qp = 0.5 * (0.5f64 / 0.9).ln() + 0.5 * (0.5f64 / 0.1).ln();
        assert!((v - 0.5 * (kl_pq + kl_qp)).abs() < 1e-15);
        // 0.5 * (0.368064 + 0.510826)
        assert!((v - 0.439445).abs() < 1e-6);
    }

    #[test]
    fn binning_mismatch() {
        let a = DurationHistogram::new(&[1.0]);
        let b = DurationHistogram::with_binning(&[1.0], 0.5, 10.0, 1e-6);
        assert!(matches!(symmetric_kl(&a, &b), Err(Error::BinningMismatch)));
    }
}
