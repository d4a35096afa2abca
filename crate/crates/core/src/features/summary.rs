use crate::error::{Error, Result};
use crate::stats::{central_moments, quantile_sorted, sorted_copy};

use super::{BaseFeatureFrame, StateVector, BASE_DIM};

pub const N_FUNCTIONALS: usize = 11;
pub const STATE_DIM: usize = BASE_DIM * N_FUNCTIONALS;
/// Frames per summarization window: one second at 40 Hz.
pub const WINDOW_FRAMES: usize = 40;

/// Emission order of the per-dimension functionals.
pub const FUNCTIONAL_NAMES: [&str; N_FUNCTIONALS] = [
    "mean", "std", "skewness", "kurtosis", "range", "min", "max", "q1", "q3", "median", "iqr",
];

/// The eleven functionals of one feature trajectory. Population moments;
/// skewness and (raw, non-excess) kurtosis are zero when the std is zero.
pub fn functionals(values: &[f64]) -> [f64; N_FUNCTIONALS] {
    let (mean, var, m3, m4) = central_moments(values);
    let std = var.sqrt();
    let (skew, kurt) = if std > 0.0 {
        (m3 / (std * std * std), m4 / (var * var))
    } else {
        (0.0, 0.0)
    };
    let sorted = sorted_copy(values);
    let min = sorted[0];
    let max = sorted[sorted.len() - 1];
    let q1 = quantile_sorted(&sorted, 0.25);
    let q3 = quantile_sorted(&sorted, 0.75);
    let median = quantile_sorted(&sorted, 0.5);
    [
        mean,
        std,
        skew,
        kurt,
        max - min,
        min,
        max,
        q1,
        q3,
        median,
        q3 - q1,
    ]
}

/// Summarizes exactly [`WINDOW_FRAMES`] base frames into a state vector laid
/// out base-dimension-major: `values[d * 11 + f]` is functional `f` of base
/// dimension `d`. The state is stamped with `timestamp`.
pub fn summarize(window: &[BaseFeatureFrame], timestamp: f64) -> Result<StateVector> {
    if window.len() < WINDOW_FRAMES {
        return Err(Error::WindowUnderfull {
            got: window.len(),
            needed: WINDOW_FRAMES,
        });
    }
    if window.len() > WINDOW_FRAMES {
        return Err(Error::DimensionMismatch {
            expected: WINDOW_FRAMES,
            got: window.len(),
        });
    }
    let mut values = Vec::with_capacity(STATE_DIM);
    let mut column = vec![0.0; window.len()];
    for d in 0..BASE_DIM {
        for (c, frame) in column.iter_mut().zip(window) {
            *c = frame.values[d];
        }
        values.extend_from_slice(&functionals(&column));
    }
    Ok(StateVector { values, timestamp })
}

/// States for every tick `t >= 40` of a base-frame stream; the state at tick
/// `t` summarizes frames `[t - 40, t)` and is stamped `t / frame_rate`.
pub fn summarize_stream(frames: &[BaseFeatureFrame], frame_rate: f64) -> Vec<StateVector> {
    (WINDOW_FRAMES..frames.len())
        .map(|t| {
            summarize(&frames[t - WINDOW_FRAMES..t], t as f64 / frame_rate)
                .expect("window is exactly full")
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn frame(v: [f64; BASE_DIM]) -> BaseFeatureFrame {
        BaseFeatureFrame {
            values: v,
            timestamp: 0.0,
        }
    }

    fn idx(d: usize, name: &str) -> usize {
        d * N_FUNCTIONALS + FUNCTIONAL_NAMES.iter().position(|n| *n == name).unwrap()
    }

    #[test]
    fn constant_window() {
        let mut v = [0.0; BASE_DIM];
        for (i, x) in v.iter_mut().enumerate() {
            *x = i as f64 - 3.5;
        }
        let s = summarize(&vec![frame(v); 40], 1.0).unwrap();
        assert_eq!(s.values.len(), 209);
        for d in 0..BASE_DIM {
            for name in ["mean", "min", "max", "median", "q1", "q3"] {
                assert_eq!(s.values[idx(d, name)], v[d], "{name}");
            }
            for name in ["std", "skewness", "kurtosis", "range", "iqr"] {
                assert_eq!(s.values[idx(d, name)], 0.0, "{name}");
            }
        }
    }

    #[test]
    fn ramp_window() {
        let window: Vec<_> = (1..=40)
            .map(|i| {
                let mut v = [0.0; BASE_DIM];
                v[4] = f64::from(i);
                frame(v)
            })
            .collect();
        let s = summarize(&window, 1.0).unwrap();
        // direct arithmetic oracle for the population std
        let xs: Vec<f64> = (1..=40).map(f64::from).collect();
        let m = xs.iter().sum::<f64>() / 40.0;
        let std = (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / 40.0).sqrt();
        assert_eq!(s.values[idx(4, "mean")], 20.5);
        assert_eq!(s.values[idx(4, "min")], 1.0);
        assert_eq!(s.values[idx(4, "max")], 40.0);
        assert_eq!(s.values[idx(4, "range")], 39.0);
        assert_eq!(s.values[idx(4, "median")], 20.5);
        assert!(s.values[idx(4, "skewness")].abs() < 1e-12);
        assert!((s.values[idx(4, "std")] - std).abs() < 1e-12);
        assert!((std - 11.543_396_380_615_2).abs() < 1e-9);
    }

    #[test]
    fn underfull_window_errors() {
        let w = vec![frame([0.0; BASE_DIM]); 39];
        assert!(matches!(
            summarize(&w, 0.0),
            Err(Error::WindowUnderfull {
                got: 39,
                needed: 40
            })
        ));
    }

    #[test]
    fn stream_skips_first_second() {
        let frames = vec![frame([1.0; BASE_DIM]); 100];
        let states = summarize_stream(&frames, 40.0);
        assert_eq!(states.len(), 60);
        assert_eq!(states[0].timestamp, 1.0);
    }

    fn window_strategy() -> impl Strategy<Value = Vec<BaseFeatureFrame>> {
        prop::collection::vec(prop::array::uniform19(-50.0f64..50.0), 40)
            .prop_map(|rows| rows.into_iter().map(frame).collect())
    }

    proptest! {
        #[test]
        fn order_statistics_are_consistent(window in window_strategy()) {
            let s = summarize(&window, 0.0).unwrap();
            for d in 0..BASE_DIM {
                let g = |n| s.values[idx(d, n)];
                prop_assert!(g("min") <= g("q1") && g("q1") <= g("median"));
                prop_assert!(g("median") <= g("q3") && g("q3") <= g("max"));
                prop_assert!((g("iqr") - (g("q3") - g("q1"))).abs() < 1e-12);
                prop_assert!((g("range") - (g("max") - g("min"))).abs() < 1e-12);
            }
        }

        #[test]
        fn moments_are_permutation_invariant(window in window_strategy(), seed in 0u64..1000) {
            let a = summarize(&window, 0.0).unwrap();
            let mut shuffled = window.clone();
            shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            let b = summarize(&shuffled, 0.0).unwrap();
            for (x, y) in a.values.iter().zip(&b.values) {
                prop_assert!((x - y).abs() <= 1e-9 * (1.0 + x.abs()));
            }
        }
    }
}
