//! Property tests across module boundaries: estimator invariances, metric
//! identities and lossless serialization.

use proptest::prelude::*;

use bcrl::ope::{
    duration_stats, laugh_runs, soften, step_weights, step_wis_ratios, symmetric_kl,
    DurationHistogram, RatioTrajectory,
};
use bcrl::qnet::{io as qio, QParams};

fn trajectory_set() -> impl Strategy<Value = Vec<RatioTrajectory>> {
    (1usize..12, 1usize..30).prop_flat_map(|(n, len)| {
        prop::collection::vec(
            (
                prop::collection::vec(0.05f64..8.0, len),
                prop::collection::vec(-3.0f64..3.0, len),
            )
                .prop_map(|(ratios, rewards)| RatioTrajectory { ratios, rewards }),
            n,
        )
    })
}

proptest! {
    #[test]
    fn weights_normalize(trs in trajectory_set()) {
        for w in step_weights(&trs) {
            prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(w.iter().all(|&x| x >= 0.0));
        }
    }

    #[test]
    fn scaling_a_step_for_everyone_changes_nothing(trs in trajectory_set(), c in 0.1f64..10.0, at in 0usize..30) {
        let len = trs[0].ratios.len();
        let at = at % len;
        let mut scaled = trs.clone();
        for tr in &mut scaled {
            tr.ratios[at] *= c;
        }
        let a = step_wis_ratios(&trs, 0.95).unwrap().value;
        let b = step_wis_ratios(&scaled, 0.95).unwrap().value;
        prop_assert!((a - b).abs() <= 1e-9 * (1.0 + a.abs()), "{a} vs {b}");
    }

    #[test]
    fn estimate_is_bounded_by_per_step_extremes(trs in trajectory_set(), gamma in 0.0f64..1.0) {
        let v = step_wis_ratios(&trs, gamma).unwrap().value;
        let len = trs[0].rewards.len();
        let (mut lo, mut hi, mut d) = (0.0, 0.0, 1.0);
        for t in 0..len {
            let step = trs.iter().map(|tr| tr.rewards[t]);
            lo += d * step.clone().fold(f64::INFINITY, f64::min);
            hi += d * step.fold(f64::NEG_INFINITY, f64::max);
            d *= gamma;
        }
        prop_assert!(v >= lo - 1e-9 && v <= hi + 1e-9);
    }

    #[test]
    fn softened_policy_is_a_distribution(q0 in -5.0f64..5.0, q1 in -5.0f64..5.0, p in 0.51f64..0.99) {
        let pi = soften(&[q0, q1], p);
        prop_assert!((pi[0] + pi[1] - 1.0).abs() < 1e-15);
        let greedy = if q1 > q0 { 1 } else { 0 };
        prop_assert_eq!(pi[greedy], p);
    }

    #[test]
    fn runs_account_for_every_laugh_frame(actions in prop::collection::vec(0u8..2, 0..400)) {
        let runs = laugh_runs(&actions, 40.0);
        let ones = actions.iter().filter(|&&a| a == 1).count();
        prop_assert!((runs.iter().sum::<f64>() * 40.0 - ones as f64).abs() < 1e-9);
        let onsets = actions.windows(2).filter(|w| w == &[0, 1]).count() + usize::from(actions.first() == Some(&1));
        prop_assert_eq!(runs.len(), onsets);
        if !runs.is_empty() {
            let s = duration_stats(&runs).unwrap();
            prop_assert!(s.mean > 0.0 && s.std >= 0.0);
        }
    }

    #[test]
    fn symmetric_kl_properties(
        a in prop::collection::vec(0.0f64..12.0, 0..60),
        b in prop::collection::vec(0.0f64..12.0, 0..60),
    ) {
        let (p, q) = (DurationHistogram::new(&a), DurationHistogram::new(&b));
        prop_assert_eq!(symmetric_kl(&p, &p).unwrap(), 0.0);
        let pq = symmetric_kl(&p, &q).unwrap();
        prop_assert!(pq >= 0.0);
        prop_assert_eq!(pq, symmetric_kl(&q, &p).unwrap());
    }

    #[test]
    fn parameters_round_trip_bitwise(seed in any::<u64>(), hidden in 1usize..12) {
        let params = QParams::init(&[5, hidden, 2], seed);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.bin");
        qio::save_params(&path, &params, "abc").unwrap();
        let back = qio::load_params(&path).unwrap();
        prop_assert_eq!(back.config_hash, "abc");
        let (x, y): (Vec<u64>, Vec<u64>) =
            (params.iter().map(|v| v.to_bits()).collect(), back.params.iter().map(|v| v.to_bits()).collect());
        prop_assert_eq!(x, y);
    }
}
