//! Connection events and the pace-based reward stream.
//!
//! Connection events (CEs) are mutual facial gaze onsets, adjacency pairs
//! (turn exchanges with a short gap) and backchannel onsets. The reward at a
//! tick is the pace `1 / MTBCE`: CEs per second over a 15 s window.

pub mod io;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Participant {
    A,
    B,
}

impl Participant {
    pub fn other(self) -> Self {
        match self {
            Participant::A => Participant::B,
            Participant::B => Participant::A,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Participant::A => "A",
            Participant::B => "B",
        }
    }
}

impl std::str::FromStr for Participant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "A" | "a" => Ok(Participant::A),
            "B" | "b" => Ok(Participant::B),
            other => Err(Error::Validation(format!("unknown participant {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackchannelKind {
    Laugh,
    Smile,
    Nod,
    Headshake,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AnnotationKind {
    GazeAtPartner,
    /// A speaking turn held by the annotation's participant.
    Turn,
    Backchannel(BackchannelKind),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EventAnnotation {
    pub kind: AnnotationKind,
    pub participant: Participant,
    pub start: f64,
    pub end: f64,
}

impl EventAnnotation {
    pub fn new(kind: AnnotationKind, participant: Participant, start: f64, end: f64) -> Self {
        Self {
            kind,
            participant,
            start,
            end,
        }
    }

    pub fn validate(&self, duration: Option<f64>) -> Result<()> {
        if !(self.start.is_finite() && self.end.is_finite() && self.start < self.end) {
            return Err(Error::InvalidAnnotation(format!(
                "{:?} by {:?}: start {} must precede end {}",
                self.kind, self.participant, self.start, self.end
            )));
        }
        if self.start < 0.0 || duration.is_some_and(|d| self.end > d + 1e-9) {
            return Err(Error::InvalidAnnotation(format!(
                "{:?} by {:?}: [{}, {}] lies outside the session",
                self.kind, self.participant, self.start, self.end
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConnectionKind {
    MutualFacialGaze,
    AdjacencyPair,
    Backchannel,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConnectionEvent {
    pub kind: ConnectionKind,
    pub time: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum WindowAlignment {
    /// The window ends at the tick: `(t - w, t]`.
    #[default]
    Trailing,
    /// The window starts at the tick: `[t, t + w)`.
    Leading,
}

impl std::str::FromStr for WindowAlignment {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "trailing" => Ok(Self::Trailing),
            "leading" => Ok(Self::Leading),
            other => Err(Error::Validation(format!(
                "reward window must be trailing or leading, got {other:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RewardConfig {
    pub window_s: f64,
    pub alignment: WindowAlignment,
    /// Largest turn-exchange gap that still counts as an adjacency pair.
    pub adjacency_gap_s: f64,
    /// Mutual-gaze overlaps shorter than this are annotation jitter.
    pub min_gaze_overlap_s: f64,
    /// Lower bound on the effective window near session edges.
    pub min_window_s: f64,
    pub frame_rate: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            window_s: 15.0,
            alignment: WindowAlignment::Trailing,
            adjacency_gap_s: 1.0,
            min_gaze_overlap_s: 0.1,
            min_window_s: 1.0,
            frame_rate: 40.0,
        }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.window_s > 0.0) {
            return Err(Error::Config("reward.window_s: must be positive".into()));
        }
        if !(self.min_window_s > 0.0 && self.min_window_s <= self.window_s) {
            return Err(Error::Config(
                "reward.min_window_s: must be in (0, window_s]".into(),
            ));
        }
        if !(self.adjacency_gap_s > 0.0) {
            return Err(Error::Config(
                "reward.adjacency_gap_s: must be positive".into(),
            ));
        }
        if !(self.min_gaze_overlap_s >= 0.0) {
            return Err(Error::Config(
                "reward.min_gaze_overlap_s: must be >= 0".into(),
            ));
        }
        if !(self.frame_rate > 0.0) {
            return Err(Error::Config("reward.frame_rate: must be positive".into()));
        }
        Ok(())
    }
}

/// Union of half-open intervals, merging touching ones.
fn merge_intervals(mut iv: Vec<(f64, f64)>) -> Vec<(f64, f64)> {
    iv.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let mut out: Vec<(f64, f64)> = Vec::with_capacity(iv.len());
    for (s, e) in iv {
        match out.last_mut() {
            Some(last) if s <= last.1 => last.1 = last.1.max(e),
            _ => out.push((s, e)),
        }
    }
    out
}

fn intersect(a: &[(f64, f64)], b: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let (mut i, mut j) = (0, 0);
    let mut out = Vec::new();
    while i < a.len() && j < b.len() {
        let s = a[i].0.max(b[j].0);
        let e = a[i].1.min(b[j].1);
        if s < e {
            out.push((s, e));
        }
        if a[i].1 < b[j].1 {
            i += 1;
        } else {
            j += 1;
        }
    }
    out
}

/// Derives the sorted connection-event stream from annotations.
pub fn extract_connection_events(
    annotations: &[EventAnnotation],
    config: &RewardConfig,
) -> Result<Vec<ConnectionEvent>> {
    for a in annotations {
        a.validate(None)?;
    }
    let mut ces = Vec::new();

    // mutual facial gaze
    let gaze = |p: Participant| {
        merge_intervals(
            annotations
                .iter()
                .filter(|a| a.kind == AnnotationKind::GazeAtPartner && a.participant == p)
                .map(|a| (a.start, a.end))
                .collect(),
        )
    };
    let mutual = merge_intervals(intersect(&gaze(Participant::A), &gaze(Participant::B)));
    ces.extend(
        mutual
            .iter()
            .filter(|(s, e)| e - s >= config.min_gaze_overlap_s)
            .map(|&(s, _)| ConnectionEvent {
                kind: ConnectionKind::MutualFacialGaze,
                time: s,
            }),
    );

    // adjacency pairs
    let mut turns: Vec<&EventAnnotation> = annotations
        .iter()
        .filter(|a| a.kind == AnnotationKind::Turn)
        .collect();
    turns.sort_by(|a, b| a.start.total_cmp(&b.start).then(a.end.total_cmp(&b.end)));
    for p in [Participant::A, Participant::B] {
        let own: Vec<_> = turns.iter().filter(|t| t.participant == p).collect();
        if let Some(w) = own.windows(2).find(|w| w[1].start < w[0].end) {
            return Err(Error::InvalidAnnotation(format!(
                "overlapping turns by {p:?}: [{}, {}] and [{}, {}]",
                w[0].start, w[0].end, w[1].start, w[1].end
            )));
        }
    }
    for pair in turns.windows(2) {
        let (prev, next) = (pair[0], pair[1]);
        let gap = next.start - prev.end;
        if next.participant != prev.participant && gap > 0.0 && gap <= config.adjacency_gap_s {
            ces.push(ConnectionEvent {
                kind: ConnectionKind::AdjacencyPair,
                time: next.start,
            });
        }
    }

    // backchannels of either participant
    ces.extend(
        annotations
            .iter()
            .filter(|a| matches!(a.kind, AnnotationKind::Backchannel(_)))
            .map(|a| ConnectionEvent {
                kind: ConnectionKind::Backchannel,
                time: a.start,
            }),
    );

    ces.sort_by(|a, b| a.time.total_cmp(&b.time).then(a.kind.cmp(&b.kind)));
    Ok(ces)
}

/// Number of events with time in `(lo, hi]` of a sorted stream.
fn count_in_half_open_left(ces: &[ConnectionEvent], lo: f64, hi: f64) -> usize {
    let a = ces.partition_point(|c| c.time <= lo);
    let b = ces.partition_point(|c| c.time <= hi);
    b.saturating_sub(a)
}

/// Number of events with time in `[lo, hi)` of a sorted stream.
fn count_in_half_open_right(ces: &[ConnectionEvent], lo: f64, hi: f64) -> usize {
    let a = ces.partition_point(|c| c.time < lo);
    let b = ces.partition_point(|c| c.time < hi);
    b.saturating_sub(a)
}

/// Trailing pace at `t`: CEs in `(t - w, t]` divided by `w`, where
/// `w = max(1 s, min(window_s, t - session_start))`.
pub fn pace_at(ces: &[ConnectionEvent], t: f64, window_s: f64, session_start: f64) -> Result<f64> {
    pace_trailing(ces, t, window_s, session_start, 1.0)
}

fn pace_trailing(
    ces: &[ConnectionEvent],
    t: f64,
    window_s: f64,
    session_start: f64,
    min_window_s: f64,
) -> Result<f64> {
    if t < session_start {
        return Err(Error::BeforeSessionStart {
            t,
            start: session_start,
        });
    }
    let w = window_s.min(t - session_start).max(min_window_s);
    Ok(count_in_half_open_left(ces, t - w, t) as f64 / w)
}

/// Leading pace at `t`: CEs in `[t, t + w)` divided by `w`, where
/// `w = max(1 s, min(window_s, session_end - t))`.
pub fn pace_leading(
    ces: &[ConnectionEvent],
    t: f64,
    window_s: f64,
    session_end: f64,
    min_window_s: f64,
) -> f64 {
    let w = window_s.min(session_end - t).max(min_window_s);
    count_in_half_open_right(ces, t, t + w) as f64 / w
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PaceSeries {
    pub rewards: Vec<f64>,
    pub window_s: f64,
    pub frame_rate: f64,
}

impl PaceSeries {
    pub fn timestamp(&self, tick: usize) -> f64 {
        tick as f64 / self.frame_rate
    }
}

/// Reward for every tick `i` in `0..n_frames`, evaluated at `t = i / frame_rate`
/// with the session starting at zero.
pub fn reward_series(
    ces: &[ConnectionEvent],
    n_frames: usize,
    config: &RewardConfig,
) -> PaceSeries {
    let session_end = n_frames as f64 / config.frame_rate;
    let rewards = (0..n_frames)
        .map(|i| {
            let t = i as f64 / config.frame_rate;
            match config.alignment {
                WindowAlignment::Trailing => {
                    pace_trailing(ces, t, config.window_s, 0.0, config.min_window_s)
                        .expect("tick is inside the session")
                }
                WindowAlignment::Leading => {
                    pace_leading(ces, t, config.window_s, session_end, config.min_window_s)
                }
            }
        })
        .collect();
    PaceSeries {
        rewards,
        window_s: config.window_s,
        frame_rate: config.frame_rate,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use AnnotationKind::*;
    use Participant::*;

    fn ce(t: f64) -> ConnectionEvent {
        ConnectionEvent {
            kind: ConnectionKind::Backchannel,
            time: t,
        }
    }

    fn cfg() -> RewardConfig {
        RewardConfig::default()
    }

    #[test]
    fn gaze_overlaps_and_laugh_give_three_events() {
        let ann = vec![
            EventAnnotation::new(GazeAtPartner, A, 1.0, 3.0),
            EventAnnotation::new(GazeAtPartner, B, 2.0, 4.0),
            EventAnnotation::new(GazeAtPartner, A, 10.0, 12.0),
            EventAnnotation::new(GazeAtPartner, B, 9.0, 10.5),
            EventAnnotation::new(Backchannel(BackchannelKind::Laugh), B, 5.0, 6.0),
        ];
        let ces = extract_connection_events(&ann, &cfg()).unwrap();
        let got: Vec<_> = ces.iter().map(|c| (c.kind, c.time)).collect();
        assert_eq!(
            got,
            vec![
                (ConnectionKind::MutualFacialGaze, 2.0),
                (ConnectionKind::Backchannel, 5.0),
                (ConnectionKind::MutualFacialGaze, 10.0),
            ]
        );
    }

    #[test]
    fn short_gaze_overlap_is_ignored() {
        let ann = vec![
            EventAnnotation::new(GazeAtPartner, A, 1.0, 2.05),
            EventAnnotation::new(GazeAtPartner, B, 2.0, 3.0),
        ];
        assert!(extract_connection_events(&ann, &cfg()).unwrap().is_empty());
    }

    #[test]
    fn adjacency_pair_gap_rule() {
        let ann = vec![
            EventAnnotation::new(Turn, A, 0.5, 3.0),
            EventAnnotation::new(Turn, B, 3.4, 6.0),
            // overlap: no CE
            EventAnnotation::new(Turn, A, 5.5, 8.0),
            // gap 1.5 s: no CE
            EventAnnotation::new(Turn, B, 9.5, 10.0),
            // same speaker continuing: no CE
            EventAnnotation::new(Turn, B, 10.2, 11.0),
        ];
        let ces = extract_connection_events(&ann, &cfg()).unwrap();
        assert_eq!(ces.len(), 1);
        assert_eq!(ces[0].kind, ConnectionKind::AdjacencyPair);
        assert!((ces[0].time - 3.4).abs() < 1e-12);
    }

    #[test]
    fn overlapping_same_speaker_turns_rejected() {
        let ann = vec![
            EventAnnotation::new(Turn, A, 0.0, 3.0),
            EventAnnotation::new(Turn, A, 2.0, 4.0),
        ];
        assert!(matches!(
            extract_connection_events(&ann, &cfg()),
            Err(Error::InvalidAnnotation(_))
        ));
    }

    #[test]
    fn empty_annotations() {
        assert!(extract_connection_events(&[], &cfg()).unwrap().is_empty());
    }

    #[test]
    fn inverted_interval_rejected() {
        let ann = vec![EventAnnotation::new(GazeAtPartner, A, 2.0, 1.0)];
        assert!(extract_connection_events(&ann, &cfg()).is_err());
    }

    #[test]
    fn pace_examples() {
        let ces = vec![ce(20.0), ce(25.0), ce(30.0)];
        assert_eq!(pace_at(&ces, 30.0, 15.0, 0.0).unwrap(), 0.2);
        assert_eq!(pace_at(&ces, 100.0, 15.0, 0.0).unwrap(), 0.0);
        let early = vec![ce(3.0), ce(7.0)];
        assert_eq!(pace_at(&early, 10.0, 15.0, 0.0).unwrap(), 0.2);
        assert!(matches!(
            pace_at(&early, -1.0, 15.0, 0.0),
            Err(Error::BeforeSessionStart { .. })
        ));
    }

    #[test]
    fn single_event_support() {
        let series = reward_series(&[ce(5.0)], 40 * 30, &cfg());
        for (i, r) in series.rewards.iter().enumerate() {
            let t = i as f64 / 40.0;
            assert_eq!(*r > 0.0, (5.0..20.0).contains(&t), "t = {t}");
        }
        // inside the full window the pace is exactly 1/15
        assert_eq!(series.rewards[40 * 16], 1.0 / 15.0);
    }

    #[test]
    fn no_events_all_zero() {
        assert!(reward_series(&[], 100, &cfg())
            .rewards
            .iter()
            .all(|&r| r == 0.0));
    }

    #[test]
    fn doubling_density_doubles_reward() {
        let base: Vec<_> = [2.0, 7.5, 13.0, 40.0].into_iter().map(ce).collect();
        let mut doubled = Vec::new();
        for c in &base {
            doubled.push(*c);
            doubled.push(*c);
        }
        let a = reward_series(&base, 2400, &cfg());
        let b = reward_series(&doubled, 2400, &cfg());
        for (x, y) in a.rewards.iter().zip(&b.rewards) {
            assert_eq!(2.0 * x, *y);
        }
    }

    #[test]
    fn leading_window_looks_ahead() {
        let c = RewardConfig {
            alignment: WindowAlignment::Leading,
            ..cfg()
        };
        let series = reward_series(&[ce(20.0)], 40 * 60, &c);
        for (i, r) in series.rewards.iter().enumerate() {
            let t = i as f64 / 40.0;
            assert_eq!(*r > 0.0, t > 5.0 && t <= 20.0, "t = {t}");
        }
    }

    fn stream() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(0.0f64..60.0, 0..30)
    }

    fn to_ces(mut ts: Vec<f64>) -> Vec<ConnectionEvent> {
        ts.sort_by(f64::total_cmp);
        ts.into_iter().map(ce).collect()
    }

    proptest! {
        #[test]
        fn rewards_bounded(ts in stream()) {
            let n = ts.len() as f64;
            let s = reward_series(&to_ces(ts), 2400, &cfg());
            prop_assert!(s.rewards.iter().all(|&r| r >= 0.0 && r <= n));
        }

        #[test]
        fn time_shift_equivariance(ts in stream(), shift_ticks in 1usize..200) {
            let shift = shift_ticks as f64 / 40.0;
            let base = to_ces(ts.clone());
            let moved = to_ces(ts.iter().map(|t| t + shift).collect());
            for tick in (15 * 40)..(60 * 40) {
                let t = tick as f64 / 40.0;
                let a = pace_at(&base, t, 15.0, 0.0).unwrap();
                let b = pace_at(&moved, t + shift, 15.0, 0.0).unwrap();
                let on_boundary = base
                    .iter()
                    .any(|c| ((t - 15.0) - c.time).abs() < 1e-9 || (t - c.time).abs() < 1e-9);
                prop_assert!((a - b).abs() < 1e-12 || on_boundary);
            }
        }
    }
}
