//! Per-session `<s, a, r, s'>` tuples at 40 Hz, role-swap augmentation,
//! leave-one-subject-out folds and persistence.
//!
//! A [`TupleDataset`] keeps each session's state stream once and derives
//! transitions from consecutive ticks, so `s'` of transition `t` is the very
//! same row as `s` of transition `t + 1` and no transition can cross a
//! session boundary.

pub mod ingest;
pub mod io;
pub mod split;

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::engagement::Participant;
use crate::error::{Error, Result};
use crate::features::StateVector;

pub use split::{loso_split, Fold, FoldSplit};

/// Binary action: 0 = no backchannel, 1 = backchannel.
pub type Action = u8;

/// Per-tick binary labels: `a_t = 1` iff `t / frame_rate` falls in the union
/// of the half-open intervals.
pub fn label_actions(intervals: &[(f64, f64)], n_frames: usize, frame_rate: f64) -> Vec<Action> {
    let mut labels = vec![0; n_frames];
    for &(start, end) in intervals {
        if !(start < end) {
            continue;
        }
        let lo = ((start * frame_rate).floor() as i64 - 1).max(0) as usize;
        let hi = (((end * frame_rate).ceil() as i64 + 1).max(0) as usize).min(n_frames);
        for (i, l) in labels.iter_mut().enumerate().take(hi).skip(lo) {
            let t = i as f64 / frame_rate;
            if t >= start && t < end {
                *l = 1;
            }
        }
    }
    labels
}

/// One participant's view of a session: states from their audio, actions from
/// the partner's backchannels and the rewards seen from that perspective.
#[derive(Debug, Clone, PartialEq)]
pub struct Perspective {
    pub states: Vec<StateVector>,
    pub actions: Vec<Action>,
    pub rewards: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionRecord {
    pub session_id: String,
    pub subject_pair_id: String,
    /// Participant whose speech forms the environment state.
    pub env_participant: Participant,
    pub states: Vec<StateVector>,
    pub actions: Vec<Action>,
    pub rewards: Vec<f64>,
    /// The flipped perspective, when the second channel is available.
    pub counterpart: Option<Perspective>,
}

impl SessionRecord {
    pub fn validate(&self) -> Result<()> {
        let n = self.states.len();
        if self.actions.len() != n || self.rewards.len() != n {
            return Err(Error::Validation(format!(
                "session {}: {} states, {} actions, {} rewards",
                self.session_id,
                n,
                self.actions.len(),
                self.rewards.len()
            )));
        }
        if self.actions.iter().any(|&a| a > 1) {
            return Err(Error::Validation(format!(
                "session {}: actions must be 0 or 1",
                self.session_id
            )));
        }
        if self.rewards.iter().any(|&r| !(r >= 0.0) || !r.is_finite()) {
            return Err(Error::Validation(format!(
                "session {}: rewards must be finite and nonnegative",
                self.session_id
            )));
        }
        Ok(())
    }
}

/// Owned transition, mainly for inspection and small-scale tests.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub s: StateVector,
    pub a: Action,
    pub r: f64,
    pub s_next: StateVector,
    pub session_id: String,
    pub frame_index: usize,
}

/// `(s_t, a_t, r_{t+1}, s_{t+1})` for every consecutive pair of states; the
/// reward is the pace at the successor tick. Sessions with fewer than two
/// states yield nothing.
pub fn build_tuples(session: &SessionRecord) -> Vec<Transition> {
    if session.states.len() < 2 {
        log::warn!(
            "session {} has {} states; no transitions",
            session.session_id,
            session.states.len()
        );
        return Vec::new();
    }
    (0..session.states.len() - 1)
        .map(|t| Transition {
            s: session.states[t].clone(),
            a: session.actions[t],
            r: session.rewards[t + 1],
            s_next: session.states[t + 1].clone(),
            session_id: session.session_id.clone(),
            frame_index: t,
        })
        .collect()
}

/// Flips the environment and behavior roles. Errors when the second channel
/// is missing; applying it twice restores the original record.
pub fn swap_roles(session: &SessionRecord) -> Result<SessionRecord> {
    let other = session.counterpart.as_ref().ok_or_else(|| {
        Error::Validation(format!(
            "session {}: no second channel, cannot swap roles",
            session.session_id
        ))
    })?;
    Ok(SessionRecord {
        session_id: session.session_id.clone(),
        subject_pair_id: session.subject_pair_id.clone(),
        env_participant: session.env_participant.other(),
        states: other.states.clone(),
        actions: other.actions.clone(),
        rewards: other.rewards.clone(),
        counterpart: Some(Perspective {
            states: session.states.clone(),
            actions: session.actions.clone(),
            rewards: session.rewards.clone(),
        }),
    })
}

/// A session's state stream stored compactly (32-bit rows).
#[derive(Debug, Clone, PartialEq)]
pub struct SessionBlock {
    pub session_id: String,
    pub subject_pair_id: String,
    pub env_participant: Participant,
    /// Tick index of the first state within the session.
    pub first_frame: u64,
    dim: usize,
    states: Vec<f32>,
    actions: Vec<Action>,
    rewards: Vec<f64>,
}

impl SessionBlock {
    pub fn new(
        session_id: String,
        subject_pair_id: String,
        env_participant: Participant,
        first_frame: u64,
        dim: usize,
        states: Vec<f32>,
        actions: Vec<Action>,
        rewards: Vec<f64>,
    ) -> Result<Self> {
        let n = actions.len();
        if states.len() != n * dim || rewards.len() != n {
            return Err(Error::Validation(format!(
                "session {session_id}: inconsistent block lengths"
            )));
        }
        if actions.iter().any(|&a| a > 1) || rewards.iter().any(|r| !(*r >= 0.0)) {
            return Err(Error::Validation(format!(
                "session {session_id}: invalid action or reward"
            )));
        }
        Ok(Self {
            session_id,
            subject_pair_id,
            env_participant,
            first_frame,
            dim,
            states,
            actions,
            rewards,
        })
    }

    fn from_record(record: &SessionRecord) -> Result<Self> {
        record.validate()?;
        let dim = record.states.first().map_or(0, |s| s.values.len());
        let mut states = Vec::with_capacity(record.states.len() * dim);
        for s in &record.states {
            if s.values.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: s.values.len(),
                });
            }
            states.extend(s.values.iter().map(|&v| v as f32));
        }
        let first_frame = record
            .states
            .first()
            .map_or(0, |s| (s.timestamp * 40.0).round().max(0.0) as u64);
        Self::new(
            record.session_id.clone(),
            record.subject_pair_id.clone(),
            record.env_participant,
            first_frame,
            dim,
            states,
            record.actions.clone(),
            record.rewards.clone(),
        )
    }

    /// Display key distinguishing the two perspectives of one session.
    pub fn key(&self) -> String {
        format!("{}:{}", self.session_id, self.env_participant.as_str())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
    pub fn n_states(&self) -> usize {
        self.actions.len()
    }
    pub fn n_transitions(&self) -> usize {
        self.n_states().saturating_sub(1)
    }
    pub fn state(&self, t: usize) -> &[f32] {
        &self.states[t * self.dim..(t + 1) * self.dim]
    }
    pub fn states_flat(&self) -> &[f32] {
        &self.states
    }
    pub fn actions(&self) -> &[Action] {
        &self.actions
    }
    pub fn rewards(&self) -> &[f64] {
        &self.rewards
    }
}

/// Borrowed view of one transition.
#[derive(Debug, Clone, Copy)]
pub struct TransitionRef<'a> {
    pub s: &'a [f32],
    pub a: Action,
    pub r: f64,
    pub s_next: &'a [f32],
    pub session: usize,
    pub frame_index: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub corpus_hash: String,
    pub config: serde_json::Value,
    pub tuple_counts: BTreeMap<String, usize>,
}

/// Immutable collection of session blocks with a global transition index.
#[derive(Debug, Clone, PartialEq)]
pub struct TupleDataset {
    dim: usize,
    config_hash: String,
    sessions: Vec<Arc<SessionBlock>>,
    /// `offsets[i]` = global index of session `i`'s first transition.
    offsets: Vec<usize>,
    fold_labels: Vec<Option<u32>>,
    manifest: DatasetManifest,
}

impl TupleDataset {
    pub fn dim(&self) -> usize {
        self.dim
    }
    pub fn config_hash(&self) -> &str {
        &self.config_hash
    }
    pub fn manifest(&self) -> &DatasetManifest {
        &self.manifest
    }
    pub fn sessions(&self) -> &[Arc<SessionBlock>] {
        &self.sessions
    }
    pub fn fold_labels(&self) -> &[Option<u32>] {
        &self.fold_labels
    }
    pub fn len(&self) -> usize {
        self.offsets.last().copied().unwrap_or(0)
    }
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
    pub fn n_states(&self) -> usize {
        self.sessions.iter().map(|s| s.n_states()).sum()
    }

    /// Global transition `i`.
    pub fn transition(&self, i: usize) -> TransitionRef<'_> {
        let session = self.offsets.partition_point(|&o| o <= i) - 1;
        let block = &self.sessions[session];
        let t = i - self.offsets[session];
        TransitionRef {
            s: block.state(t),
            a: block.actions[t],
            r: block.rewards[t + 1],
            s_next: block.state(t + 1),
            session,
            frame_index: block.first_frame as usize + t,
        }
    }

    pub fn transitions(&self) -> impl Iterator<Item = TransitionRef<'_>> + '_ {
        self.sessions.iter().enumerate().flat_map(move |(si, b)| {
            (0..b.n_transitions()).map(move |t| TransitionRef {
                s: b.state(t),
                a: b.actions[t],
                r: b.rewards[t + 1],
                s_next: b.state(t + 1),
                session: si,
                frame_index: b.first_frame as usize + t,
            })
        })
    }

    /// Owned copy of transition `i`, states widened to 64-bit.
    pub fn transition_owned(&self, i: usize) -> Transition {
        let t = self.transition(i);
        let block = &self.sessions[t.session];
        let widen = |v: &[f32], frame: usize| StateVector {
            values: v.iter().map(|&x| f64::from(x)).collect(),
            timestamp: frame as f64 / 40.0,
        };
        Transition {
            s: widen(t.s, t.frame_index),
            a: t.a,
            r: t.r,
            s_next: widen(t.s_next, t.frame_index + 1),
            session_id: block.session_id.clone(),
            frame_index: t.frame_index,
        }
    }

    /// Dataset restricted to the sessions whose index satisfies `keep`.
    pub fn filter_sessions(&self, mut keep: impl FnMut(usize, &SessionBlock) -> bool) -> Self {
        let mut builder = DatasetBuilder::new(self.dim, self.config_hash.clone());
        builder.manifest = self.manifest.clone();
        for (i, block) in self.sessions.iter().enumerate() {
            if keep(i, block) {
                builder.push_shared(block.clone(), self.fold_labels[i]);
            }
        }
        builder.build()
    }

    /// Training and test sets for one fold of a split.
    pub fn fold(&self, split: &FoldSplit, k: usize) -> Result<(Self, Self)> {
        let fold = split.folds.get(k).ok_or_else(|| {
            Error::Validation(format!(
                "fold {k} out of range ({} folds)",
                split.folds.len()
            ))
        })?;
        let is_test = |b: &SessionBlock| fold.test_pairs.contains(&b.subject_pair_id);
        Ok((
            self.filter_sessions(|_, b| !is_test(b)),
            self.filter_sessions(|_, b| is_test(b)),
        ))
    }

    /// `(session_id, subject_pair_id)` for every block.
    pub fn session_ids(&self) -> Vec<(String, String)> {
        self.sessions
            .iter()
            .map(|b| (b.session_id.clone(), b.subject_pair_id.clone()))
            .collect()
    }
}

/// Append-only construction of a [`TupleDataset`].
#[derive(Debug)]
pub struct DatasetBuilder {
    dim: usize,
    config_hash: String,
    sessions: Vec<Arc<SessionBlock>>,
    fold_labels: Vec<Option<u32>>,
    pub manifest: DatasetManifest,
}

impl DatasetBuilder {
    pub fn new(dim: usize, config_hash: impl Into<String>) -> Self {
        Self {
            dim,
            config_hash: config_hash.into(),
            sessions: Vec::new(),
            fold_labels: Vec::new(),
            manifest: DatasetManifest::default(),
        }
    }

    pub fn push_record(&mut self, record: &SessionRecord) -> Result<()> {
        let block = SessionBlock::from_record(record)?;
        self.push_block(block)
    }

    pub fn push_block(&mut self, block: SessionBlock) -> Result<()> {
        if block.n_states() > 0 && block.dim != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: block.dim,
            });
        }
        self.manifest
            .tuple_counts
            .insert(block.key(), block.n_transitions());
        self.push_shared(Arc::new(block), None);
        Ok(())
    }

    fn push_shared(&mut self, block: Arc<SessionBlock>, fold: Option<u32>) {
        self.sessions.push(block);
        self.fold_labels.push(fold);
    }

    pub fn len(&self) -> usize {
        self.sessions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sessions.is_empty()
    }

    /// Labels every session with its LOSO fold index.
    pub fn assign_folds(&mut self, split: &FoldSplit) {
        for (label, block) in self.fold_labels.iter_mut().zip(&self.sessions) {
            *label = split.fold_of_pair(&block.subject_pair_id).map(|k| k as u32);
        }
    }

    pub fn build(self) -> TupleDataset {
        let mut offsets = Vec::with_capacity(self.sessions.len() + 1);
        offsets.push(0);
        for b in &self.sessions {
            offsets.push(offsets.last().unwrap() + b.n_transitions());
        }
        TupleDataset {
            dim: self.dim,
            config_hash: self.config_hash,
            sessions: self.sessions,
            offsets,
            fold_labels: self.fold_labels,
            manifest: self.manifest,
        }
    }
}

/// Records → dataset, optionally adding each record's role-swapped twin.
/// Records without a second channel are kept but not augmented.
pub fn assemble(
    records: &[SessionRecord],
    augment: bool,
    config_hash: &str,
) -> Result<TupleDataset> {
    let dim = records
        .iter()
        .find_map(|r| r.states.first().map(|s| s.values.len()))
        .unwrap_or(0);
    let mut builder = DatasetBuilder::new(dim, config_hash);
    for record in records {
        builder.push_record(record)?;
        if augment {
            match swap_roles(record) {
                Ok(twin) => builder.push_record(&twin)?,
                Err(e) => log::warn!("augmentation skipped: {e}"),
            }
        }
    }
    let pairs: Vec<_> = records
        .iter()
        .map(|r| (r.session_id.clone(), r.subject_pair_id.clone()))
        .collect();
    if let Ok(split) = loso_split(&pairs) {
        builder.assign_folds(&split);
    }
    Ok(builder.build())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sv(x: f64, t: f64) -> StateVector {
        StateVector {
            values: vec![x, -x],
            timestamp: t,
        }
    }

    pub(crate) fn record(id: &str, pair: &str, n: usize, with_twin: bool) -> SessionRecord {
        let states: Vec<_> = (0..n)
            .map(|i| sv(i as f64, 1.0 + i as f64 / 40.0))
            .collect();
        let counterpart = with_twin.then(|| Perspective {
            states: (0..n)
                .map(|i| sv(100.0 + i as f64, 1.0 + i as f64 / 40.0))
                .collect(),
            actions: (0..n).map(|i| (i % 3 == 0) as u8).collect(),
            rewards: (0..n).map(|i| i as f64 * 0.5).collect(),
        });
        SessionRecord {
            session_id: id.into(),
            subject_pair_id: pair.into(),
            env_participant: Participant::A,
            states,
            actions: (0..n).map(|i| (i % 2) as u8).collect(),
            rewards: (0..n).map(|i| i as f64 * 0.25).collect(),
            counterpart,
        }
    }

    #[test]
    fn label_examples() {
        let a = label_actions(&[(1.0, 2.0)], 200, 40.0);
        assert_eq!(a.iter().filter(|&&x| x == 1).count(), 40);
        assert!(a[40..80].iter().all(|&x| x == 1));
        assert_eq!((a[39], a[80]), (0, 0));
        assert!(label_actions(&[], 100, 40.0).iter().all(|&x| x == 0));
        let b = label_actions(&[(1.0, 2.0), (1.5, 2.5)], 200, 40.0);
        assert_eq!(b.iter().filter(|&&x| x == 1).count(), 60);
        assert!(b[40..100].iter().all(|&x| x == 1));
    }

    #[test]
    fn tuple_counts_and_pairing() {
        let r = record("s", "p", 100, false);
        assert_eq!(build_tuples(&r).len(), 99);
        let small = record("s", "p", 3, false);
        let t = build_tuples(&small);
        assert_eq!(t.len(), 2);
        assert_eq!(
            (t[0].s.values[0], t[0].a, t[0].r, t[0].s_next.values[0]),
            (0.0, 0, 0.25, 1.0)
        );
        assert_eq!(
            (t[1].s.values[0], t[1].a, t[1].r, t[1].s_next.values[0]),
            (1.0, 1, 0.5, 2.0)
        );
        assert!(build_tuples(&record("s", "p", 1, false)).is_empty());
    }

    #[test]
    fn constant_rewards_carry_through() {
        let mut r = record("s", "p", 10, false);
        r.rewards = vec![0.7; 10];
        assert!(build_tuples(&r).iter().all(|t| t.r == 0.7));
    }

    #[test]
    fn swap_is_an_involution() {
        let r = record("s", "p", 20, true);
        let once = swap_roles(&r).unwrap();
        assert_eq!(once.env_participant, Participant::B);
        assert_eq!(once.states[0].values[0], 100.0);
        assert_eq!(swap_roles(&once).unwrap(), r);
        assert!(swap_roles(&record("s", "p", 20, false)).is_err());
    }

    #[test]
    fn augmentation_doubles_tuples() {
        let recs = vec![record("s1", "p1", 50, true), record("s2", "p2", 70, true)];
        let plain = assemble(&recs, false, "h").unwrap();
        let aug = assemble(&recs, true, "h").unwrap();
        assert_eq!(plain.len(), 49 + 69);
        assert_eq!(aug.len(), 2 * plain.len());
        // twins share the fold of their pair
        assert_eq!(aug.fold_labels()[0], aug.fold_labels()[1]);
        assert_ne!(aug.fold_labels()[0], aug.fold_labels()[2]);
    }

    #[test]
    fn transitions_chain_within_sessions() {
        let recs = vec![record("s1", "p1", 30, true), record("s2", "p2", 40, false)];
        let ds = assemble(&recs, true, "h").unwrap();
        let all: Vec<_> = ds.transitions().collect();
        assert_eq!(all.len(), ds.len());
        for w in all.windows(2) {
            if w[0].session == w[1].session {
                assert_eq!(w[0].s_next, w[1].s);
                assert_eq!(w[0].s_next.as_ptr(), w[1].s.as_ptr());
            }
        }
        for (i, t) in all.iter().enumerate() {
            let u = ds.transition(i);
            assert_eq!(
                (t.session, t.frame_index, t.a, t.r),
                (u.session, u.frame_index, u.a, u.r)
            );
        }
        assert_eq!(ds.transition_owned(0).session_id, "s1");
    }

    #[test]
    fn fold_views_partition_sessions() {
        let recs: Vec<_> = (0..6)
            .map(|i| record(&format!("s{i}"), &format!("p{}", i % 3), 10, true))
            .collect();
        let ds = assemble(&recs, true, "h").unwrap();
        let split = loso_split(&ds.session_ids()).unwrap();
        assert_eq!(split.folds.len(), 3);
        for k in 0..3 {
            let (train, test) = ds.fold(&split, k).unwrap();
            assert_eq!(
                train.sessions().len() + test.sessions().len(),
                ds.sessions().len()
            );
            assert_eq!(test.sessions().len(), 4);
        }
    }

    #[test]
    fn invalid_records_rejected() {
        let mut r = record("s", "p", 5, false);
        r.actions[0] = 2;
        assert!(SessionBlock::from_record(&r).is_err());
        let mut r = record("s", "p", 5, false);
        r.rewards.pop();
        assert!(r.validate().is_err());
    }
}
