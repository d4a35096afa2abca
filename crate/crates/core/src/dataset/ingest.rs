//! Corpus ingestion: feature files + annotations + session index → tuples.
//!
//! Layout: `<annotations>/sessions.csv` (`session_id,subject_pair_id,duration_s`),
//! `<annotations>/<session>.jsonl` and `<features>/<session>_<A|B>.{csv,jsonl}`.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::engagement::io::read_annotations;
use crate::engagement::{
    extract_connection_events, reward_series, AnnotationKind, BackchannelKind, EventAnnotation,
    Participant, RewardConfig,
};
use crate::error::{Error, Result};
use crate::features::io::read_features;
use crate::features::io::FeatureFile;
use crate::features::{
    standardize_per_session, summarize_stream, BaseFeatureFrame, Normalization, StateVector,
    BASE_DIM,
};
use crate::manifest::{collect_files, hash_files};

use super::{assemble, label_actions, Perspective, SessionRecord, TupleDataset};

pub const SESSION_INDEX: &str = "sessions.csv";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionInfo {
    pub session_id: String,
    pub subject_pair_id: String,
    pub duration_s: f64,
}

pub fn write_session_index(path: &Path, sessions: &[SessionInfo]) -> Result<()> {
    let mut out = String::from("session_id,subject_pair_id,duration_s\n");
    for s in sessions {
        writeln!(
            out,
            "{},{},{}",
            s.session_id, s.subject_pair_id, s.duration_s
        )
        .unwrap();
    }
    fs::write(path, out).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

pub fn read_session_index(path: &Path) -> Result<Vec<SessionInfo>> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    let bad = |line: &str| Error::Parse {
        path: path.to_path_buf(),
        msg: format!("bad session row {line:?}"),
    };
    text.lines()
        .skip(1)
        .filter(|l| !l.trim().is_empty())
        .map(|line| {
            let f: Vec<&str> = line.split(',').map(str::trim).collect();
            if f.len() != 3 || f[0].is_empty() || f[1].is_empty() {
                return Err(bad(line));
            }
            let duration_s: f64 = f[2].parse().map_err(|_| bad(line))?;
            Ok(SessionInfo {
                session_id: f[0].into(),
                subject_pair_id: f[1].into(),
                duration_s,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IngestOptions {
    /// Participant whose speech is the environment.
    pub env_participant: Participant,
    pub augment: bool,
    pub normalization: Normalization,
    pub reward: RewardConfig,
}

impl Default for IngestOptions {
    fn default() -> Self {
        Self {
            env_participant: Participant::A,
            augment: false,
            normalization: Normalization::None,
            reward: RewardConfig::default(),
        }
    }
}

pub fn feature_path(dir: &Path, session_id: &str, p: Participant) -> Option<PathBuf> {
    ["csv", "jsonl"]
        .iter()
        .map(|ext| dir.join(format!("{session_id}_{}.{ext}", p.as_str())))
        .find(|p| p.is_file())
}

/// States of a feature file. Files of base frames (19 columns) are
/// summarized here; state files pass through.
pub fn file_states(file: FeatureFile, frame_rate: f64) -> Vec<StateVector> {
    if file
        .states
        .first()
        .is_some_and(|s| s.values.len() == BASE_DIM)
    {
        let frames: Vec<BaseFeatureFrame> = file
            .states
            .iter()
            .map(|s| BaseFeatureFrame {
                values: s.values[..].try_into().expect("base frame width"),
                timestamp: s.timestamp,
            })
            .collect();
        summarize_stream(&frames, frame_rate)
    } else {
        file.states
    }
}

pub fn laugh_intervals(annotations: &[EventAnnotation], by: Participant) -> Vec<(f64, f64)> {
    annotations
        .iter()
        .filter(|a| {
            a.participant == by && a.kind == AnnotationKind::Backchannel(BackchannelKind::Laugh)
        })
        .map(|a| (a.start, a.end))
        .collect()
}

/// States of `env`, actions from the partner's laughs and the session reward,
/// aligned on the 40 Hz tick grid. States beyond the session are dropped.
fn perspective(
    mut states: Vec<StateVector>,
    annotations: &[EventAnnotation],
    env: Participant,
    rewards: &[f64],
    opts: &IngestOptions,
) -> Perspective {
    let fr = opts.reward.frame_rate;
    let n_ticks = rewards.len();
    let labels = label_actions(&laugh_intervals(annotations, env.other()), n_ticks, fr);
    states.retain(|s| ((s.timestamp * fr).round() as usize) < n_ticks);
    if opts.normalization == Normalization::PerSession {
        standardize_per_session(&mut states);
    }
    let ticks: Vec<usize> = states
        .iter()
        .map(|s| (s.timestamp * fr).round() as usize)
        .collect();
    Perspective {
        actions: ticks.iter().map(|&t| labels[t]).collect(),
        rewards: ticks.iter().map(|&t| rewards[t]).collect(),
        states,
    }
}

/// Assembles one session from in-memory parts.
pub fn session_from_parts(
    info: &SessionInfo,
    env_states: Vec<StateVector>,
    other_states: Option<Vec<StateVector>>,
    annotations: &[EventAnnotation],
    opts: &IngestOptions,
) -> Result<SessionRecord> {
    for a in annotations {
        a.validate(Some(info.duration_s))?;
    }
    let ces = extract_connection_events(annotations, &opts.reward)?;
    let n_ticks = (info.duration_s * opts.reward.frame_rate).round() as usize;
    let rewards = reward_series(&ces, n_ticks, &opts.reward).rewards;
    let env = opts.env_participant;
    let main = perspective(env_states, annotations, env, &rewards, opts);
    let counterpart =
        other_states.map(|s| perspective(s, annotations, env.other(), &rewards, opts));
    Ok(SessionRecord {
        session_id: info.session_id.clone(),
        subject_pair_id: info.subject_pair_id.clone(),
        env_participant: env,
        states: main.states,
        actions: main.actions,
        rewards: main.rewards,
        counterpart,
    })
}

fn index_path(features: &Path, annotations: &Path) -> Result<PathBuf> {
    [annotations, features]
        .iter()
        .map(|d| d.join(SESSION_INDEX))
        .find(|p| p.is_file())
        .ok_or_else(|| {
            Error::Validation(format!(
                "no {SESSION_INDEX} in {} or {}",
                annotations.display(),
                features.display()
            ))
        })
}

pub fn load_sessions(
    features: &Path,
    annotations: &Path,
    opts: &IngestOptions,
) -> Result<Vec<SessionRecord>> {
    let index = read_session_index(&index_path(features, annotations)?)?;
    let mut hashes = std::collections::BTreeSet::new();
    let mut records = Vec::with_capacity(index.len());
    for info in &index {
        let env = opts.env_participant;
        let env_path = feature_path(features, &info.session_id, env).ok_or_else(|| {
            Error::Validation(format!(
                "missing features for session {} participant {}",
                info.session_id,
                env.as_str()
            ))
        })?;
        let fr = opts.reward.frame_rate;
        let env_file = read_features(&env_path)?;
        hashes.insert(env_file.config_hash.clone());
        let env_states = file_states(env_file, fr);
        let other = match feature_path(features, &info.session_id, env.other()) {
            Some(p) => Some(file_states(read_features(&p)?, fr)),
            None => {
                if opts.augment {
                    log::warn!(
                        "session {}: second channel missing, role swap skipped",
                        info.session_id
                    );
                }
                None
            }
        };
        let ann_path = annotations.join(format!("{}.jsonl", info.session_id));
        let ann = read_annotations(&ann_path)?;
        records.push(session_from_parts(info, env_states, other, &ann, opts)?);
    }
    if hashes.len() > 1 {
        log::warn!(
            "feature files were extracted with {} different configs",
            hashes.len()
        );
    }
    Ok(records)
}

/// Full ingestion; the manifest records the corpus hash and options.
pub fn build_dataset(
    features: &Path,
    annotations: &Path,
    opts: &IngestOptions,
    config_hash: &str,
) -> Result<TupleDataset> {
    let records = load_sessions(features, annotations, opts)?;
    let mut ds = assemble(&records, opts.augment, config_hash)?;
    let mut files = Vec::new();
    collect_files(features, &mut files)?;
    if annotations != features {
        collect_files(annotations, &mut files)?;
    }
    ds.manifest.corpus_hash = hash_files(&files)?;
    ds.manifest.config = serde_json::to_value(opts)?;
    Ok(ds)
}
