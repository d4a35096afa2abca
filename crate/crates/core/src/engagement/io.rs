//! Annotation files (JSONL, one event per line) and reward CSVs.
//!
//! Annotation line: `{"kind":"backchannel","subkind":"laugh","participant":"B","start":1.2,"end":2.0}`
//! where `kind` is `gaze_at_partner`, `turn` or `backchannel`.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{AnnotationKind, BackchannelKind, EventAnnotation, PaceSeries, Participant};

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawAnnotation {
    kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    subkind: Option<BackchannelKind>,
    participant: Participant,
    start: f64,
    end: f64,
}

impl From<&EventAnnotation> for RawAnnotation {
    fn from(a: &EventAnnotation) -> Self {
        let (kind, subkind) = match a.kind {
            AnnotationKind::GazeAtPartner => ("gaze_at_partner", None),
            AnnotationKind::Turn => ("turn", None),
            AnnotationKind::Backchannel(b) => ("backchannel", Some(b)),
        };
        Self {
            kind: kind.into(),
            subkind,
            participant: a.participant,
            start: a.start,
            end: a.end,
        }
    }
}

impl TryFrom<RawAnnotation> for EventAnnotation {
    type Error = Error;
    fn try_from(r: RawAnnotation) -> Result<Self> {
        let kind = match (r.kind.as_str(), r.subkind) {
            ("gaze_at_partner", None) => AnnotationKind::GazeAtPartner,
            ("turn", None) => AnnotationKind::Turn,
            ("backchannel", Some(b)) => AnnotationKind::Backchannel(b),
            ("backchannel", None) => {
                return Err(Error::InvalidAnnotation(
                    "backchannel without subkind".into(),
                ))
            }
            (k, _) => return Err(Error::InvalidAnnotation(format!("unknown kind {k:?}"))),
        };
        Ok(EventAnnotation {
            kind,
            participant: r.participant,
            start: r.start,
            end: r.end,
        })
    }
}

pub fn write_annotations(path: &Path, annotations: &[EventAnnotation]) -> Result<()> {
    let mut out = String::new();
    for a in annotations {
        out.push_str(&serde_json::to_string(&RawAnnotation::from(a))?);
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

pub fn read_annotations(path: &Path) -> Result<Vec<EventAnnotation>> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, line)| {
            let raw: RawAnnotation = serde_json::from_str(line).map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                msg: format!("line {}: {e}", i + 1),
            })?;
            EventAnnotation::try_from(raw)
        })
        .collect()
}

/// `timestamp,reward` rows.
pub fn write_rewards(path: &Path, series: &PaceSeries) -> Result<()> {
    let mut out = String::from("timestamp,reward\n");
    for (i, r) in series.rewards.iter().enumerate() {
        writeln!(out, "{},{}", series.timestamp(i), r).unwrap();
    }
    fs::write(path, out).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

pub fn read_rewards(path: &Path) -> Result<Vec<(f64, f64)>> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    text.lines()
        .skip(1)
        .filter(|l| !l.is_empty())
        .map(|line| {
            let mut it = line.split(',').map(str::parse::<f64>);
            match (it.next(), it.next()) {
                (Some(Ok(t)), Some(Ok(r))) => Ok((t, r)),
                _ => Err(Error::Parse {
                    path: path.to_path_buf(),
                    msg: format!("bad reward row {line:?}"),
                }),
            }
        })
        .collect()
}
