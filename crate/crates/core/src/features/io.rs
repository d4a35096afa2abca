//! Per-session state files: one row per 25 ms tick, `timestamp` followed by
//! the state values. The header records the producing configuration hash.
//!
//! CSV:
//! ```text
//! # bcrl-features v1 config_hash=<hex> dim=<n>
//! timestamp,f0,f1,...
//! 1,0.25,...
//! ```
//! JSONL: a header object `{"format":"bcrl-features","version":1,"config_hash":..,"dim":..}`
//! followed by `{"t":..,"v":[..]}` per tick.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::StateVector;

pub const FORMAT_VERSION: u32 = 1;
const CSV_MAGIC: &str = "# bcrl-features";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TableFormat {
    Csv,
    Jsonl,
}

impl TableFormat {
    pub fn from_path(path: &Path) -> Result<Self> {
        match path.extension().and_then(|e| e.to_str()) {
            Some("csv") => Ok(Self::Csv),
            Some("jsonl") => Ok(Self::Jsonl),
            _ => Err(Error::Validation(format!(
                "{}: feature files must end in .csv or .jsonl",
                path.display()
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureFile {
    pub config_hash: String,
    pub states: Vec<StateVector>,
}

#[derive(Serialize, Deserialize)]
struct JsonHeader {
    format: String,
    version: u32,
    config_hash: String,
    dim: usize,
}

#[derive(Serialize, Deserialize)]
struct JsonRow {
    t: f64,
    v: Vec<f64>,
}

pub fn write_features(path: &Path, states: &[StateVector], config_hash: &str) -> Result<()> {
    let dim = states.first().map_or(0, |s| s.values.len());
    let text = match TableFormat::from_path(path)? {
        TableFormat::Csv => {
            let mut out = format!(
                "{CSV_MAGIC} v{FORMAT_VERSION} config_hash={config_hash} dim={dim}\ntimestamp"
            );
            for i in 0..dim {
                write!(out, ",f{i}").unwrap();
            }
            out.push('\n');
            for s in states {
                write!(out, "{}", s.timestamp).unwrap();
                for v in &s.values {
                    write!(out, ",{v}").unwrap();
                }
                out.push('\n');
            }
            out
        }
        TableFormat::Jsonl => {
            let mut out = serde_json::to_string(&JsonHeader {
                format: "bcrl-features".into(),
                version: FORMAT_VERSION,
                config_hash: config_hash.into(),
                dim,
            })?;
            out.push('\n');
            for s in states {
                out.push_str(&serde_json::to_string(&JsonRow {
                    t: s.timestamp,
                    v: s.values.clone(),
                })?);
                out.push('\n');
            }
            out
        }
    };
    fs::write(path, text).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

pub fn read_features(path: &Path) -> Result<FeatureFile> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    let parse_err = |msg: String| Error::Parse {
        path: path.to_path_buf(),
        msg,
    };
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| parse_err("empty file".into()))?;
    match TableFormat::from_path(path)? {
        TableFormat::Csv => {
            let rest = header.strip_prefix(CSV_MAGIC).ok_or_else(|| {
                Error::BadHeader(format!("{}: missing feature header", path.display()))
            })?;
            let mut fields = rest.split_whitespace();
            let version: u32 = fields
                .next()
                .and_then(|v| v.strip_prefix('v'))
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| Error::BadHeader("missing version".into()))?;
            if version != FORMAT_VERSION {
                return Err(Error::Version {
                    found: version,
                    expected: FORMAT_VERSION,
                });
            }
            let mut config_hash = String::new();
            let mut dim = None;
            for f in fields {
                if let Some(h) = f.strip_prefix("config_hash=") {
                    config_hash = h.to_string();
                } else if let Some(d) = f.strip_prefix("dim=") {
                    dim = d.parse::<usize>().ok();
                }
            }
            let dim = dim.ok_or_else(|| Error::BadHeader("missing dim".into()))?;
            lines
                .next()
                .ok_or_else(|| parse_err("missing column header".into()))?;
            let mut states = Vec::new();
            for (lineno, line) in lines.enumerate() {
                if line.is_empty() {
                    continue;
                }
                let nums = line
                    .split(',')
                    .map(str::parse::<f64>)
                    .collect::<std::result::Result<Vec<_>, _>>()
                    .map_err(|e| parse_err(format!("row {}: {e}", lineno + 1)))?;
                if nums.len() != dim + 1 {
                    return Err(parse_err(format!(
                        "row {}: expected {} columns, found {}",
                        lineno + 1,
                        dim + 1,
                        nums.len()
                    )));
                }
                states.push(StateVector {
                    timestamp: nums[0],
                    values: nums[1..].to_vec(),
                });
            }
            Ok(FeatureFile {
                config_hash,
                states,
            })
        }
        TableFormat::Jsonl => {
            let h: JsonHeader = serde_json::from_str(header)
                .map_err(|e| Error::BadHeader(format!("{}: {e}", path.display())))?;
            if h.format != "bcrl-features" {
                return Err(Error::BadHeader(format!("unexpected format {}", h.format)));
            }
            if h.version != FORMAT_VERSION {
                return Err(Error::Version {
                    found: h.version,
                    expected: FORMAT_VERSION,
                });
            }
            let mut states = Vec::new();
            for (lineno, line) in lines.enumerate() {
                if line.is_empty() {
                    continue;
                }
                let row: JsonRow = serde_json::from_str(line)
                    .map_err(|e| parse_err(format!("row {}: {e}", lineno + 1)))?;
                if row.v.len() != h.dim {
                    return Err(parse_err(format!("row {}: wrong dimension", lineno + 1)));
                }
                states.push(StateVector {
                    timestamp: row.t,
                    values: row.v,
                });
            }
            Ok(FeatureFile {
                config_hash: h.config_hash,
                states,
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Vec<StateVector> {
        (0..5)
            .map(|i| StateVector {
                values: vec![i as f64 * 0.1, -1e-17, 1.0 / 3.0, 12345.678],
                timestamp: 1.0 + i as f64 * 0.025,
            })
            .collect()
    }

    #[test]
    fn csv_and_jsonl_round_trip_exactly() {
        let dir = tempfile::tempdir().unwrap();
        for name in ["a.csv", "a.jsonl"] {
            let p = dir.path().join(name);
            write_features(&p, &sample(), "abc123").unwrap();
            let back = read_features(&p).unwrap();
            assert_eq!(back.config_hash, "abc123");
            assert_eq!(back.states, sample());
        }
    }

    #[test]
    fn wrong_version_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.csv");
        fs::write(&p, "# bcrl-features v9 config_hash=x dim=1\ntimestamp,f0\n").unwrap();
        assert!(matches!(
            read_features(&p),
            Err(Error::Version { found: 9, .. })
        ));
    }

    #[test]
    fn ragged_row_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.csv");
        fs::write(
            &p,
            "# bcrl-features v1 config_hash=x dim=2\ntimestamp,f0,f1\n1,2\n",
        )
        .unwrap();
        assert!(read_features(&p).is_err());
    }
}
