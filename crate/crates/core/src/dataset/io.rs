//! Dataset persistence: a versioned little-endian binary format (states as
//! 32-bit floats) and a line-oriented JSON alternative.
//!
//! Binary layout: magic `BCRLTUP\0`, `u32` version, config hash, `u32` dim,
//! manifest JSON, `u32` session count, then per session its ids, env
//! participant, fold label (`i64`, -1 for none), first frame, state count and
//! the state/action/reward arrays. Strings are `u32` length + UTF-8 bytes.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::engagement::Participant;
use crate::error::{Error, Result};

use super::{DatasetBuilder, DatasetManifest, SessionBlock, TupleDataset};

pub const MAGIC: &[u8; 8] = b"BCRLTUP\0";
pub const DATASET_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetFormat {
    Binary,
    Jsonl,
}

impl DatasetFormat {
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("jsonl") | Some("json") => DatasetFormat::Jsonl,
            _ => DatasetFormat::Binary,
        }
    }
}

pub fn save(dataset: &TupleDataset, path: &Path) -> Result<()> {
    match DatasetFormat::from_path(path) {
        DatasetFormat::Binary => save_binary(dataset, path),
        DatasetFormat::Jsonl => save_jsonl(dataset, path),
    }
}

pub fn load(path: &Path) -> Result<TupleDataset> {
    match DatasetFormat::from_path(path) {
        DatasetFormat::Binary => load_binary(path),
        DatasetFormat::Jsonl => load_jsonl(path),
    }
}

fn participant_code(p: Participant) -> u8 {
    match p {
        Participant::A => 0,
        Participant::B => 1,
    }
}

fn fold_code(f: Option<u32>) -> i64 {
    f.map_or(-1, i64::from)
}

pub fn save_binary(dataset: &TupleDataset, path: &Path) -> Result<()> {
    let io_err = |e| Error::io(format!("writing {}", path.display()), e);
    let file = fs::File::create(path).map_err(io_err)?;
    let mut w = BufWriter::new(file);
    let put_str = |w: &mut BufWriter<fs::File>, s: &str| -> std::io::Result<()> {
        w.write_all(&(s.len() as u32).to_le_bytes())?;
        w.write_all(s.as_bytes())
    };
    let manifest = serde_json::to_string(dataset.manifest())?;
    (|| -> std::io::Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&DATASET_VERSION.to_le_bytes())?;
        put_str(&mut w, dataset.config_hash())?;
        w.write_all(&(dataset.dim() as u32).to_le_bytes())?;
        put_str(&mut w, &manifest)?;
        w.write_all(&(dataset.sessions().len() as u32).to_le_bytes())?;
        for (block, fold) in dataset.sessions().iter().zip(dataset.fold_labels()) {
            put_str(&mut w, &block.session_id)?;
            put_str(&mut w, &block.subject_pair_id)?;
            w.write_all(&[participant_code(block.env_participant)])?;
            w.write_all(&fold_code(*fold).to_le_bytes())?;
            w.write_all(&block.first_frame.to_le_bytes())?;
            w.write_all(&(block.n_states() as u64).to_le_bytes())?;
            for v in block.states_flat() {
                w.write_all(&v.to_le_bytes())?;
            }
            w.write_all(block.actions())?;
            for r in block.rewards() {
                w.write_all(&r.to_le_bytes())?;
            }
        }
        w.flush()
    })()
    .map_err(io_err)
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Truncated(format!(
                "expected {n} bytes of {what} at offset {}, {} left",
                self.pos,
                self.buf.len() - self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }
    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
    fn i64(&mut self, what: &str) -> Result<i64> {
        Ok(i64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
    fn string(&mut self, what: &str) -> Result<String> {
        let n = self.u32(what)? as usize;
        let bytes = self.take(n, what)?;
        String::from_utf8(bytes.to_vec())
            .map_err(|_| Error::BadHeader(format!("{what} is not valid UTF-8")))
    }
    fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }
}

pub fn load_binary(path: &Path) -> Result<TupleDataset> {
    let buf = fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    let mut c = Cursor { buf: &buf, pos: 0 };
    if c.take(MAGIC.len(), "magic")? != MAGIC {
        return Err(Error::BadHeader(format!(
            "{} is not a tuple dataset",
            path.display()
        )));
    }
    let version = c.u32("version")?;
    if version != DATASET_VERSION {
        return Err(Error::Version {
            found: version,
            expected: DATASET_VERSION,
        });
    }
    let config_hash = c.string("config hash")?;
    let dim = c.u32("dim")? as usize;
    let manifest: DatasetManifest = serde_json::from_str(&c.string("manifest")?)?;
    let n_sessions = c.u32("session count")? as usize;
    let mut builder = DatasetBuilder::new(dim, config_hash);
    let mut folds = Vec::with_capacity(n_sessions);
    for _ in 0..n_sessions {
        let session_id = c.string("session id")?;
        let subject_pair_id = c.string("subject pair id")?;
        let env = match c.u8("participant")? {
            0 => Participant::A,
            1 => Participant::B,
            x => return Err(Error::BadHeader(format!("participant code {x}"))),
        };
        let fold = c.i64("fold label")?;
        let first_frame = c.u64("first frame")?;
        let n = c.u64("state count")? as usize;
        // 4 bytes per state value, 1 per action, 8 per reward
        let need = n.saturating_mul(4 * dim + 9);
        if need > c.remaining() {
            return Err(Error::Truncated(format!(
                "session {session_id} declares {n} states, file too short"
            )));
        }
        let states = c
            .take(4 * n * dim, "states")?
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        let actions = c.take(n, "actions")?.to_vec();
        let rewards = c
            .take(8 * n, "rewards")?
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
            .collect();
        builder.push_block(SessionBlock::new(
            session_id,
            subject_pair_id,
            env,
            first_frame,
            dim,
            states,
            actions,
            rewards,
        )?)?;
        folds.push(u32::try_from(fold).ok());
    }
    if c.remaining() != 0 {
        return Err(Error::BadHeader(format!(
            "{} trailing bytes",
            c.remaining()
        )));
    }
    builder.manifest = manifest;
    let mut ds = builder.build();
    ds.fold_labels = folds;
    Ok(ds)
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct JsonHeader {
    format: String,
    version: u32,
    config_hash: String,
    dim: usize,
    manifest: DatasetManifest,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct JsonSession {
    session_id: String,
    subject_pair_id: String,
    env_participant: Participant,
    fold: Option<u32>,
    first_frame: u64,
    states: Vec<f32>,
    actions: Vec<u8>,
    rewards: Vec<f64>,
}

pub fn save_jsonl(dataset: &TupleDataset, path: &Path) -> Result<()> {
    let io_err = |e| Error::io(format!("writing {}", path.display()), e);
    let mut w = BufWriter::new(fs::File::create(path).map_err(io_err)?);
    let header = JsonHeader {
        format: "bcrl-tuples".into(),
        version: DATASET_VERSION,
        config_hash: dataset.config_hash().into(),
        dim: dataset.dim(),
        manifest: dataset.manifest().clone(),
    };
    serde_json::to_writer(&mut w, &header)?;
    w.write_all(b"\n").map_err(io_err)?;
    for (b, fold) in dataset.sessions().iter().zip(dataset.fold_labels()) {
        let line = JsonSession {
            session_id: b.session_id.clone(),
            subject_pair_id: b.subject_pair_id.clone(),
            env_participant: b.env_participant,
            fold: *fold,
            first_frame: b.first_frame,
            states: b.states_flat().to_vec(),
            actions: b.actions().to_vec(),
            rewards: b.rewards().to_vec(),
        };
        serde_json::to_writer(&mut w, &line)?;
        w.write_all(b"\n").map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}

pub fn load_jsonl(path: &Path) -> Result<TupleDataset> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header: JsonHeader = serde_json::from_str(
        lines
            .next()
            .ok_or_else(|| Error::Truncated(format!("{} is empty", path.display())))?,
    )
    .map_err(|e| Error::BadHeader(e.to_string()))?;
    if header.format != "bcrl-tuples" {
        return Err(Error::BadHeader(format!("format {:?}", header.format)));
    }
    if header.version != DATASET_VERSION {
        return Err(Error::Version {
            found: header.version,
            expected: DATASET_VERSION,
        });
    }
    let mut builder = DatasetBuilder::new(header.dim, header.config_hash);
    let mut folds = Vec::new();
    for line in lines {
        let s: JsonSession = serde_json::from_str(line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            msg: e.to_string(),
        })?;
        builder.push_block(SessionBlock::new(
            s.session_id,
            s.subject_pair_id,
            s.env_participant,
            s.first_frame,
            header.dim,
            s.states,
            s.actions,
            s.rewards,
        )?)?;
        folds.push(s.fold);
    }
    builder.manifest = header.manifest;
    let mut ds = builder.build();
    ds.fold_labels = folds;
    Ok(ds)
}
