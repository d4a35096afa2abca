//! Parameter files: versioned little-endian binary (64-bit values, so a
//! round trip is bitwise exact) and a JSON export.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{Layer, QParams};

pub const MAGIC: &[u8; 8] = b"BCRLQNT\0";
pub const PARAMS_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct ParamsFile {
    pub params: QParams,
    pub config_hash: String,
}

pub fn save_params(path: &Path, params: &QParams, config_hash: &str) -> Result<()> {
    let mut out = Vec::with_capacity(64 + params.n_params() * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&PARAMS_VERSION.to_le_bytes());
    out.extend_from_slice(&(config_hash.len() as u32).to_le_bytes());
    out.extend_from_slice(config_hash.as_bytes());
    let arch = params.architecture();
    out.extend_from_slice(&(arch.len() as u32).to_le_bytes());
    for a in arch {
        out.extend_from_slice(&(a as u32).to_le_bytes());
    }
    for v in params.iter() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, out).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

pub fn load_params(path: &Path) -> Result<ParamsFile> {
    let buf = fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    let mut pos = 0usize;
    let mut take = |n: usize, what: &str| -> Result<&[u8]> {
        if buf.len() - pos < n {
            return Err(Error::Truncated(format!(
                "{} ends inside {what}",
                path.display()
            )));
        }
        pos += n;
        Ok(&buf[pos - n..pos])
    };
    if take(8, "magic")? != MAGIC {
        return Err(Error::BadHeader(format!(
            "{} is not a parameter file",
            path.display()
        )));
    }
    let u32_at = |b: &[u8]| u32::from_le_bytes(b.try_into().unwrap());
    let version = u32_at(take(4, "version")?);
    if version != PARAMS_VERSION {
        return Err(Error::Version {
            found: version,
            expected: PARAMS_VERSION,
        });
    }
    let hash_len = u32_at(take(4, "hash")?) as usize;
    let config_hash = String::from_utf8(take(hash_len, "hash")?.to_vec())
        .map_err(|_| Error::BadHeader("config hash is not UTF-8".into()))?;
    let depth = u32_at(take(4, "architecture")?) as usize;
    if !(2..=64).contains(&depth) {
        return Err(Error::BadHeader(format!("architecture of {depth} layers")));
    }
    let arch: Vec<usize> = (0..depth)
        .map(|_| take(4, "architecture").map(|b| u32_at(b) as usize))
        .collect::<Result<_>>()?;
    let mut params = QParams::init(&arch, 0).zeros_like();
    let n = params.n_params();
    let body = take(8 * n, "parameters")?;
    for (p, b) in params.iter_mut().zip(body.chunks_exact(8)) {
        *p = f64::from_le_bytes(b.try_into().unwrap());
    }
    if pos != buf.len() {
        return Err(Error::BadHeader(format!(
            "{} trailing bytes",
            buf.len() - pos
        )));
    }
    Ok(ParamsFile {
        params,
        config_hash,
    })
}

/// Loads and warns when the stored config hash differs from `expected`.
pub fn load_params_checked(path: &Path, expected_hash: &str) -> Result<QParams> {
    let f = load_params(path)?;
    if f.config_hash != expected_hash {
        log::warn!(
            "{} was trained with config {} but the current config is {}",
            path.display(),
            f.config_hash,
            expected_hash
        );
    }
    Ok(f.params)
}

#[derive(Serialize, Deserialize)]
struct JsonLayer {
    weights: Vec<Vec<f64>>,
    biases: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct JsonParams {
    version: u32,
    config_hash: String,
    architecture: Vec<usize>,
    layers: Vec<JsonLayer>,
}

pub fn export_json(path: &Path, params: &QParams, config_hash: &str) -> Result<()> {
    let doc = JsonParams {
        version: PARAMS_VERSION,
        config_hash: config_hash.into(),
        architecture: params.architecture(),
        layers: params
            .layers
            .iter()
            .map(|l| JsonLayer {
                weights: l.weights.chunks(l.n_in).map(<[f64]>::to_vec).collect(),
                biases: l.biases.clone(),
            })
            .collect(),
    };
    fs::write(path, serde_json::to_string_pretty(&doc)? + "\n")
        .map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

pub fn import_json(path: &Path) -> Result<ParamsFile> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    let doc: JsonParams = serde_json::from_str(&text)?;
    if doc.version != PARAMS_VERSION {
        return Err(Error::Version {
            found: doc.version,
            expected: PARAMS_VERSION,
        });
    }
    let layers = doc
        .layers
        .into_iter()
        .map(|l| {
            let n_in = l.weights.first().map_or(0, Vec::len);
            Layer {
                n_in,
                n_out: l.biases.len(),
                weights: l.weights.concat(),
                biases: l.biases,
            }
        })
        .collect();
    Ok(ParamsFile {
        params: QParams { layers },
        config_hash: doc.config_hash,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bitwise_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.bin");
        let params = QParams::init(&[209, 100, 25, 2], 42);
        save_params(&p, &params, "cafe").unwrap();
        let back = load_params(&p).unwrap();
        assert_eq!(back.config_hash, "cafe");
        assert!(params
            .iter()
            .zip(back.params.iter())
            .all(|(a, b)| a.to_bits() == b.to_bits()));
        assert_eq!(back.params.architecture(), vec![209, 100, 25, 2]);
    }

    #[test]
    fn json_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.json");
        let params = QParams::init(&[7, 5, 2], 3);
        export_json(&p, &params, "h").unwrap();
        assert_eq!(import_json(&p).unwrap().params, params);
    }

    #[test]
    fn corrupt_files_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.bin");
        save_params(&p, &QParams::init(&[4, 3, 2], 1), "h").unwrap();
        let good = fs::read(&p).unwrap();
        fs::write(&p, &good[..good.len() - 3]).unwrap();
        assert!(matches!(load_params(&p), Err(Error::Truncated(_))));
        let mut bad = good.clone();
        bad[8] = 9;
        fs::write(&p, &bad).unwrap();
        assert!(matches!(
            load_params(&p),
            Err(Error::Version { found: 9, .. })
        ));
    }
}
