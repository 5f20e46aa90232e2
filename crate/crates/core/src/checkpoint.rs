//! Binary model checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! b"TAE1"  u16 version
//! u32 config_len  config as UTF-8 JSON
//! repeated until EOF:
//!     u32 name_len  name  u32 rank  u32 dims[rank]  f64 values[prod(dims)]
//! ```
//!
//! Loading rebuilds the model from the stored config and then overwrites
//! every parameter by name, so a checkpoint must cover all of them.

use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::model::{TaeConfig, TaeModel};

pub const MAGIC: &[u8; 4] = b"TAE1";
pub const VERSION: u16 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("not a checkpoint (bad magic {0:?})")]
    BadMagic([u8; 4]),
    #[error("unsupported checkpoint version {found} (expected {VERSION})")]
    VersionMismatch { found: u16 },
    #[error("checkpoint truncated: {0}")]
    Truncated(String),
    #[error("invalid config in checkpoint: {0}")]
    Json(#[from] serde_json::Error),
    #[error("checkpoint parameter {0:?} does not exist in the model")]
    UnknownParameter(String),
    #[error("checkpoint parameter {name:?} has shape {found:?}, model expects {expected:?}")]
    ShapeMismatch { name: String, expected: Vec<usize>, found: Vec<usize> },
    #[error("checkpoint is missing parameter {0:?}")]
    MissingParameter(String),
}

pub fn to_bytes(model: &TaeModel) -> crate::Result<Vec<u8>> {
    let mut out = Vec::with_capacity(model.params().numel() * 8 + 1024);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let config = serde_json::to_vec(model.config()).map_err(CheckpointError::from)?;
    put_u32(&mut out, config.len());
    out.extend_from_slice(&config);
    for p in model.params().iter() {
        put_u32(&mut out, p.name.len());
        out.extend_from_slice(p.name.as_bytes());
        put_u32(&mut out, p.tensor.shape().len());
        for &d in p.tensor.shape() {
            put_u32(&mut out, d);
        }
        for v in p.tensor.values() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&u32::try_from(v).expect("checkpoint field exceeds u32").to_le_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], CheckpointError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| {
            CheckpointError::Truncated(format!("{what} needs {n} bytes at offset {}", self.pos))
        })?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self, what: &str) -> Result<usize, CheckpointError> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes(b.try_into().unwrap()) as usize)
    }

    fn at_end(&self) -> bool {
        self.pos == self.bytes.len()
    }
}

pub fn from_bytes(bytes: &[u8]) -> crate::Result<TaeModel> {
    let mut r = Reader { bytes, pos: 0 };
    let magic: [u8; 4] = match bytes.get(..4) {
        Some(m) => m.try_into().unwrap(),
        None => {
            let mut m = [0u8; 4];
            m[..bytes.len()].copy_from_slice(bytes);
            return Err(CheckpointError::BadMagic(m).into());
        }
    };
    if &magic != MAGIC {
        return Err(CheckpointError::BadMagic(magic).into());
    }
    r.pos = 4;
    let version = u16::from_le_bytes(r.take(2, "version")?.try_into().unwrap());
    if version != VERSION {
        return Err(CheckpointError::VersionMismatch { found: version }.into());
    }
    let len = r.u32("config length")?;
    let config: TaeConfig = serde_json::from_slice(r.take(len, "config")?).map_err(CheckpointError::from)?;
    let mut model = TaeModel::new(config)?;
    let mut seen = vec![false; model.params().len()];

    while !r.at_end() {
        let len = r.u32("name length")?;
        let name = String::from_utf8_lossy(r.take(len, "name")?).into_owned();
        let rank = r.u32("rank")?;
        let mut shape = Vec::with_capacity(rank.min(8));
        for _ in 0..rank {
            shape.push(r.u32("dimension")?);
        }
        let id = model
            .params()
            .find(&name)
            .ok_or_else(|| CheckpointError::UnknownParameter(name.clone()))?;
        let expected = model.params().get(id).tensor.shape().to_vec();
        if shape != expected {
            return Err(CheckpointError::ShapeMismatch { name, expected, found: shape }.into());
        }
        let n: usize = shape.iter().product();
        let raw = r.take(n * 8, &name)?;
        let dst = model.params_mut().get_mut(id).tensor.values_mut();
        for (d, chunk) in dst.iter_mut().zip(raw.chunks_exact(8)) {
            *d = f64::from_le_bytes(chunk.try_into().unwrap());
        }
        seen[id.index()] = true;
    }
    if let Some(i) = seen.iter().position(|&s| !s) {
        let name = model.params().iter().nth(i).map(|p| p.name.clone()).unwrap_or_default();
        return Err(CheckpointError::MissingParameter(name).into());
    }
    Ok(model)
}

pub fn save(model: &TaeModel, path: &Path) -> crate::Result<()> {
    fs::write(path, to_bytes(model)?)?;
    Ok(())
}

pub fn load(path: &Path) -> crate::Result<TaeModel> {
    from_bytes(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Arch;
    use crate::Error;

    fn model() -> TaeModel {
        let cfg = TaeConfig {
            arch: Arch::Dense,
            d: 2,
            encoder_width: 4,
            dense_hidden: 6,
            classifier_hidden: 3,
            seed: 9,
            ..TaeConfig::default()
        };
        TaeModel::new(cfg).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let mut m = model();
        // Values that do not come from the init stream, including subnormals.
        for (i, p) in m.params_mut().iter_mut().enumerate() {
            p.tensor.values_mut()[0] = f64::MIN_POSITIVE / (i as f64 + 2.0);
        }
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.tae");
        save(&m, &path).unwrap();
        let back = load(&path).unwrap();
        assert_eq!(back.config(), m.config());
        for (a, b) in m.params().iter().zip(back.params().iter()) {
            assert_eq!(a.name, b.name);
            let bits = |t: &[f64]| t.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(a.tensor.values()), bits(b.tensor.values()));
        }
    }

    #[test]
    fn rejects_bad_header() {
        let bytes = to_bytes(&model()).unwrap();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(from_bytes(&bad), Err(Error::Checkpoint(CheckpointError::BadMagic(_)))));
        assert!(matches!(from_bytes(b"TA"), Err(Error::Checkpoint(CheckpointError::BadMagic(_)))));
        let mut v2 = bytes.clone();
        v2[4] = 2;
        assert!(matches!(
            from_bytes(&v2),
            Err(Error::Checkpoint(CheckpointError::VersionMismatch { found: 2 }))
        ));
    }

    #[test]
    fn rejects_truncation_anywhere() {
        let bytes = to_bytes(&model()).unwrap();
        for cut in [5, 9, 20, bytes.len() / 2, bytes.len() - 1] {
            let err = from_bytes(&bytes[..cut]).unwrap_err();
            assert!(
                matches!(
                    err,
                    Error::Checkpoint(CheckpointError::Truncated(_))
                        | Error::Checkpoint(CheckpointError::MissingParameter(_))
                        | Error::Checkpoint(CheckpointError::Json(_))
                ),
                "cut at {cut}: {err}"
            );
        }
        // Cutting at a record boundary leaves later parameters missing.
        let m = model();
        let header = 4 + 2 + 4 + serde_json::to_vec(m.config()).unwrap().len();
        assert!(matches!(
            from_bytes(&bytes[..header]),
            Err(Error::Checkpoint(CheckpointError::MissingParameter(_)))
        ));
    }
}
