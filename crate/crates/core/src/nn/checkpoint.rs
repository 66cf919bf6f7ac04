//! Binary checkpoint files.
//!
//! ```text
//! "AWMC" | version: u32 | meta_len: u32 | meta: UTF-8 JSON
//! | tensor_count: u32
//! | per tensor: name_len: u32 | name | ndim: u32 | dims: u64 * ndim | payload: f64 LE * prod(dims)
//! ```
//! All integers are little-endian.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::params::{ModelParams, NetConfig};
use crate::error::{CheckpointError, Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"AWMC";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Meta {
    hidden: usize,
    feature_len: usize,
    mixture: usize,
    encoder_hidden: usize,
    head_hidden: usize,
}

pub fn encode_checkpoint(params: &ModelParams) -> Vec<u8> {
    let c = params.config();
    let meta = serde_json::to_vec(&Meta {
        hidden: c.hidden,
        feature_len: c.feature_len,
        mixture: c.mixture,
        encoder_hidden: c.encoder_hidden,
        head_hidden: c.head_hidden,
    })
    .expect("meta serializes");
    let mut out = Vec::with_capacity(params.num_scalars() * 8 + 1024);
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
    out.extend_from_slice(&meta);
    out.extend_from_slice(&(params.tensors().len() as u32).to_le_bytes());
    for t in params.tensors() {
        out.extend_from_slice(&(t.name.len() as u32).to_le_bytes());
        out.extend_from_slice(t.name.as_bytes());
        out.extend_from_slice(&(t.shape.len() as u32).to_le_bytes());
        for d in &t.shape {
            out.extend_from_slice(&(*d as u64).to_le_bytes());
        }
        for v in &t.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> std::result::Result<&'a [u8], CheckpointError> {
        if self.buf.len() - self.pos < n {
            return Err(CheckpointError::Truncated { what });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &'static str) -> std::result::Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &'static str) -> std::result::Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

type RawTensors = HashMap<String, (Vec<usize>, Vec<f64>)>;

fn parse(bytes: &[u8]) -> std::result::Result<(NetConfig, RawTensors), CheckpointError> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4, "magic").map_err(|_| CheckpointError::BadMagic)? != CHECKPOINT_MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = r.u32("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(CheckpointError::Version {
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let meta_len = r.u32("metadata length")? as usize;
    let meta: Meta =
        serde_json::from_slice(r.take(meta_len, "metadata")?).map_err(|e| CheckpointError::Metadata(e.to_string()))?;
    let config = NetConfig {
        feature_len: meta.feature_len,
        encoder_hidden: meta.encoder_hidden,
        hidden: meta.hidden,
        head_hidden: meta.head_hidden,
        mixture: meta.mixture,
    };
    let count = r.u32("tensor count")?;
    let mut tensors = HashMap::new();
    for _ in 0..count {
        let name_len = r.u32("tensor name length")? as usize;
        let name =
            String::from_utf8(r.take(name_len, "tensor name")?.to_vec()).map_err(|e| CheckpointError::Metadata(e.to_string()))?;
        let ndim = r.u32("tensor rank")? as usize;
        let shape = (0..ndim)
            .map(|_| r.u64("tensor shape").map(|d| d as usize))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        let n: usize = shape.iter().product();
        let payload = r.take(
            n.checked_mul(8).ok_or(CheckpointError::Truncated { what: "payload" })?,
            "tensor payload",
        )?;
        let data = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        tensors.insert(name, (shape, data));
    }
    Ok((config, tensors))
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<ModelParams> {
    let (config, tensors) = parse(bytes)?;
    let mut params = ModelParams::zeros(config);
    params.load_tensors(tensors)?;
    Ok(params)
}

/// Decode, requiring the network dimensions to equal `expected`.
pub fn decode_checkpoint_for(bytes: &[u8], expected: &NetConfig) -> Result<ModelParams> {
    let (_, tensors) = parse(bytes)?;
    let mut params = ModelParams::zeros(*expected);
    params.load_tensors(tensors)?;
    Ok(params)
}

pub fn save_checkpoint(params: &ModelParams, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_checkpoint(params)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<ModelParams> {
    let path = path.as_ref();
    decode_checkpoint(&fs::read(path).map_err(|e| Error::io(path, e))?)
}

pub fn load_checkpoint_for(path: impl AsRef<Path>, expected: &NetConfig) -> Result<ModelParams> {
    let path = path.as_ref();
    decode_checkpoint_for(&fs::read(path).map_err(|e| Error::io(path, e))?, expected)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let p = ModelParams::random(NetConfig::default(), 9, 1.0);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.awmc");
        save_checkpoint(&p, &path).unwrap();
        let q = load_checkpoint(&path).unwrap();
        for (a, b) in p.tensors().iter().zip(q.tensors()) {
            assert_eq!(a.name, b.name);
            assert!(a.data.iter().zip(&b.data).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
        assert_eq!(p, q);
    }

    #[test]
    fn bad_magic_rejected() {
        let mut bytes = encode_checkpoint(&ModelParams::zeros(NetConfig::tiny()));
        bytes[0] = b'X';
        assert!(matches!(
            decode_checkpoint(&bytes),
            Err(Error::Checkpoint(CheckpointError::BadMagic))
        ));
    }

    #[test]
    fn version_mismatch_rejected() {
        let mut bytes = encode_checkpoint(&ModelParams::zeros(NetConfig::tiny()));
        bytes[4] = 7;
        assert!(matches!(
            decode_checkpoint(&bytes),
            Err(Error::Checkpoint(CheckpointError::Version { found: 7, .. }))
        ));
    }

    #[test]
    fn truncated_rejected() {
        let bytes = encode_checkpoint(&ModelParams::zeros(NetConfig::tiny()));
        let cut = &bytes[..bytes.len() - 3];
        assert!(matches!(
            decode_checkpoint(cut),
            Err(Error::Checkpoint(CheckpointError::Truncated { .. }))
        ));
    }

    #[test]
    fn different_hidden_size_names_tensor() {
        let small = NetConfig {
            hidden: 32,
            ..NetConfig::default()
        };
        let bytes = encode_checkpoint(&ModelParams::zeros(small));
        match decode_checkpoint_for(&bytes, &NetConfig::default()) {
            Err(Error::Checkpoint(CheckpointError::ShapeMismatch { name, .. })) => {
                assert_eq!(name, "core.w_in")
            }
            other => panic!("unexpected {other:?}"),
        }
    }
}
