//! Versioned binary checkpoints.
//!
//! Byte layout (all integers little-endian):
//!
//! ```text
//! magic        8 bytes   "PAFFCKPT"
//! version      u32       schema version
//! checksum     32 bytes  SHA-256 of the payload
//! payload_len  u64
//! payload:
//!   meta_len   u32
//!   meta       UTF-8 JSON object (fingerprint, rng state, optimizer header, model config)
//!   n_arrays   u32
//!   n_arrays times:
//!     name_len u16, name UTF-8
//!     dtype    u8    0 = f32, 1 = f64
//!     ndim     u8
//!     dims     u64 x ndim
//!     data     row-major elements
//! ```
//!
//! Parameters are stored under `param/<name>`, optimizer moments under
//! `optim.m/<name>` and `optim.v/<name>`.

use std::io::{Cursor, Read};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::{ArrayD, IxDyn};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Dtype, OptimizerKind, OptimizerState, ParamStore, Real};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"PAFFCKPT";
pub const CHECKPOINT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<T> {
    pub schema_version: u32,
    pub fingerprint: String,
    pub rng: Option<ChaCha8Rng>,
    /// Model configuration and any other metadata.
    pub meta: serde_json::Value,
    pub params: ParamStore<T>,
    pub optimizer: Option<OptimizerState<T>>,
}

#[derive(Serialize, Deserialize)]
struct MetaBlock {
    fingerprint: String,
    dtype: Dtype,
    rng: Option<ChaCha8Rng>,
    optimizer: Option<OptimizerHeader>,
    meta: serde_json::Value,
}

#[derive(Serialize, Deserialize)]
struct OptimizerHeader {
    kind: OptimizerKind,
    lr: f64,
    step: u64,
    trainable: Vec<String>,
}

fn integrity(msg: impl Into<String>) -> Error {
    Error::Integrity(msg.into())
}

impl<T: Real> Checkpoint<T> {
    pub fn new(
        fingerprint: impl Into<String>,
        meta: serde_json::Value,
        params: ParamStore<T>,
    ) -> Self {
        Checkpoint {
            schema_version: CHECKPOINT_SCHEMA_VERSION,
            fingerprint: fingerprint.into(),
            rng: None,
            meta,
            params,
            optimizer: None,
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = MetaBlock {
            fingerprint: self.fingerprint.clone(),
            dtype: T::DTYPE,
            rng: self.rng.clone(),
            optimizer: self.optimizer.as_ref().map(|o| OptimizerHeader {
                kind: o.kind,
                lr: o.lr,
                step: o.step,
                trainable: o.trainable.clone(),
            }),
            meta: self.meta.clone(),
        };
        let meta = serde_json::to_vec(&header)?;
        let mut arrays: Vec<(String, &ArrayD<T>)> = self
            .params
            .iter()
            .map(|(n, a)| (format!("param/{n}"), a))
            .collect();
        if let Some(opt) = &self.optimizer {
            arrays.extend(opt.m.iter().map(|(n, a)| (format!("optim.m/{n}"), a)));
            arrays.extend(opt.v.iter().map(|(n, a)| (format!("optim.v/{n}"), a)));
        }

        let mut payload = Vec::new();
        payload.write_u32::<LittleEndian>(meta.len() as u32)?;
        payload.extend_from_slice(&meta);
        payload.write_u32::<LittleEndian>(arrays.len() as u32)?;
        for (name, a) in arrays {
            payload.write_u16::<LittleEndian>(name.len() as u16)?;
            payload.extend_from_slice(name.as_bytes());
            payload.write_u8(match T::DTYPE {
                Dtype::F32 => 0,
                Dtype::F64 => 1,
            })?;
            payload.write_u8(a.ndim() as u8)?;
            for &d in a.shape() {
                payload.write_u64::<LittleEndian>(d as u64)?;
            }
            for &v in a.as_standard_layout().iter() {
                v.write_le(&mut payload);
            }
        }

        let mut out = Vec::with_capacity(payload.len() + 52);
        out.extend_from_slice(MAGIC);
        out.write_u32::<LittleEndian>(self.schema_version)?;
        out.extend_from_slice(&Sha256::digest(&payload));
        out.write_u64::<LittleEndian>(payload.len() as u64)?;
        out.extend_from_slice(&payload);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 52 {
            return Err(integrity("file shorter than the header"));
        }
        if &bytes[..8] != MAGIC {
            return Err(integrity("bad magic"));
        }
        let mut cur = Cursor::new(&bytes[8..]);
        let version = cur.read_u32::<LittleEndian>()?;
        if version != CHECKPOINT_SCHEMA_VERSION {
            return Err(integrity(format!(
                "schema version {version} is not the supported version {CHECKPOINT_SCHEMA_VERSION}"
            )));
        }
        let mut checksum = [0u8; 32];
        cur.read_exact(&mut checksum)?;
        let len = cur.read_u64::<LittleEndian>()? as usize;
        let payload = &bytes[52..];
        if payload.len() != len {
            return Err(integrity(format!(
                "payload is {} bytes, header says {len}",
                payload.len()
            )));
        }
        if Sha256::digest(payload).as_slice() != checksum {
            return Err(integrity("checksum mismatch"));
        }

        let mut cur = Cursor::new(payload);
        let meta_len = cur.read_u32::<LittleEndian>()? as usize;
        let mut meta = vec![0u8; meta_len];
        cur.read_exact(&mut meta)?;
        let header: MetaBlock = serde_json::from_slice(&meta)?;
        let n = cur.read_u32::<LittleEndian>()?;

        let mut params = ParamStore::new();
        let mut m = ParamStore::new();
        let mut v = ParamStore::new();
        for _ in 0..n {
            let name_len = cur.read_u16::<LittleEndian>()? as usize;
            let mut name = vec![0u8; name_len];
            cur.read_exact(&mut name)?;
            let name = String::from_utf8(name).map_err(|_| integrity("non-utf8 array name"))?;
            let dtype = match cur.read_u8()? {
                0 => Dtype::F32,
                1 => Dtype::F64,
                d => return Err(integrity(format!("unknown dtype tag {d}"))),
            };
            let ndim = cur.read_u8()? as usize;
            let dims = (0..ndim)
                .map(|_| cur.read_u64::<LittleEndian>().map(|d| d as usize))
                .collect::<std::io::Result<Vec<_>>>()?;
            let count: usize = dims.iter().product();
            let mut raw = vec![0u8; count * dtype.size()];
            cur.read_exact(&mut raw)?;
            let values: Vec<T> = raw
                .chunks_exact(dtype.size())
                .map(|c| match dtype {
                    Dtype::F32 => T::lit(f64::from(f32::read_le(c))),
                    Dtype::F64 => T::lit(f64::read_le(c)),
                })
                .collect();
            let array = ArrayD::from_shape_vec(IxDyn(&dims), values)
                .map_err(|e| integrity(e.to_string()))?;
            let (store, key) = if let Some(k) = name.strip_prefix("param/") {
                (&mut params, k)
            } else if let Some(k) = name.strip_prefix("optim.m/") {
                (&mut m, k)
            } else if let Some(k) = name.strip_prefix("optim.v/") {
                (&mut v, k)
            } else {
                return Err(integrity(format!("unexpected array `{name}`")));
            };
            store.insert(key, array)?;
        }
        if (cur.position() as usize) != payload.len() {
            return Err(integrity("trailing bytes after the last array"));
        }
        let optimizer = header.optimizer.map(|h| OptimizerState {
            kind: h.kind,
            lr: h.lr,
            step: h.step,
            trainable: h.trainable,
            m,
            v,
        });
        Ok(Checkpoint {
            schema_version: version,
            fingerprint: header.fingerprint,
            rng: header.rng,
            meta: header.meta,
            params,
            optimizer,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            Error::Io(io) if io.kind() == std::io::ErrorKind::UnexpectedEof => {
                integrity("truncated payload")
            }
            other => other,
        })
    }

    /// SHA-256 of the serialized checkpoint.
    pub fn hash(&self) -> Result<String> {
        Ok(crate::util::sha256_hex(&self.to_bytes()?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn sample() -> Checkpoint<f32> {
        let mut p = ParamStore::new();
        p.insert(
            "w",
            ArrayD::from_shape_vec(IxDyn(&[2, 2]), vec![0.1f32, -2.5, 3.25, 1e-7]).unwrap(),
        )
        .unwrap();
        let mut ck = Checkpoint::new("abc", serde_json::json!({"model": "test"}), p.clone());
        ck.rng = Some(ChaCha8Rng::seed_from_u64(7));
        ck.optimizer = Some(OptimizerState::for_all(OptimizerKind::adam(), 1e-3, &p));
        ck
    }

    #[test]
    fn bytes_round_trip_bit_exact() {
        let ck = sample();
        let back = Checkpoint::<f32>::from_bytes(&ck.to_bytes().unwrap()).unwrap();
        assert_eq!(back, ck);
        assert!(back.params.bit_equal(&ck.params));
    }

    #[test]
    fn truncation_and_corruption_are_detected() {
        let bytes = sample().to_bytes().unwrap();
        let cut = &bytes[..bytes.len() - 3];
        assert!(matches!(
            Checkpoint::<f32>::from_bytes(cut),
            Err(Error::Integrity(_))
        ));
        let mut flipped = bytes.clone();
        let last = flipped.len() - 1;
        flipped[last] ^= 1;
        assert!(matches!(
            Checkpoint::<f32>::from_bytes(&flipped),
            Err(Error::Integrity(_))
        ));
    }

    #[test]
    fn other_schema_version_fails() {
        let mut bytes = sample().to_bytes().unwrap();
        bytes[8] = 99;
        let err = Checkpoint::<f32>::from_bytes(&bytes).unwrap_err();
        assert!(err.to_string().contains("schema version 99"));
    }
}
