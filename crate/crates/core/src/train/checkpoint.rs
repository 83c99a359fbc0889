//! Binary checkpoint format.
//!
//! Little-endian layout:
//!
//! ```text
//! b"MPU1"  u32 version  u64 json_len  json
//! u32 tensor_count
//! repeated: u32 name_len  name  u32 rank  u64 dims[rank]  f64 data[product(dims)]
//! ```
//!
//! The JSON block carries the network and training configuration, the step
//! counter and the random-stream state. Tensor records are named
//! `param/<name>`, `adam.m/<name>` and `adam.v/<name>`.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{AdamState, TrainConfig, TrainError};
use crate::net::{NetConfig, ParamStore, ParamTensor};

pub const MAGIC: &[u8; 4] = b"MPU1";
pub const FORMAT_VERSION: u32 = 1;

/// Everything needed to reproduce inference and to resume training.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub net: NetConfig,
    pub train: TrainConfig,
    /// Completed optimizer steps; training resumes at this step.
    pub step: u64,
    pub params: ParamStore,
    pub adam: AdamState,
}

#[derive(Serialize, Deserialize)]
struct Header {
    net: NetConfig,
    train: TrainConfig,
    step: u64,
    adam_t: u64,
    /// Per-step random streams are derived from the seed and step index, so
    /// these two numbers are the complete generator state.
    rng: RngState,
}

#[derive(Serialize, Deserialize)]
struct RngState {
    algorithm: String,
    seed: u64,
    next_step: u64,
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_tensor(out: &mut Vec<u8>, name: &str, shape: &[usize], data: &[f64]) {
    put_u32(out, name.len() as u32);
    out.extend_from_slice(name.as_bytes());
    put_u32(out, shape.len() as u32);
    for &d in shape {
        put_u64(out, d as u64);
    }
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let header = Header {
            net: self.net.clone(),
            train: self.train.clone(),
            step: self.step,
            adam_t: self.adam.t,
            rng: RngState {
                algorithm: "chacha8-stream-per-step".into(),
                seed: self.train.seed,
                next_step: self.step,
            },
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        put_u32(&mut out, FORMAT_VERSION);
        put_u64(&mut out, json.len() as u64);
        out.extend_from_slice(&json);
        let count = self.params.len() + self.adam.m.len() + self.adam.v.len();
        put_u32(&mut out, count as u32);
        for (name, t) in self.params.iter() {
            put_tensor(&mut out, &format!("param/{name}"), &t.shape, &t.data);
        }
        for (prefix, moments) in [("adam.m", &self.adam.m), ("adam.v", &self.adam.v)] {
            for (name, data) in moments {
                let shape = self.params.get(name).map(|p| p.shape.clone()).unwrap_or_else(|| vec![data.len()]);
                put_tensor(&mut out, &format!("{prefix}/{name}"), &shape, data);
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Checkpoint, TrainError> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4, "magic")? != MAGIC {
            return Err(TrainError::Checkpoint("bad magic, not a checkpoint file".into()));
        }
        let version = r.u32("version")?;
        if version != FORMAT_VERSION {
            return Err(TrainError::Checkpoint(format!(
                "checkpoint format version {version} is not supported (this build reads version {FORMAT_VERSION})"
            )));
        }
        let json_len = r.u64("header length")? as usize;
        let header: Header = serde_json::from_slice(r.take(json_len, "header")?)
            .map_err(|e| TrainError::Checkpoint(format!("corrupt header: {e}")))?;
        let count = r.u32("tensor count")?;
        let mut params = ParamStore::new();
        let mut m = BTreeMap::new();
        let mut v = BTreeMap::new();
        for _ in 0..count {
            let name_len = r.u32("tensor name length")? as usize;
            let name = std::str::from_utf8(r.take(name_len, "tensor name")?)
                .map_err(|_| TrainError::Checkpoint("tensor name is not UTF-8".into()))?
                .to_string();
            let rank = r.u32("tensor rank")? as usize;
            let shape = (0..rank)
                .map(|_| r.u64("tensor dims").map(|d| d as usize))
                .collect::<Result<Vec<_>, _>>()?;
            let numel = shape
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .ok_or_else(|| TrainError::Checkpoint(format!("tensor {name} is too large")))?;
            let raw = r.take(numel.checked_mul(8).unwrap_or(usize::MAX), &format!("tensor {name}"))?;
            let data: Vec<f64> = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            if let Some(rest) = name.strip_prefix("param/") {
                params.insert(rest, ParamTensor { shape, data });
            } else if let Some(rest) = name.strip_prefix("adam.m/") {
                m.insert(rest.to_string(), data);
            } else if let Some(rest) = name.strip_prefix("adam.v/") {
                v.insert(rest.to_string(), data);
            } else {
                return Err(TrainError::Checkpoint(format!("unknown tensor record {name}")));
            }
        }
        if r.pos != bytes.len() {
            return Err(TrainError::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        params
            .check(&header.net)
            .map_err(|e| TrainError::Checkpoint(format!("parameters do not match the stored config: {e}")))?;
        Ok(Checkpoint {
            net: header.net,
            train: header.train,
            step: header.step,
            params,
            adam: AdamState { m, v, t: header.adam_t },
        })
    }

    /// Writes to a temporary sibling and renames it into place.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), TrainError> {
        let path = path.as_ref();
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, self.to_bytes()).map_err(|e| TrainError::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| TrainError::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Checkpoint, TrainError> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| TrainError::io(path, e))?;
        Checkpoint::from_bytes(&bytes)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], TrainError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            TrainError::Checkpoint(format!("truncated file while reading {what} at byte {}", self.pos))
        })?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self, what: &str) -> Result<u32, TrainError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64, TrainError> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }
}
