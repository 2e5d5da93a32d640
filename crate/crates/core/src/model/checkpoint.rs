//! Binary checkpoint container, all integers and floats little-endian:
//!
//! ```text
//! b"FINOCKPT" u32 version
//! u32 len, model config as JSON
//! u64 rng seed, u64 rng counter
//! u32 len, training metadata as JSON
//! u32 count, then per tensor: u32 len, name, u8 frozen, u32 rank,
//!     u64 dims[rank], f32 values[product(dims)]
//! u32 count, then per batch-norm layer: u32 len, name, u32 channels,
//!     f64 momentum, f32 mean[channels], f32 var[channels]
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::params::FinoNetParams;
use super::ModelConfig;
use crate::autodiff::RunningStats;
use crate::error::{FinoError, Result};
use crate::rng::RngState;
use crate::tensor::Tensor;

const MAGIC: &[u8; 8] = b"FINOCKPT";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    /// Epoch the parameters were taken from (0 = initialization).
    pub epoch: usize,
    pub epochs_run: usize,
    pub train_loss: Option<f64>,
    pub val_weighted_f1: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: FinoNetParams,
    pub rng: RngState,
    pub meta: TrainingMeta,
}

struct Writer(Vec<u8>);

impl Writer {
    fn u32(&mut self, v: usize) {
        self.0.extend_from_slice(&(v as u32).to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn bytes(&mut self, b: &[u8]) {
        self.u32(b.len());
        self.0.extend_from_slice(b);
    }
    fn f32s(&mut self, vals: &[f64]) {
        for &v in vals {
            self.0.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

fn corrupt(msg: impl Into<String>) -> FinoError {
    FinoError::Checkpoint(msg.into())
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| corrupt(format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn bytes(&mut self) -> Result<&'a [u8]> {
        let n = self.u32()?;
        self.take(n)
    }
    fn string(&mut self) -> Result<String> {
        String::from_utf8(self.bytes()?.to_vec()).map_err(|_| corrupt("name is not UTF-8"))
    }
    fn f32s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(n.checked_mul(4).ok_or_else(|| corrupt("tensor too large"))?)?;
        Ok(raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")) as f64)
            .collect())
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer(Vec::new());
        w.0.extend_from_slice(MAGIC);
        w.u32(VERSION as usize);
        w.bytes(&serde_json::to_vec(self.params.config()).expect("config serializes"));
        w.u64(self.rng.seed);
        w.u64(self.rng.counter);
        w.bytes(&serde_json::to_vec(&self.meta).expect("metadata serializes"));
        w.u32(self.params.len());
        for (i, (name, t)) in self.params.tensors().enumerate() {
            w.bytes(name.as_bytes());
            w.0.push(u8::from(self.params.is_frozen(i)));
            w.u32(t.ndim());
            for &d in t.shape() {
                w.u64(d as u64);
            }
            w.f32s(t.data());
        }
        let running: Vec<_> = self.params.running_stats().collect();
        w.u32(running.len());
        for (name, s) in running {
            w.bytes(name.as_bytes());
            w.u32(s.mean.len());
            w.0.extend_from_slice(&s.momentum.to_le_bytes());
            w.f32s(&s.mean);
            w.f32s(&s.var);
        }
        w.0
    }

    /// Parses and validates every tensor against the embedded config.
    pub fn from_bytes(buf: &[u8]) -> Result<Checkpoint> {
        let mut r = Reader { buf, pos: 0 };
        if r.take(MAGIC.len())? != MAGIC {
            return Err(corrupt("not a checkpoint (bad magic)"));
        }
        let version = r.u32()?;
        if version != VERSION as usize {
            return Err(corrupt(format!("unsupported checkpoint version {version}")));
        }
        let config: ModelConfig =
            serde_json::from_slice(r.bytes()?).map_err(|e| corrupt(format!("config: {e}")))?;
        let mut params = FinoNetParams::new(&config).map_err(|e| corrupt(format!("config: {e}")))?;
        let rng = RngState {
            seed: r.u64()?,
            counter: r.u64()?,
        };
        let meta: TrainingMeta =
            serde_json::from_slice(r.bytes()?).map_err(|e| corrupt(format!("metadata: {e}")))?;

        let count = r.u32()?;
        if count != params.len() {
            return Err(corrupt(format!("{count} tensors, config implies {}", params.len())));
        }
        let mut frozen = vec![false; count];
        let mut seen = vec![false; count];
        for _ in 0..count {
            let name = r.string()?;
            let idx = params
                .index_of(&name)
                .ok_or_else(|| corrupt(format!("unexpected tensor {name:?}")))?;
            if std::mem::replace(&mut seen[idx], true) {
                return Err(corrupt(format!("tensor {name:?} appears twice")));
            }
            frozen[idx] = r.u8()? != 0;
            let rank = r.u32()?;
            let shape = (0..rank)
                .map(|_| r.u64().map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let expected = params.tensor(idx).shape();
            if shape != expected {
                return Err(corrupt(format!(
                    "tensor {name} has shape {shape:?}, config implies {expected:?}"
                )));
            }
            let data = r.f32s(shape.iter().product())?;
            params.set(&name, Tensor::new(&shape, data)?)?;
        }
        params.set_frozen_mask(frozen);

        let n_bn = r.u32()?;
        let expected_bn = params.running_stats().count();
        if n_bn != expected_bn {
            return Err(corrupt(format!(
                "{n_bn} batch-norm records, config implies {expected_bn}"
            )));
        }
        for _ in 0..n_bn {
            let name = r.string()?;
            let channels = r.u32()?;
            let momentum = r.f64()?;
            let mean = r.f32s(channels)?;
            let var = r.f32s(channels)?;
            params
                .set_running(&name, RunningStats { mean, var, momentum })
                .map_err(|e| corrupt(e.to_string()))?;
        }
        if r.pos != buf.len() {
            return Err(corrupt(format!("{} trailing bytes", buf.len() - r.pos)));
        }
        Ok(Checkpoint { params, rng, meta })
    }
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    fs::write(path, ckpt.to_bytes()).map_err(|e| FinoError::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let buf = fs::read(path).map_err(|e| FinoError::io(path, e))?;
    Checkpoint::from_bytes(&buf)
}
