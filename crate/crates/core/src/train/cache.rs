//! Preprocessed eval-mode samples: little-endian, f32 payloads.
//!
//! `FINOSMPL`, u32 version, id (u32 length + UTF-8), label u8, source
//! indices (u32 count + u32 each), then two tensors, each as u32 rank, u32
//! dims and f32 data: frames (empty for the audio-only variant) and MFCCs
//! (empty for vision-only variants).

use std::fs;
use std::path::Path;

use crate::error::{FinoError, Result};
use crate::tensor::Tensor;
use crate::vision::Label;

const MAGIC: &[u8; 8] = b"FINOSMPL";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct CachedSample {
    pub id: String,
    pub label: Label,
    pub source_indices: Vec<usize>,
    pub frames: Option<Tensor>,
    pub mfcc: Option<Tensor>,
}

fn put_u32(buf: &mut Vec<u8>, v: usize) {
    buf.extend_from_slice(&(v as u32).to_le_bytes());
}

fn put_tensor(buf: &mut Vec<u8>, t: Option<&Tensor>) {
    match t {
        None => put_u32(buf, 0),
        Some(t) => {
            put_u32(buf, t.shape().len());
            for &d in t.shape() {
                put_u32(buf, d);
            }
            for &x in t.data() {
                buf.extend_from_slice(&(x as f32).to_le_bytes());
            }
        }
    }
}

impl CachedSample {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut b = MAGIC.to_vec();
        b.extend_from_slice(&VERSION.to_le_bytes());
        put_u32(&mut b, self.id.len());
        b.extend_from_slice(self.id.as_bytes());
        b.push(self.label.class_index() as u8);
        put_u32(&mut b, self.source_indices.len());
        for &i in &self.source_indices {
            put_u32(&mut b, i);
        }
        put_tensor(&mut b, self.frames.as_ref());
        put_tensor(&mut b, self.mfcc.as_ref());
        b
    }

    pub fn from_bytes(buf: &[u8]) -> Result<CachedSample> {
        let mut r = Reader { buf, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(FinoError::Input("not a sample cache file".into()));
        }
        let version = r.u32()?;
        if version != VERSION as usize {
            return Err(FinoError::Input(format!("sample cache version {version}, want {VERSION}")));
        }
        let n = r.u32()?;
        let id = String::from_utf8(r.take(n)?.to_vec()).map_err(|_| FinoError::Input("episode id is not UTF-8".into()))?;
        let label = match r.take(1)?[0] {
            0 => Label::Success,
            1 => Label::Fail,
            other => return Err(FinoError::Input(format!("label byte {other}"))),
        };
        let n = r.u32()?;
        let source_indices = (0..n).map(|_| r.u32()).collect::<Result<_>>()?;
        let frames = r.tensor()?;
        let mfcc = r.tensor()?;
        if r.pos != buf.len() {
            return Err(FinoError::Input(format!("{} trailing bytes", buf.len() - r.pos)));
        }
        Ok(CachedSample { id, label, source_indices, frames, mfcc })
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| FinoError::Input("sample cache is truncated".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }

    fn tensor(&mut self) -> Result<Option<Tensor>> {
        let rank = self.u32()?;
        if rank == 0 {
            return Ok(None);
        }
        let shape = (0..rank).map(|_| self.u32()).collect::<Result<Vec<_>>>()?;
        let len = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
        let len = len.ok_or_else(|| FinoError::Input("tensor size overflows".into()))?;
        let bytes = self.take(len.checked_mul(4).ok_or_else(|| FinoError::Input("tensor size overflows".into()))?)?;
        let data = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
            .collect();
        Tensor::new(&shape, data).map(Some)
    }
}

pub fn write_cached(path: &Path, sample: &CachedSample) -> Result<()> {
    fs::write(path, sample.to_bytes()).map_err(|e| FinoError::io(path, e))
}

pub fn read_cached(path: &Path) -> Result<CachedSample> {
    let buf = fs::read(path).map_err(|e| FinoError::io(path, e))?;
    CachedSample::from_bytes(&buf)
}
