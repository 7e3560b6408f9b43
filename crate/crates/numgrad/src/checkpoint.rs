//! Parameter checkpoint container.
//!
//! Layout (all integers little-endian):
//! `"SYML"`, `u32` version, `u32` tensor count, then per tensor:
//! `u32` name length, UTF-8 name, `u32` rank, `u32` extents, `f32` values row-major.

use std::io::{Read, Write};

use crate::error::{NumgradError, Result};
use crate::real::Real;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"SYML";
pub const VERSION: u32 = 1;

pub fn write_checkpoint<W: Write, T: Real>(mut w: W, tensors: &[(String, Tensor<T>)]) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, t) in tensors {
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.extend_from_slice(&(t.rank() as u32).to_le_bytes());
        for &e in t.shape() {
            buf.extend_from_slice(&(e as u32).to_le_bytes());
        }
        for v in t.data() {
            buf.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
        }
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Vec<(String, Tensor<f32>)>> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    parse_checkpoint(&bytes)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(NumgradError::Checkpoint {
                offset: self.pos,
                msg: format!("truncated while reading {what}: need {n} bytes, {} left", self.bytes.len() - self.pos),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

pub fn parse_checkpoint(bytes: &[u8]) -> Result<Vec<(String, Tensor<f32>)>> {
    let mut c = Cursor { bytes, pos: 0 };
    if c.take(4, "magic")? != MAGIC {
        return Err(NumgradError::Checkpoint { offset: 0, msg: "bad magic, expected \"SYML\"".into() });
    }
    let version = c.u32("version")?;
    if version != VERSION {
        return Err(NumgradError::Checkpoint { offset: 4, msg: format!("unsupported version {version}") });
    }
    let count = c.u32("tensor count")?;
    let mut out = Vec::with_capacity(count.min(1024) as usize);
    for _ in 0..count {
        let len = c.u32("name length")? as usize;
        let at = c.pos;
        let name = std::str::from_utf8(c.take(len, "name")?)
            .map_err(|e| NumgradError::Checkpoint { offset: at, msg: format!("invalid UTF-8 name: {e}") })?
            .to_string();
        let rank = c.u32("rank")? as usize;
        let mut shape = Vec::with_capacity(rank.min(16));
        for _ in 0..rank {
            shape.push(c.u32("extent")? as usize);
        }
        let numel: usize = shape.iter().product();
        let raw = c.take(numel * 4, "values")?;
        let data = raw.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap())).collect();
        out.push((name, Tensor::new(shape, data)?));
    }
    if c.pos != bytes.len() {
        return Err(NumgradError::Checkpoint { offset: c.pos, msg: "trailing bytes after last tensor".into() });
    }
    Ok(out)
}
