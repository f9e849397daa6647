//! Binary checkpoint container.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! "MEIRL1"
//! u32 header_len, header bytes (UTF-8 JSON describing the model)
//! u64 iteration
//! u64 optimizer step
//! f64 learning_rate, beta1, beta2, epsilon
//! u32 parameter count
//! per parameter:
//!   u32 name_len, name bytes
//!   u32 ndim, u64 x ndim extents
//!   f64 x n values, f64 x n first moments, f64 x n second moments
//! ```

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use super::{AdamConfig, ParameterStore, Tensor};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 6] = b"MEIRL1";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub header: String,
    pub iteration: u64,
    pub store: ParameterStore,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(self.header.len() as u32).to_le_bytes());
        out.extend_from_slice(self.header.as_bytes());
        out.extend_from_slice(&self.iteration.to_le_bytes());
        out.extend_from_slice(&self.store.step().to_le_bytes());
        let a = self.store.adam;
        for v in [a.learning_rate, a.beta1, a.beta2, a.epsilon] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&(self.store.len() as u32).to_le_bytes());
        for (idx, name) in self.store.names().iter().enumerate() {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            let value = self.store.value(idx);
            out.extend_from_slice(&(value.shape().len() as u32).to_le_bytes());
            for &d in value.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            let (m, v) = self.store.moments(idx);
            for x in value.data().iter().chain(m).chain(v) {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], origin: &Path) -> Result<Self> {
        let mut r = Reader {
            bytes,
            pos: 0,
            origin,
        };
        if r.take(6)? != MAGIC {
            return Err(r.fail("bad magic, not a MEIRL1 checkpoint"));
        }
        let hlen = r.u32()? as usize;
        let header =
            String::from_utf8(r.take(hlen)?.to_vec()).map_err(|_| r.fail("header is not UTF-8"))?;
        let iteration = r.u64()?;
        let step = r.u64()?;
        let adam = AdamConfig {
            learning_rate: r.f64()?,
            beta1: r.f64()?,
            beta2: r.f64()?,
            epsilon: r.f64()?,
        };
        let mut store = ParameterStore::new(adam);
        let count = r.u32()?;
        for _ in 0..count {
            let nlen = r.u32()? as usize;
            let name = String::from_utf8(r.take(nlen)?.to_vec())
                .map_err(|_| r.fail("parameter name is not UTF-8"))?;
            let ndim = r.u32()? as usize;
            let shape = (0..ndim)
                .map(|_| r.u64().map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let n: usize = shape.iter().product();
            let value = r.f64s(n)?;
            let m = r.f64s(n)?;
            let v = r.f64s(n)?;
            let idx = store.insert(name, Tensor::zeros(&shape))?;
            store.restore_state(idx, value, m, v)?;
        }
        store.set_step(step);
        if r.pos != bytes.len() {
            return Err(r.fail("trailing bytes after last parameter"));
        }
        Ok(Checkpoint {
            header,
            iteration,
            store,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&self.to_bytes())
            .map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    origin: &'a Path,
}

impl<'a> Reader<'a> {
    fn fail(&self, reason: &str) -> Error {
        Error::Format {
            path: self.origin.to_path_buf(),
            reason: format!("{reason} (at byte {})", self.pos),
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(self.fail("unexpected end of file"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(n.checked_mul(8).ok_or_else(|| self.fail("size overflow"))?)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}
