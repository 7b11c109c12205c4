//! Flat binary checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "SEPXFER1"
//! i32 n_freq, i32 hidden_size, i32 n_layers, i32 embedding_dim, i32 n_sources
//! repeated until EOF:
//!     u32 name_len, name bytes (UTF-8)
//!     u32 rank, u32 dims[rank]
//!     f32 values[product(dims)]
//! ```

use std::io::{Read, Write};
use std::path::Path;

use super::{ChimeraConfig, ChimeraModel, Parameter};
use crate::autodiff::{Real, Tensor};
use crate::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"SEPXFER1";

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Checkpoint(format!(
                "truncated at byte {} (wanted {n} more)",
                self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn i32(&mut self) -> Result<i32> {
        Ok(i32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn done(&self) -> bool {
        self.pos == self.buf.len()
    }
}

impl<T: Real> ChimeraModel<T> {
    pub fn to_bytes(&self) -> Vec<u8> {
        let c = &self.config;
        let mut out = Vec::with_capacity(8 + 20 + 4 * self.parameter_count());
        out.extend_from_slice(CHECKPOINT_MAGIC);
        for v in [c.n_freq, c.hidden_size, c.n_layers, c.embedding_dim, c.n_sources] {
            out.extend_from_slice(&(v as i32).to_le_bytes());
        }
        for p in &self.params {
            out.extend_from_slice(&(p.name.len() as u32).to_le_bytes());
            out.extend_from_slice(p.name.as_bytes());
            out.extend_from_slice(&(p.value.rank() as u32).to_le_bytes());
            for &d in p.value.shape() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for v in p.value.data() {
                let f = v.to_f32().unwrap_or(f32::NAN);
                out.extend_from_slice(&f.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cur = Cursor { buf: bytes, pos: 0 };
        if cur.take(8)? != CHECKPOINT_MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let mut fields = [0usize; 5];
        for f in &mut fields {
            let v = cur.i32()?;
            if v <= 0 {
                return Err(Error::Checkpoint(format!("non-positive config field {v}")));
            }
            *f = v as usize;
        }
        let config = ChimeraConfig {
            n_freq: fields[0],
            hidden_size: fields[1],
            n_layers: fields[2],
            embedding_dim: fields[3],
            n_sources: fields[4],
        };
        let template = ChimeraModel::<T>::init(config, 0)?;
        let mut params = Vec::new();
        while !cur.done() {
            let name_len = cur.u32()? as usize;
            let name = std::str::from_utf8(cur.take(name_len)?)
                .map_err(|_| Error::Checkpoint("parameter name is not UTF-8".into()))?
                .to_string();
            let rank = cur.u32()? as usize;
            let shape = (0..rank)
                .map(|_| cur.u32().map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let numel: usize = shape.iter().product();
            let raw = cur.take(numel * 4)?;
            let data = raw
                .chunks_exact(4)
                .map(|b| T::from_f32(f32::from_le_bytes(b.try_into().expect("4 bytes"))).expect("f32"))
                .collect();
            let group = template
                .param(&name)
                .map(|p| p.group)
                .ok_or_else(|| Error::Checkpoint(format!("unknown parameter {name}")))?;
            params.push(Parameter {
                name,
                group,
                value: Tensor::new(shape, data)?,
                frozen: false,
            });
        }
        ChimeraModel::from_parts(config, params)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        file.write_all(&self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
