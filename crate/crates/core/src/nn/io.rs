//! Model file: `"SWEM" | version: u32 | N, L, D, s1, s2: u32`, then every
//! weight and bias tensor of the six UNets in declaration order as
//! little-endian f64.

use std::path::Path;

use super::{Architecture, ModelParams};
use crate::codec::{read_file, write_file, Reader, Writer};
use crate::error::{Error, Result};

pub const MODEL_MAGIC: &[u8; 4] = b"SWEM";
pub const MODEL_VERSION: u32 = 1;

fn header_u32(v: usize) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::Config(format!("architecture size {v} overflows u32")))
}

impl ModelParams {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let a = &self.arch;
        let mut w = Writer::default();
        w.bytes(MODEL_MAGIC);
        w.u32(MODEL_VERSION);
        for v in [a.levels, a.length, a.dim(), a.s1, a.s2] {
            w.u32(header_u32(v)?);
        }
        for t in self.tensors() {
            w.f64s(t);
        }
        Ok(w.buf)
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut r = Reader::new(bytes, path);
        r.magic(MODEL_MAGIC)?;
        let version = r.u32()?;
        if version != MODEL_VERSION {
            return Err(r.error(format!("unsupported model version {version}")));
        }
        let levels = r.u32()? as usize;
        let length = r.u32()? as usize;
        let dim = r.u32()? as usize;
        let s1 = r.u32()? as usize;
        let s2 = r.u32()? as usize;
        let arch = Architecture {
            levels,
            length,
            s1,
            s2,
        };
        arch.validate().map_err(|e| r.error(e.to_string()))?;
        if dim != arch.dim() {
            return Err(r.error(format!("header D = {dim} but 3·L = {}", arch.dim())));
        }
        let mut params = ModelParams::zeros(arch);
        for t in params.tensors_mut() {
            let values = r.f64s(t.len())?;
            t.copy_from_slice(&values);
        }
        r.finish()?;
        Ok(params)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_file(path, &self.to_bytes()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&read_file(path)?, path)
    }
}
