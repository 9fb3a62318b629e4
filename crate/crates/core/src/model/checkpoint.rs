//! Binary checkpoint container.
//!
//! ```text
//! "ANWMCKPT"  u32 version
//! u32 length, model config as TOML text
//! u32 tensor count
//! per tensor: u32 name length, name, u32 rank, u32 dims..., f32 values
//! ```
//!
//! All integers and floats are little endian.

use std::fs;
use std::path::Path;

use super::{ModelConfig, Params, WorldModel};
use crate::autodiff::Matrix;
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"ANWMCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

pub fn to_bytes(model: &WorldModel) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    put_u32(&mut out, CHECKPOINT_VERSION);
    let config = model.config.to_toml_string();
    put_u32(&mut out, config.len() as u32);
    out.extend_from_slice(config.as_bytes());
    put_u32(&mut out, model.params.len() as u32);
    for (name, t) in model.params.names.iter().zip(&model.params.tensors) {
        put_u32(&mut out, name.len() as u32);
        out.extend_from_slice(name.as_bytes());
        put_u32(&mut out, 2);
        put_u32(&mut out, t.rows as u32);
        put_u32(&mut out, t.cols as u32);
        for v in &t.data {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize, field: &str) -> Result<&[u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::format(field, "truncated"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, field: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, field)?.try_into().expect("4 bytes")))
    }

    fn text(&mut self, field: &str) -> Result<String> {
        let n = self.u32(field)? as usize;
        let b = self.take(n, field)?;
        String::from_utf8(b.to_vec()).map_err(|_| Error::format(field, "not UTF-8"))
    }
}

pub fn from_bytes(bytes: &[u8]) -> Result<WorldModel> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8, "checkpoint.magic")? != CHECKPOINT_MAGIC {
        return Err(Error::format("checkpoint.magic", "not a checkpoint file"));
    }
    let version = r.u32("checkpoint.version")?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Version {
            what: "checkpoint".into(),
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let config = ModelConfig::from_toml_str(&r.text("checkpoint.config")?)
        .map_err(|e| Error::format("checkpoint.config", e.to_string()))?;
    let count = r.u32("checkpoint.tensor_count")? as usize;
    let mut params = Params {
        names: Vec::with_capacity(count),
        tensors: Vec::with_capacity(count),
    };
    for i in 0..count {
        let field = format!("checkpoint.tensor[{i}]");
        let name = r.text(&field)?;
        let rank = r.u32(&field)? as usize;
        if rank != 2 {
            return Err(Error::format(format!("checkpoint.{name}"), format!("rank {rank}, expected 2")));
        }
        let rows = r.u32(&field)? as usize;
        let cols = r.u32(&field)? as usize;
        let n = rows
            .checked_mul(cols)
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| Error::format(format!("checkpoint.{name}"), "tensor too large"))?;
        let raw = r.take(n, &format!("checkpoint.{name}"))?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
            .collect();
        params.names.push(name);
        params.tensors.push(Matrix::from_vec(rows, cols, data));
    }
    if r.pos != bytes.len() {
        return Err(Error::format("checkpoint", "trailing bytes"));
    }
    WorldModel::with_params(config, params)
}

pub fn save(model: &WorldModel, path: &Path) -> Result<()> {
    fs::write(path, to_bytes(model)).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<WorldModel> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}
