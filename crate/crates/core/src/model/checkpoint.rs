//! `GNET` checkpoint files.
//!
//! Layout: magic `GNET`, version byte `1`, `u32` LE length + UTF-8 JSON of
//! the [`ModelConfig`], then for every parameter in construction order a
//! `u32` LE element count followed by that many `f64` LE values.

use std::fs;
use std::path::Path;

use super::{GestureNet, ModelConfig, ModelError, Result};
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"GNET";
const VERSION: u8 = 1;

pub fn write_checkpoint(net: &GestureNet) -> Vec<u8> {
    let config = serde_json::to_vec(net.config()).expect("config serializes");
    let mut out = Vec::with_capacity(16 + config.len() + net.parameter_count() * 8);
    out.extend_from_slice(&CHECKPOINT_MAGIC);
    out.push(VERSION);
    out.extend_from_slice(&(config.len() as u32).to_le_bytes());
    out.extend_from_slice(&config);
    for p in net.params().iter() {
        out.extend_from_slice(&(p.value.len() as u32).to_le_bytes());
        for v in p.value.data() {
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
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(ModelError::Format {
                offset: self.pos,
                reason: format!(
                    "truncated {what}: need {n} bytes, {} left",
                    self.buf.len() - self.pos
                ),
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes(b.try_into().unwrap()))
    }
}

pub fn read_checkpoint(bytes: &[u8]) -> Result<GestureNet> {
    let mut r = Reader { buf: bytes, pos: 0 };
    let magic = r.take(4, "magic")?;
    if magic != CHECKPOINT_MAGIC {
        return Err(ModelError::Format {
            offset: 0,
            reason: format!("bad magic {magic:02x?}"),
        });
    }
    let version = r.take(1, "version")?[0];
    if version != VERSION {
        return Err(ModelError::Format {
            offset: 4,
            reason: format!("unsupported version {version}"),
        });
    }
    let len = r.u32("config length")? as usize;
    let at = r.pos;
    let json = r.take(len, "config")?;
    let config: ModelConfig = serde_json::from_slice(json).map_err(|e| ModelError::Format {
        offset: at,
        reason: format!("config json: {e}"),
    })?;
    let mut net = GestureNet::build(config).map_err(|e| ModelError::Format {
        offset: at,
        reason: e.to_string(),
    })?;
    for p in net.params_mut().iter_mut() {
        let at = r.pos;
        let n = r.u32("parameter length")? as usize;
        if n != p.value.len() {
            return Err(ModelError::Format {
                offset: at,
                reason: format!("parameter has {n} values, config implies {}", p.value.len()),
            });
        }
        let raw = r.take(n * 8, "parameter values")?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        p.value = Tensor::new(p.value.shape(), data)?;
    }
    if r.pos != bytes.len() {
        return Err(ModelError::Format {
            offset: r.pos,
            reason: format!("{} trailing bytes", bytes.len() - r.pos),
        });
    }
    Ok(net)
}

pub fn save_checkpoint(net: &GestureNet, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, write_checkpoint(net))?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<GestureNet> {
    read_checkpoint(&fs::read(path)?)
}
