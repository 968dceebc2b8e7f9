//! Checkpoint file.
//!
//! ```text
//! magic "CMC3DCKP"                     8 bytes
//! version                              u32 LE
//! config                               u32 LE length + UTF-8 JSON
//! tensor count                         u32 LE
//! per tensor:
//!   name                               u16 LE length + UTF-8
//!   trainable                          u8 (0 or 1)
//!   rank                               u8
//!   dims                               rank × u32 LE
//!   values                             prod(dims) × f64 LE
//! ```

use std::fs;
use std::path::Path;

use super::{Model, Param, ParamStore};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"CMC3DCKP";
pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

/// Parameters plus the training configuration that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config_json: String,
    pub params: ParamStore,
}

pub fn save_checkpoint(model: &Model, config_json: &str, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode(model.params(), config_json)?;
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    checkpoint_from_bytes(&bytes).map_err(|e| match e {
        Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
        other => other,
    })
}

pub(crate) fn encode(params: &ParamStore, config_json: &str) -> Result<Vec<u8>> {
    let fmt_err = |m: String| Error::Format(m);
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_FORMAT_VERSION.to_le_bytes());
    let cfg = config_json.as_bytes();
    out.extend_from_slice(
        &u32::try_from(cfg.len())
            .map_err(|_| fmt_err("config too large".into()))?
            .to_le_bytes(),
    );
    out.extend_from_slice(cfg);
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for p in params.params() {
        let name = p.name.as_bytes();
        let len = u16::try_from(name.len())
            .map_err(|_| fmt_err(format!("tensor name {} too long", p.name)))?;
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(name);
        out.push(p.trainable as u8);
        let rank = u8::try_from(p.shape.len())
            .map_err(|_| fmt_err(format!("{} rank too large", p.name)))?;
        out.push(rank);
        for &d in &p.shape {
            let d = u32::try_from(d).map_err(|_| fmt_err(format!("{} dim too large", p.name)))?;
            out.extend_from_slice(&d.to_le_bytes());
        }
        for v in &p.value {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Format(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn string(&mut self, n: usize) -> Result<String> {
        std::str::from_utf8(self.take(n)?)
            .map(str::to_owned)
            .map_err(|_| Error::Format("invalid UTF-8".into()))
    }
}

/// Parses checkpoint bytes already read into memory.
pub fn checkpoint_from_bytes(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8)? != CHECKPOINT_MAGIC {
        return Err(Error::Format("bad magic, not a CMC3DCKP file".into()));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_FORMAT_VERSION {
        return Err(Error::Format(format!(
            "unsupported checkpoint version {version}"
        )));
    }
    let cfg_len = r.u32()? as usize;
    let config_json = r.string(cfg_len)?;
    let count = r.u32()? as usize;
    let mut params = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let name_len = r.u16()? as usize;
        let name = r.string(name_len)?;
        let trainable = match r.u8()? {
            0 => false,
            1 => true,
            other => {
                return Err(Error::Format(format!(
                    "bad trainable flag {other} for {name}"
                )))
            }
        };
        let rank = r.u8()? as usize;
        let shape = (0..rank)
            .map(|_| r.u32().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let n = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .and_then(|n| n.checked_mul(8))
            .ok_or_else(|| Error::Format(format!("{name} dims overflow")))?;
        let value = r
            .take(n)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        params.push(Param {
            name,
            shape,
            value,
            trainable,
        });
    }
    if r.pos != bytes.len() {
        return Err(Error::Format(format!(
            "{} trailing bytes after last tensor",
            bytes.len() - r.pos
        )));
    }
    Ok(Checkpoint {
        config_json,
        params: ParamStore::from_params(params),
    })
}
