//! Preprocessed volume file.
//!
//! ```text
//! magic "CMC3DVOL"            8 bytes
//! version                     u32 LE
//! D, H, W                     u32 LE each
//! voxels                      D·H·W × f32 LE, depth-major then row-major
//! scan_id                     u16 LE length + UTF-8 bytes
//! source_slice_count          u32 LE
//! ```

use std::fs;
use std::path::Path;

use super::{Shape3, Volume};
use crate::error::{Error, Result};

pub const VOLUME_MAGIC: &[u8; 8] = b"CMC3DVOL";
pub const VOLUME_FORMAT_VERSION: u32 = 1;

const HEADER_LEN: usize = 8 + 4 + 3 * 4;

pub fn save_volume(volume: &Volume, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode(volume)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_volume(path: impl AsRef<Path>) -> Result<Volume> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes).map_err(|e| match e {
        Error::Format(msg) => Error::Format(format!("{}: {msg}", path.display())),
        other => other,
    })
}

pub(crate) fn encode(volume: &Volume) -> Result<Vec<u8>> {
    let shape = volume.shape();
    let id = volume.scan_id().as_bytes();
    let id_len = u16::try_from(id.len())
        .map_err(|_| Error::Format(format!("scan_id of {} bytes exceeds u16", id.len())))?;
    let dim = |n: usize| {
        u32::try_from(n).map_err(|_| Error::Format(format!("dimension {n} exceeds u32")))
    };

    let mut out = Vec::with_capacity(HEADER_LEN + 4 * shape.len() + 2 + id.len() + 4);
    out.extend_from_slice(VOLUME_MAGIC);
    out.extend_from_slice(&VOLUME_FORMAT_VERSION.to_le_bytes());
    for n in [shape.d, shape.h, shape.w] {
        out.extend_from_slice(&dim(n)?.to_le_bytes());
    }
    for v in volume.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(&id_len.to_le_bytes());
    out.extend_from_slice(id);
    out.extend_from_slice(&volume.source_slice_count().to_le_bytes());
    Ok(out)
}

pub(crate) fn decode(bytes: &[u8]) -> Result<Volume> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::Format(format!(
            "truncated header: {} bytes",
            bytes.len()
        )));
    }
    if &bytes[..8] != VOLUME_MAGIC {
        return Err(Error::Format("bad magic, not a CMC3DVOL file".into()));
    }
    let u32_at = |off: usize| u32::from_le_bytes(bytes[off..off + 4].try_into().unwrap());
    let version = u32_at(8);
    if version != VOLUME_FORMAT_VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let shape = Shape3::new(
        u32_at(12) as usize,
        u32_at(16) as usize,
        u32_at(20) as usize,
    );
    if shape.is_empty() {
        return Err(Error::Format(format!("degenerate dimensions {shape}")));
    }
    let payload = shape
        .len()
        .checked_mul(4)
        .ok_or_else(|| Error::Format(format!("dimensions {shape} overflow")))?;
    let id_off = HEADER_LEN + payload;
    if bytes.len() < id_off + 2 {
        return Err(Error::Format(format!(
            "payload for {shape} needs {payload} bytes, file has {}",
            bytes.len() - HEADER_LEN
        )));
    }
    let id_len = u16::from_le_bytes([bytes[id_off], bytes[id_off + 1]]) as usize;
    let expected = id_off + 2 + id_len + 4;
    if bytes.len() != expected {
        return Err(Error::Format(format!(
            "file length {} inconsistent with header (expected {expected})",
            bytes.len()
        )));
    }

    let data: Vec<f32> = bytes[HEADER_LEN..id_off]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    if data.iter().any(|v| !v.is_finite()) {
        return Err(Error::Format("non-finite voxel in payload".into()));
    }
    let scan_id = std::str::from_utf8(&bytes[id_off + 2..id_off + 2 + id_len])
        .map_err(|_| Error::Format("scan_id is not valid UTF-8".into()))?
        .to_owned();
    let source_slice_count = u32_at(id_off + 2 + id_len);
    Ok(Volume::from_parts_unchecked(
        data,
        shape,
        scan_id,
        source_slice_count,
    ))
}
