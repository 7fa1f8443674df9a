//! Binary tensor files.
//!
//! Layout: the magic bytes `VPGC`, a version byte (`1`), then channels,
//! height and width as little-endian `u32`, followed by
//! `channels·height·width` little-endian `f32` values, channel-major and
//! row-major within a channel.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::types::ConfidenceMap;

pub const MAGIC: &[u8; 4] = b"VPGC";
pub const VERSION: u8 = 1;
const HEADER_LEN: usize = 4 + 1 + 12;

pub fn encode_tensor(map: &ConfidenceMap) -> Result<Vec<u8>> {
    let dims = [map.channels(), map.height(), map.width()];
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * map.data().len());
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    for d in dims {
        let d = u32::try_from(d).map_err(|_| Error::Shape(format!("dimension {d} exceeds u32")))?;
        out.extend_from_slice(&d.to_le_bytes());
    }
    for &v in map.data() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    Ok(out)
}

pub fn decode_tensor(bytes: &[u8]) -> Result<ConfidenceMap> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::Format(format!(
            "{} bytes is shorter than the header",
            bytes.len()
        )));
    }
    if &bytes[..4] != MAGIC {
        return Err(Error::Format("bad magic; not a tensor file".into()));
    }
    if bytes[4] != VERSION {
        return Err(Error::Format(format!("unsupported tensor version {}", bytes[4])));
    }
    let dim = |i: usize| {
        let o = 5 + 4 * i;
        u32::from_le_bytes(bytes[o..o + 4].try_into().expect("4-byte slice")) as usize
    };
    let (c, h, w) = (dim(0), dim(1), dim(2));
    let n = c
        .checked_mul(h)
        .and_then(|v| v.checked_mul(w))
        .ok_or_else(|| Error::Format("tensor dimensions overflow".into()))?;
    let payload = &bytes[HEADER_LEN..];
    if payload.len() != n.saturating_mul(4) {
        return Err(Error::Format(format!(
            "payload holds {} bytes, header promises {}x{}x{} f32 values",
            payload.len(),
            c,
            h,
            w
        )));
    }
    let data = payload
        .chunks_exact(4)
        .map(|b| f64::from(f32::from_le_bytes(b.try_into().expect("4-byte chunk"))))
        .collect();
    ConfidenceMap::from_raw(c, h, w, data)
}

pub fn read_tensor(path: &Path) -> Result<ConfidenceMap> {
    decode_tensor(&fs::read(path)?)
}

pub fn write_tensor(path: &Path, map: &ConfidenceMap) -> Result<()> {
    let bytes = encode_tensor(map)?;
    let mut f = fs::File::create(path)?;
    f.write_all(&bytes)?;
    Ok(())
}
