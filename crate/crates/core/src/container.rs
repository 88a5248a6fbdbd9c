//! On-disk container shared by graph snapshots and model checkpoints:
//!
//! ```text
//! <MAGIC> <version>\n
//! manifest-bytes <N>\n
//! <N bytes of pretty-printed JSON>\n
//! <little-endian binary payload>
//! ```

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

pub const VERSION: u32 = 1;

pub fn encode<M: Serialize>(magic: &str, manifest: &M, payload: &[u8]) -> Result<Vec<u8>> {
    let json = serde_json::to_vec_pretty(manifest)?;
    let mut out = Vec::with_capacity(json.len() + payload.len() + 64);
    out.extend_from_slice(format!("{magic} {VERSION}\nmanifest-bytes {}\n", json.len()).as_bytes());
    out.extend_from_slice(&json);
    out.push(b'\n');
    out.extend_from_slice(payload);
    Ok(out)
}

pub fn write<M: Serialize>(path: &Path, magic: &str, manifest: &M, payload: &[u8]) -> Result<()> {
    fs::write(path, encode(magic, manifest, payload)?)?;
    Ok(())
}

fn take_line<'a>(bytes: &'a [u8], pos: &mut usize) -> Result<&'a str> {
    let rest = &bytes[*pos..];
    let end = rest
        .iter()
        .take(256)
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::Format("missing header line".into()))?;
    *pos += end + 1;
    std::str::from_utf8(&rest[..end]).map_err(|_| Error::Format("header is not UTF-8".into()))
}

pub fn decode<M: DeserializeOwned>(magic: &str, bytes: &[u8]) -> Result<(M, Vec<u8>)> {
    let mut pos = 0;
    let header = take_line(bytes, &mut pos)?;
    let (m, v) = header
        .split_once(' ')
        .ok_or_else(|| Error::Format(format!("bad magic line `{header}`")))?;
    if m != magic {
        return Err(Error::Format(format!("bad magic `{m}`, expected `{magic}`")));
    }
    let version: u32 = v.parse().map_err(|_| Error::Format(format!("bad version `{v}`")))?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported version {version}, expected {VERSION}")));
    }
    let len_line = take_line(bytes, &mut pos)?;
    let len: usize = len_line
        .strip_prefix("manifest-bytes ")
        .and_then(|n| n.parse().ok())
        .ok_or_else(|| Error::Format(format!("bad manifest length line `{len_line}`")))?;
    if pos + len + 1 > bytes.len() || bytes[pos + len] != b'\n' {
        return Err(Error::Format("truncated manifest".into()));
    }
    let manifest = serde_json::from_slice(&bytes[pos..pos + len])?;
    Ok((manifest, bytes[pos + len + 1..].to_vec()))
}

pub fn read<M: DeserializeOwned>(path: &Path, magic: &str) -> Result<(M, Vec<u8>)> {
    decode(magic, &fs::read(path)?)
}

pub fn push_u32s(out: &mut Vec<u8>, xs: &[u32]) {
    out.reserve(xs.len() * 4);
    for x in xs {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

pub fn push_f32s(out: &mut Vec<u8>, xs: impl IntoIterator<Item = f64>) {
    for x in xs {
        out.extend_from_slice(&(x as f32).to_le_bytes());
    }
}

/// Sequential reader over a little-endian payload.
pub struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    pub fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Shape(format!(
                "payload too short: need {} bytes at offset {}, have {}",
                n,
                self.pos,
                self.bytes.len()
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn u32s(&mut self, n: usize) -> Result<Vec<u32>> {
        Ok(self.take(n * 4)?.chunks_exact(4).map(|c| u32::from_le_bytes(c.try_into().unwrap())).collect())
    }

    pub fn f32s(&mut self, n: usize) -> Result<Vec<f64>> {
        Ok(self
            .take(n * 4)?
            .chunks_exact(4)
            .map(|c| f64::from(f32::from_le_bytes(c.try_into().unwrap())))
            .collect())
    }

    pub fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        Ok(self.take(n * 8)?.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
    }

    pub fn finish(self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(Error::Shape(format!("{} trailing payload bytes", self.bytes.len() - self.pos)));
        }
        Ok(())
    }
}
