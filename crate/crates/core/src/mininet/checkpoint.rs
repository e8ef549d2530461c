//! Binary checkpoints: magic `GRNC`, a u32 version, the network config as
//! length-prefixed `key = value` text, then a u32 tensor count and each
//! tensor as a u32 length followed by little-endian f32 values. All integers
//! are little-endian.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

use super::config::NetConfig;
use super::params::Params;

const MAGIC: &[u8; 4] = b"GRNC";
const VERSION: u32 = 1;

pub fn encode_checkpoint(config: &NetConfig, params: &Params) -> Vec<u8> {
    let text = config.to_text();
    let mut out = Vec::with_capacity(16 + text.len() + 4 * params.count());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(text.len() as u32).to_le_bytes());
    out.extend_from_slice(text.as_bytes());
    out.extend_from_slice(&(params.tensors().len() as u32).to_le_bytes());
    for t in params.tensors() {
        out.extend_from_slice(&(t.len() as u32).to_le_bytes());
        for &v in t {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::format(format!("checkpoint truncated while reading {what}")))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<(NetConfig, Params)> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(Error::format("not a checkpoint (bad magic)"));
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::format(format!(
            "unsupported checkpoint version {version}"
        )));
    }
    let len = r.u32("config length")? as usize;
    let text = std::str::from_utf8(r.take(len, "config")?)
        .map_err(|_| Error::format("checkpoint config is not UTF-8"))?;
    let mut config = NetConfig::default();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::format(format!("bad config line '{line}' in checkpoint")))?;
        if !config.set(key.trim(), value)? {
            return Err(Error::format(format!(
                "unknown config key '{}' in checkpoint",
                key.trim()
            )));
        }
    }
    let count = r.u32("tensor count")? as usize;
    let mut tensors = Vec::with_capacity(count.min(1024));
    for i in 0..count {
        let n = r.u32("tensor length")? as usize;
        let raw = r.take(n.saturating_mul(4), &format!("tensor {i}"))?;
        tensors.push(
            raw.chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
                .collect(),
        );
    }
    if r.pos != bytes.len() {
        return Err(Error::format(format!(
            "{} trailing bytes after checkpoint tensors",
            bytes.len() - r.pos
        )));
    }
    let params = Params::from_tensors(&config, tensors)
        .map_err(|e| Error::format(format!("checkpoint does not match its config: {e}")))?;
    Ok((config, params))
}

pub fn save_checkpoint(path: &Path, config: &NetConfig, params: &Params) -> Result<()> {
    fs::write(path, encode_checkpoint(config, params)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<(NetConfig, Params)> {
    decode_checkpoint(&fs::read(path).map_err(|e| Error::io(path, e))?)
}
