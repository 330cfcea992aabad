//! Dataset archive.
//!
//! Layout, all integers little-endian:
//!
//! | bytes         | content                                             |
//! |---------------|-----------------------------------------------------|
//! | 4             | magic `MSDS`                                        |
//! | 4             | format version (`u32`)                              |
//! | 4             | header length `H` (`u32`)                           |
//! | H             | JSON header: shape, labels and device profiles      |
//! | rest          | one `f32` block per profile, in header order        |
//!
//! Each block holds `channels * windows * samples_per_window` values laid out
//! channel-major: all of channel 0 over the whole horizon, then channel 1.

use std::path::Path;

use multisense_core::synth::{Dataset, DeviceBlock, DeviceProfile};
use serde::{Deserialize, Serialize};

use crate::error::{FormatError, Result, SimError};
use crate::fsutil;

pub const MAGIC: &[u8; 4] = b"MSDS";
pub const VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    seed: u64,
    classes: usize,
    channels: usize,
    sample_rate: f64,
    window_secs: f64,
    samples_per_window: usize,
    labels: Vec<usize>,
    profiles: Vec<DeviceProfile>,
}

pub fn encode(ds: &Dataset) -> Result<Vec<u8>, FormatError> {
    ds.validate()?;
    let header = Header {
        seed: ds.seed,
        classes: ds.classes,
        channels: ds.channels,
        sample_rate: ds.sample_rate,
        window_secs: ds.window_secs,
        samples_per_window: ds.samples_per_window(),
        labels: ds.labels.clone(),
        profiles: ds.profiles.clone(),
    };
    let json = serde_json::to_vec(&header).map_err(|e| FormatError::Header { offset: 12, message: e.to_string() })?;
    let header_len = u32::try_from(json.len())
        .map_err(|_| FormatError::Header { offset: 8, message: format!("header of {} bytes is too large", json.len()) })?;
    let body: usize = ds.blocks.iter().map(|b| b.samples.len() * 4).sum();
    let mut out = Vec::with_capacity(12 + json.len() + body);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&header_len.to_le_bytes());
    out.extend_from_slice(&json);
    for b in &ds.blocks {
        for x in &b.samples {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    Ok(out)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], FormatError> {
        let left = self.bytes.len() - self.pos;
        if n > left {
            return Err(FormatError::Truncated { offset: self.pos as u64, needed: n as u64, available: left as u64 });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, FormatError> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

pub fn decode(bytes: &[u8]) -> Result<Dataset, FormatError> {
    let mut cur = Cursor { bytes, pos: 0 };
    let magic = cur.take(MAGIC.len())?;
    if magic != MAGIC {
        return Err(FormatError::BadMagic { found: magic.to_vec(), expected: MAGIC });
    }
    let version = cur.u32()?;
    if version != VERSION {
        return Err(FormatError::UnsupportedVersion { what: "dataset", found: version.into(), supported: VERSION.into() });
    }
    let header_len = cur.u32()? as usize;
    let header_at = cur.pos as u64;
    let header: Header = serde_json::from_slice(cur.take(header_len)?).map_err(|e| FormatError::Header {
        offset: header_at + json_offset(&bytes[header_at as usize..header_at as usize + header_len], e.line(), e.column()),
        message: e.to_string(),
    })?;

    let block_len = header
        .channels
        .checked_mul(header.labels.len())
        .and_then(|x| x.checked_mul(header.samples_per_window))
        .ok_or_else(|| FormatError::Header { offset: header_at, message: "block size overflows".into() })?;
    let mut blocks = Vec::with_capacity(header.profiles.len());
    for p in &header.profiles {
        let raw = cur.take(block_len * 4)?;
        let samples = raw.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
        blocks.push(DeviceBlock { device: p.id, samples });
    }
    if cur.pos != bytes.len() {
        return Err(FormatError::Trailing { offset: cur.pos as u64, extra: (bytes.len() - cur.pos) as u64 });
    }

    let ds = Dataset {
        seed: header.seed,
        classes: header.classes,
        channels: header.channels,
        sample_rate: header.sample_rate,
        window_secs: header.window_secs,
        labels: header.labels,
        profiles: header.profiles,
        blocks,
    };
    if ds.samples_per_window() != header.samples_per_window {
        return Err(FormatError::Header {
            offset: header_at,
            message: format!(
                "samples_per_window {} disagrees with window_secs x sample_rate = {}",
                header.samples_per_window,
                ds.samples_per_window()
            ),
        });
    }
    ds.validate()?;
    Ok(ds)
}

/// Byte offset of a serde_json (1-based line, column) position.
fn json_offset(text: &[u8], line: usize, column: usize) -> u64 {
    let mut offset = 0usize;
    for (i, l) in text.split(|&b| b == b'\n').enumerate() {
        if i + 1 == line {
            return (offset + column.saturating_sub(1)).min(text.len()) as u64;
        }
        offset += l.len() + 1;
    }
    text.len() as u64
}

pub fn save(ds: &Dataset, path: &Path) -> Result<()> {
    let bytes = encode(ds).map_err(|e| SimError::format(path, e))?;
    fsutil::write_atomic(path, &bytes)
}

pub fn load(path: &Path) -> Result<Dataset> {
    let bytes = fsutil::read(path)?;
    decode(&bytes).map_err(|e| SimError::format(path, e))
}
