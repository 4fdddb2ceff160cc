//! `.lut` container: little-endian header followed by the three axis tables.
//!
//! ```text
//! magic "PCLT" | version u16 = 1 | rf_size u16 | bins u32 | axis_count u32 = 3
//! | tag_len u32 | tag (UTF-8) | zero padding to 8-byte alignment
//! | axis 0 | axis 1 | axis 2      (b^n binary16 values each, flat-index order)
//! ```

use std::fs;
use std::path::Path;

use half::f16;

use crate::error::{Error, Result};

use super::table::{lut_size_bytes, LutTable};

pub const LUT_MAGIC: &[u8; 4] = b"PCLT";
pub const LUT_VERSION: u16 = 1;
const FIXED_HEADER: usize = 20;

fn header_len(tag_len: usize) -> usize {
    (FIXED_HEADER + tag_len).div_ceil(8) * 8
}

pub fn encode_lut(table: &LutTable) -> Vec<u8> {
    let tag = table.provenance().as_bytes();
    let header = header_len(tag.len());
    let mut out = Vec::with_capacity(header + table.payload_bytes() as usize);
    out.extend_from_slice(LUT_MAGIC);
    out.extend_from_slice(&LUT_VERSION.to_le_bytes());
    out.extend_from_slice(&(table.rf_size() as u16).to_le_bytes());
    out.extend_from_slice(&table.bins().to_le_bytes());
    out.extend_from_slice(&3u32.to_le_bytes());
    out.extend_from_slice(&(tag.len() as u32).to_le_bytes());
    out.extend_from_slice(tag);
    out.resize(header, 0);
    for axis in 0..3 {
        for v in table.axis(axis) {
            out.extend_from_slice(&v.to_bits().to_le_bytes());
        }
    }
    out
}

pub fn decode_lut(bytes: &[u8]) -> Result<LutTable> {
    if bytes.len() < FIXED_HEADER {
        return Err(Error::Lut(format!(
            "truncated header: {} bytes, need at least {FIXED_HEADER}",
            bytes.len()
        )));
    }
    if &bytes[..4] != LUT_MAGIC {
        return Err(Error::Lut("bad magic, not a lookup-table file".into()));
    }
    let u16_at = |o: usize| u16::from_le_bytes([bytes[o], bytes[o + 1]]);
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    let version = u16_at(4);
    if version != LUT_VERSION {
        return Err(Error::Lut(format!("unsupported version {version}")));
    }
    let rf_size = u16_at(6) as u32;
    let bins = u32_at(8);
    let axis_count = u32_at(12);
    if axis_count != 3 {
        return Err(Error::Lut(format!("axis count {axis_count}, expected 3")));
    }
    let tag_len = u32_at(16) as usize;
    let header = header_len(tag_len) as u64;
    let payload = lut_size_bytes(rf_size, bins as u64)?;
    let expected = payload + header as u128;
    if expected != bytes.len() as u128 {
        return Err(Error::LutSizeMismatch {
            expected: u64::try_from(expected).unwrap_or(u64::MAX),
            found: bytes.len() as u64,
        });
    }
    let tag = std::str::from_utf8(&bytes[FIXED_HEADER..FIXED_HEADER + tag_len])
        .map_err(|_| Error::Lut("provenance tag is not UTF-8".into()))?
        .to_string();
    let entries = (payload / 6) as usize;
    let body = &bytes[header as usize..];
    let axes: [Vec<f16>; 3] = std::array::from_fn(|a| {
        body[a * entries * 2..(a + 1) * entries * 2]
            .chunks_exact(2)
            .map(|c| f16::from_bits(u16::from_le_bytes([c[0], c[1]])))
            .collect()
    });
    LutTable::from_axes(rf_size, bins, axes, tag)
}

pub fn save_lut(table: &LutTable, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_lut(table))?;
    Ok(())
}

pub fn load_lut(path: impl AsRef<Path>) -> Result<LutTable> {
    decode_lut(&fs::read(path)?)
}
