//! Binary `.kpm` map files.
//!
//! Layout, little-endian: magic `KPM1`, `u32` channels, `u32` width,
//! `u32` height, `f32` sigma, then every value as `f32`, channel-major and
//! row-major within a channel.

use std::io::{Read, Write};

use serde::Serialize;

use super::KeypointMapStack;
use crate::error::{Error, Result};

pub const KPM_MAGIC: &[u8; 4] = b"KPM1";
const HEADER_LEN: usize = 20;
/// Guards against allocating absurd buffers from a corrupt header.
const MAX_VALUES: u64 = 1 << 30;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KpmHeader {
    pub channels: u32,
    pub width: u32,
    pub height: u32,
    pub sigma: f32,
}

impl KpmHeader {
    pub fn value_count(&self) -> u64 {
        self.channels as u64 * self.width as u64 * self.height as u64
    }

    fn validate(&self) -> Result<()> {
        if self.channels == 0 || self.width == 0 || self.height == 0 {
            return Err(Error::Format(format!(
                "zero dimension in header ({} x {} x {})",
                self.channels, self.width, self.height
            )));
        }
        if !(self.sigma.is_finite() && self.sigma > 0.0) {
            return Err(Error::Format(format!("invalid sigma {}", self.sigma)));
        }
        if self.value_count() > MAX_VALUES {
            return Err(Error::Format("map too large".into()));
        }
        Ok(())
    }
}

fn u32_at(buf: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(buf[at..at + 4].try_into().unwrap())
}

fn parse_header(buf: &[u8; HEADER_LEN]) -> Result<KpmHeader> {
    if &buf[..4] != KPM_MAGIC {
        return Err(Error::Format("bad magic, expected KPM1".into()));
    }
    let header = KpmHeader {
        channels: u32_at(buf, 4),
        width: u32_at(buf, 8),
        height: u32_at(buf, 12),
        sigma: f32::from_le_bytes(buf[16..20].try_into().unwrap()),
    };
    header.validate()?;
    Ok(header)
}

fn read_exact_or_format(r: &mut impl Read, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => Error::Format(format!("truncated {what}")),
        _ => Error::Io(e),
    })
}

/// Reads and validates only the header.
pub fn read_kpm_header(mut r: impl Read) -> Result<KpmHeader> {
    let mut buf = [0u8; HEADER_LEN];
    read_exact_or_format(&mut r, &mut buf, "header")?;
    parse_header(&buf)
}

/// Reads a whole stack. Trailing bytes and out-of-range values are errors.
pub fn read_kpm(mut r: impl Read) -> Result<KeypointMapStack> {
    let mut head = [0u8; HEADER_LEN];
    read_exact_or_format(&mut r, &mut head, "header")?;
    let header = parse_header(&head)?;
    let mut raw = vec![0u8; header.value_count() as usize * 4];
    read_exact_or_format(&mut r, &mut raw, "map data")?;
    let mut extra = [0u8; 1];
    if r.read(&mut extra)? != 0 {
        return Err(Error::Format("trailing bytes after map data".into()));
    }
    let data = raw
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    KeypointMapStack::from_raw(
        header.channels as usize,
        header.width as usize,
        header.height as usize,
        header.sigma,
        data,
    )
    .map_err(|e| Error::Format(e.to_string()))
}

pub fn write_kpm(stack: &KeypointMapStack, mut w: impl Write) -> Result<()> {
    let mut out = Vec::with_capacity(HEADER_LEN + stack.data().len() * 4);
    out.extend_from_slice(KPM_MAGIC);
    for dim in [stack.channels(), stack.width(), stack.height()] {
        out.extend_from_slice(&(dim as u32).to_le_bytes());
    }
    out.extend_from_slice(&stack.sigma_f32().to_le_bytes());
    for v in stack.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&out)?;
    Ok(())
}
