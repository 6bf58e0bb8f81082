// SPDX-License-Identifier: MIT OR Apache-2.0

use std::io::{self, Write};
use std::path::Path;

use crate::{Error, Result};

pub const TOKENS_MAGIC: [u8; 4] = *b"NSTK";
pub const ACT_MAGIC: [u8; 4] = *b"NSAC";
pub const MATRIX_MAGIC: [u8; 4] = *b"NSMX";
pub const FORMAT_VERSION: u32 = 1;

/// Size of the fixed activation-file header: magic, version, layer, token_count.
pub const ACT_HEADER_LEN: usize = 4 + 4 + 4 + 8;
pub const MATRIX_HEADER_LEN: usize = 4 + 4 + 4;

/// Bounds-checked little-endian reader over a byte slice. Every short read is
/// reported as corruption at the offset where the read started.
pub(crate) struct ByteCursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> ByteCursor<'a> {
    pub fn new(bytes: &'a [u8], path: &'a Path) -> Self {
        Self { bytes, pos: 0, path }
    }

    pub fn pos(&self) -> usize {
        self.pos
    }

    pub fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    pub fn corrupt(&self, offset: usize, reason: impl Into<String>) -> Error {
        Error::corrupt(self.path, offset as u64, reason)
    }

    pub fn take(&mut self, len: usize, what: &str) -> Result<&'a [u8]> {
        if self.remaining() < len {
            return Err(self.corrupt(
                self.pos,
                format!(
                    "truncated {what}: need {len} bytes, {} available",
                    self.remaining()
                ),
            ));
        }
        let out = &self.bytes[self.pos..self.pos + len];
        self.pos += len;
        Ok(out)
    }

    pub fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    pub fn u64(&mut self, what: &str) -> Result<u64> {
        let b = self.take(8, what)?;
        let mut a = [0u8; 8];
        a.copy_from_slice(b);
        Ok(u64::from_le_bytes(a))
    }

    /// Reads the magic and version. A file too short to hold them is
    /// corruption; a wrong magic or version is an unsupported format.
    pub fn header(&mut self, magic: [u8; 4]) -> Result<u32> {
        let found = self.take(4, "magic")?;
        if found != magic {
            return Err(Error::UnsupportedFormat {
                path: self.path.to_path_buf(),
                reason: format!(
                    "bad magic {:?}, expected {:?}",
                    String::from_utf8_lossy(found),
                    String::from_utf8_lossy(&magic)
                ),
            });
        }
        let version = self.u32("version")?;
        if version != FORMAT_VERSION {
            return Err(Error::UnsupportedFormat {
                path: self.path.to_path_buf(),
                reason: format!("format version {version}, this build reads {FORMAT_VERSION}"),
            });
        }
        Ok(version)
    }
}

#[inline]
pub(crate) fn read_u32_at(bytes: &[u8], pos: usize) -> u32 {
    u32::from_le_bytes([bytes[pos], bytes[pos + 1], bytes[pos + 2], bytes[pos + 3]])
}

pub(crate) fn write_u32<W: Write>(w: &mut W, v: u32) -> io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

pub(crate) fn write_u64<W: Write>(w: &mut W, v: u64) -> io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

pub(crate) fn write_u32_slice<W: Write>(w: &mut W, values: &[u32]) -> io::Result<()> {
    for chunk in values.chunks(1024) {
        let mut buf = [0u8; 4096];
        for (i, v) in chunk.iter().enumerate() {
            buf[i * 4..i * 4 + 4].copy_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf[..chunk.len() * 4])?;
    }
    Ok(())
}

pub(crate) fn write_f32_slice<W: Write>(w: &mut W, values: &[f32]) -> io::Result<()> {
    for chunk in values.chunks(1024) {
        let mut buf = [0u8; 4096];
        for (i, v) in chunk.iter().enumerate() {
            buf[i * 4..i * 4 + 4].copy_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf[..chunk.len() * 4])?;
    }
    Ok(())
}
