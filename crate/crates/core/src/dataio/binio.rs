//! Little-endian primitives shared by the native formats.

use std::path::Path;

use crate::diffnum::Tensor;
use crate::error::{Error, Result};

/// Upper bound on tensor rank accepted by readers.
const MAX_RANK: usize = 8;

#[derive(Default)]
pub(crate) struct Writer {
    pub buf: Vec<u8>,
}

impl Writer {
    pub fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    pub fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn f64s(&mut self, vs: &[f64]) {
        self.buf.reserve(vs.len() * 8);
        for &v in vs {
            self.f64(v);
        }
    }

    pub fn len32(&mut self, n: usize) -> Result<()> {
        let n = u32::try_from(n).map_err(|_| Error::InvalidArgument(format!("count {n} exceeds u32")))?;
        self.u32(n);
        Ok(())
    }

    pub fn str(&mut self, s: &str) -> Result<()> {
        self.len32(s.len())?;
        self.buf.extend_from_slice(s.as_bytes());
        Ok(())
    }

    pub fn tensor(&mut self, t: &Tensor) -> Result<()> {
        self.len32(t.shape().len())?;
        for &d in t.shape() {
            self.len32(d)?;
        }
        self.f64s(t.data());
        Ok(())
    }
}

pub(crate) struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    what: &'static str,
}

impl<'a> Reader<'a> {
    pub fn new(buf: &'a [u8], what: &'static str) -> Self {
        Reader { buf, pos: 0, what }
    }

    /// Checks the 4-byte magic and a supported version.
    pub fn header(&mut self, magic: &[u8; 4], version: u32) -> Result<()> {
        let name = std::str::from_utf8(magic).unwrap_or("?");
        if self.buf.len() < 4 || &self.buf[..4] != magic {
            return Err(Error::Format(format!("not a {name} file")));
        }
        self.pos = 4;
        let v = self.u32()?;
        if v != version {
            return Err(Error::Format(format!("unsupported {name} version {v} (expected {version})")));
        }
        Ok(())
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or(Error::Truncated {
            what: self.what,
            expected: self.pos as u64 + n as u64,
            actual: self.buf.len() as u64,
        })?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    pub fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    /// `n` floats; the byte count is checked before allocating.
    pub fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = n.checked_mul(8).ok_or_else(|| Error::Format(format!("{}: count overflow", self.what)))?;
        Ok(self.take(bytes)?.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
    }

    pub fn count(&mut self) -> Result<usize> {
        Ok(self.u32()? as usize)
    }

    pub fn str(&mut self) -> Result<String> {
        let n = self.count()?;
        let raw = self.take(n)?;
        String::from_utf8(raw.to_vec()).map_err(|_| Error::Format(format!("{}: string is not UTF-8", self.what)))
    }

    pub fn tensor(&mut self) -> Result<Tensor> {
        let rank = self.count()?;
        if rank > MAX_RANK {
            return Err(Error::Format(format!("{}: tensor rank {rank} too large", self.what)));
        }
        let mut shape = Vec::with_capacity(rank);
        let mut numel = 1usize;
        for _ in 0..rank {
            let d = self.count()?;
            numel = numel.checked_mul(d).ok_or_else(|| Error::Format(format!("{}: tensor size overflow", self.what)))?;
            shape.push(d);
        }
        Tensor::new(shape, self.f64s(numel)?)
    }

    /// Requires the whole buffer to have been consumed.
    pub fn finish(self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(Error::Format(format!(
                "{}: {} trailing bytes after declared payload ({} bytes expected, file has {})",
                self.what,
                self.buf.len() - self.pos,
                self.pos,
                self.buf.len()
            )));
        }
        Ok(())
    }
}

pub(crate) fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

/// Writes through a sibling temporary file and renames it into place.
pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".partial");
    let tmp = std::path::PathBuf::from(tmp);
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}
