//! Little-endian binary container shared by the model artifacts.
//!
//! Every artifact starts with a 4-byte magic and a `u32` format version.
//! Readers slurp the file and decode from memory so that short files surface
//! as [`Error::TruncatedPayload`] instead of a bare I/O error.

use std::io::{Cursor, Read};
use std::path::{Path, PathBuf};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::error::{Error, Result};

pub(crate) const FORMAT_VERSION: u32 = 1;

pub(crate) struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    pub fn new(magic: &[u8; 4]) -> Self {
        let mut buf = Vec::with_capacity(1024);
        buf.extend_from_slice(magic);
        buf.write_u32::<LittleEndian>(FORMAT_VERSION).unwrap();
        Writer { buf }
    }

    pub fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    pub fn u32(&mut self, v: u32) {
        self.buf.write_u32::<LittleEndian>(v).unwrap();
    }

    pub fn f64(&mut self, v: f64) {
        self.buf.write_f64::<LittleEndian>(v).unwrap();
    }

    pub fn f64s(&mut self, vs: &[f64]) {
        self.buf.reserve(vs.len() * 8);
        for &v in vs {
            self.f64(v);
        }
    }

    pub fn str(&mut self, s: &str) {
        let len = u16::try_from(s.len()).expect("string longer than u16::MAX");
        self.buf.write_u16::<LittleEndian>(len).unwrap();
        self.buf.extend_from_slice(s.as_bytes());
    }

    pub fn finish(self, path: &Path) -> Result<()> {
        std::fs::write(path, &self.buf).map_err(|e| Error::io(path, e))
    }
}

pub(crate) struct Reader {
    path: PathBuf,
    cur: Cursor<Vec<u8>>,
}

impl Reader {
    pub fn open(path: &Path, magic: &'static [u8; 4]) -> Result<Self> {
        let data = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let mut r = Reader {
            path: path.to_path_buf(),
            cur: Cursor::new(data),
        };
        let mut found = [0u8; 4];
        r.cur
            .read_exact(&mut found)
            .map_err(|_| r.truncated(4))?;
        if &found != magic {
            return Err(Error::BadMagic {
                path: r.path,
                expected: std::str::from_utf8(magic).unwrap_or("?"),
            });
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::UnsupportedVersion {
                path: r.path,
                found: version,
            });
        }
        Ok(r)
    }

    fn truncated(&self, want: u64) -> Error {
        let len = self.cur.get_ref().len() as u64;
        Error::TruncatedPayload {
            path: self.path.clone(),
            expected: self.cur.position() + want,
            found: len,
        }
    }

    pub fn u8(&mut self) -> Result<u8> {
        self.cur.read_u8().map_err(|_| self.truncated(1))
    }

    pub fn u32(&mut self) -> Result<u32> {
        self.cur
            .read_u32::<LittleEndian>()
            .map_err(|_| self.truncated(4))
    }

    pub fn usize(&mut self) -> Result<usize> {
        Ok(self.u32()? as usize)
    }

    pub fn f64(&mut self) -> Result<f64> {
        self.cur
            .read_f64::<LittleEndian>()
            .map_err(|_| self.truncated(8))
    }

    pub fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let remaining = self.remaining();
        if (n as u64).saturating_mul(8) > remaining {
            return Err(self.truncated(n as u64 * 8));
        }
        let mut out = vec![0.0; n];
        self.cur
            .read_f64_into::<LittleEndian>(&mut out)
            .map_err(|_| self.truncated(n as u64 * 8))?;
        Ok(out)
    }

    pub fn str(&mut self) -> Result<String> {
        let len = self
            .cur
            .read_u16::<LittleEndian>()
            .map_err(|_| self.truncated(2))? as usize;
        let mut bytes = vec![0u8; len];
        self.cur
            .read_exact(&mut bytes)
            .map_err(|_| self.truncated(len as u64))?;
        String::from_utf8(bytes).map_err(|_| self.bad("string is not UTF-8"))
    }

    pub fn bad(&self, reason: impl Into<String>) -> Error {
        Error::BadHeader {
            path: self.path.clone(),
            reason: reason.into(),
        }
    }

    fn remaining(&self) -> u64 {
        self.cur.get_ref().len() as u64 - self.cur.position()
    }

    /// Rejects trailing garbage after the last field.
    pub fn finish(self) -> Result<()> {
        match self.remaining() {
            0 => Ok(()),
            extra => Err(Error::TrailingData {
                path: self.path,
                extra,
            }),
        }
    }
}
