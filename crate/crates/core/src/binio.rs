//! Shared envelope for the binary artifact formats (`LXEM`, `LXCN`, `LXTK`).
//!
//! Layout: 4 magic bytes, a little-endian `u32` version, then a payload made of
//! length-prefixed blocks and raw little-endian arrays. Whole files are read
//! into memory and parsed from a cursor so that every short read surfaces as
//! [`Error::Corrupt`].

use std::path::Path;

use byteorder::{ByteOrder, LittleEndian, WriteBytesExt};
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

pub(crate) struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    pub fn new(magic: &[u8; 4], version: u32) -> Self {
        let mut buf = Vec::with_capacity(1 << 16);
        buf.extend_from_slice(magic);
        buf.write_u32::<LittleEndian>(version).unwrap();
        Self { buf }
    }

    pub fn u32(&mut self, v: u32) {
        self.buf.write_u32::<LittleEndian>(v).unwrap();
    }

    pub fn u64(&mut self, v: u64) {
        self.buf.write_u64::<LittleEndian>(v).unwrap();
    }

    pub fn str(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.buf.extend_from_slice(s.as_bytes());
    }

    pub fn json<T: Serialize>(&mut self, value: &T) -> Result<()> {
        let bytes = serde_json::to_vec(value)
            .map_err(|e| Error::InvalidConfig(format!("cannot encode config block: {e}")))?;
        self.u32(bytes.len() as u32);
        self.buf.extend_from_slice(&bytes);
        Ok(())
    }

    pub fn f32s(&mut self, values: &[f32]) {
        let start = self.buf.len();
        self.buf.resize(start + values.len() * 4, 0);
        LittleEndian::write_f32_into(values, &mut self.buf[start..]);
    }


    pub fn into_bytes(self) -> Vec<u8> {
        self.buf
    }

    pub fn save(self, path: &Path) -> Result<()> {
        std::fs::write(path, self.buf).map_err(|e| Error::io(path, e))
    }
}

pub(crate) struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    /// Checks magic and version and positions the cursor at the payload.
    pub fn open(bytes: &'a [u8], magic: &[u8; 4], version: u32) -> Result<Self> {
        if bytes.len() < 4 {
            return Err(Error::Corrupt("file shorter than magic header".into()));
        }
        if &bytes[..4] != magic {
            return Err(Error::BadMagic {
                expected: String::from_utf8_lossy(magic).into_owned(),
                found: String::from_utf8_lossy(&bytes[..4]).into_owned(),
            });
        }
        let mut r = Self { bytes, pos: 4 };
        let found = r.u32()?;
        if found != version {
            return Err(Error::Version {
                found,
                expected: version,
            });
        }
        Ok(r)
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&end| end <= self.bytes.len())
            .ok_or_else(|| {
                Error::Corrupt(format!(
                    "truncated: wanted {n} bytes at offset {}, file has {}",
                    self.pos,
                    self.bytes.len()
                ))
            })?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(LittleEndian::read_u32(self.take(4)?))
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(LittleEndian::read_u64(self.take(8)?))
    }

    /// Reads a `u64` count and checks it against a sanity bound.
    pub fn count(&mut self, what: &str, max: u64) -> Result<usize> {
        let n = self.u64()?;
        if n > max {
            return Err(Error::Corrupt(format!("{what} count {n} exceeds {max}")));
        }
        Ok(n as usize)
    }

    pub fn str(&mut self) -> Result<String> {
        let len = self.u32()? as usize;
        let raw = self.take(len)?;
        String::from_utf8(raw.to_vec()).map_err(|_| Error::Corrupt("invalid UTF-8 string".into()))
    }

    pub fn json<T: DeserializeOwned>(&mut self) -> Result<T> {
        let len = self.u32()? as usize;
        let raw = self.take(len)?;
        serde_json::from_slice(raw).map_err(|e| Error::Corrupt(format!("config block: {e}")))
    }

    pub fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let bytes = n
            .checked_mul(4)
            .ok_or_else(|| Error::Corrupt("array too large".into()))?;
        let raw = self.take(bytes)?;
        let mut out = vec![0f32; n];
        LittleEndian::read_f32_into(raw, &mut out);
        Ok(out)
    }


    pub fn finish(self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(Error::Corrupt(format!(
                "{} trailing bytes after payload",
                self.bytes.len() - self.pos
            )));
        }
        Ok(())
    }
}

pub(crate) fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn envelope_checks() {
        let mut w = Writer::new(b"TEST", 3);
        w.str("héllo");
        w.f32s(&[1.5, -2.0]);
        let bytes = w.into_bytes();

        let mut r = Reader::open(&bytes, b"TEST", 3).unwrap();
        assert_eq!(r.str().unwrap(), "héllo");
        assert_eq!(r.f32s(2).unwrap(), vec![1.5, -2.0]);
        r.finish().unwrap();

        assert!(matches!(
            Reader::open(&bytes, b"NOPE", 3),
            Err(Error::BadMagic { .. })
        ));
        assert!(matches!(
            Reader::open(&bytes, b"TEST", 4),
            Err(Error::Version { found: 3, .. })
        ));
        let mut r = Reader::open(&bytes[..bytes.len() - 1], b"TEST", 3).unwrap();
        r.str().unwrap();
        assert!(matches!(r.f32s(2), Err(Error::Corrupt(_))));
    }
}
