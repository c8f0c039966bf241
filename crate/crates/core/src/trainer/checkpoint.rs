//! Binary archive of named arrays.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "WGAN" | version: u32 | entry count: u64 | entries... | crc32 of everything before: u32
//! entry  = name length: u64 | name bytes | kind: u8 | payload
//! kind 0 = rows: u64 | cols: u64 | rows*cols f64
//! kind 1 = length: u64 | bytes
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{CheckpointError, Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"WGAN";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub enum Entry {
    Array(Tensor),
    Bytes(Vec<u8>),
}

/// Ordered collection of named entries.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Archive {
    entries: Vec<(String, Entry)>,
}

impl Archive {
    pub fn new() -> Self {
        Archive::default()
    }

    pub fn push_array(&mut self, name: impl Into<String>, t: &Tensor) {
        self.entries.push((name.into(), Entry::Array(t.clone())));
    }

    pub fn push_bytes(&mut self, name: impl Into<String>, bytes: Vec<u8>) {
        self.entries.push((name.into(), Entry::Bytes(bytes)));
    }

    pub fn entries(&self) -> &[(String, Entry)] {
        &self.entries
    }

    fn find(&self, name: &str) -> Result<&Entry> {
        self.entries
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, e)| e)
            .ok_or_else(|| CheckpointError::Missing(name.to_string()).into())
    }

    pub fn array(&self, name: &str) -> Result<&Tensor> {
        match self.find(name)? {
            Entry::Array(t) => Ok(t),
            Entry::Bytes(_) => Err(malformed(name, "expected an array")),
        }
    }

    pub fn bytes(&self, name: &str) -> Result<&[u8]> {
        match self.find(name)? {
            Entry::Bytes(b) => Ok(b),
            Entry::Array(_) => Err(malformed(name, "expected bytes")),
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u64).to_le_bytes());
        for (name, entry) in &self.entries {
            out.extend_from_slice(&(name.len() as u64).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            match entry {
                Entry::Array(t) => {
                    out.push(0);
                    out.extend_from_slice(&(t.rows() as u64).to_le_bytes());
                    out.extend_from_slice(&(t.cols() as u64).to_le_bytes());
                    for v in t.data() {
                        out.extend_from_slice(&v.to_le_bytes());
                    }
                }
                Entry::Bytes(b) => {
                    out.push(1);
                    out.extend_from_slice(&(b.len() as u64).to_le_bytes());
                    out.extend_from_slice(b);
                }
            }
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 4 || &bytes[..4] != MAGIC {
            return Err(CheckpointError::BadMagic.into());
        }
        let mut r = Reader { buf: bytes, pos: 4 };
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(CheckpointError::Version {
                found: version,
                expected: FORMAT_VERSION,
            }
            .into());
        }
        if bytes.len() < 4 + 4 + 8 + 4 {
            return Err(CheckpointError::Truncated.into());
        }
        let body = &bytes[..bytes.len() - 4];
        let stored = u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().expect("4 bytes"));
        let count = r.u64()?;
        // A truncated file usually fails the checksum too; report the
        // structural problem first when the entries run past the end.
        let mut entries = Vec::new();
        let mut r = Reader {
            buf: body,
            pos: r.pos,
        };
        let parsed = (|| -> Result<()> {
            for _ in 0..count {
                let len = r.len()?;
                let name = String::from_utf8(r.take(len)?.to_vec())
                    .map_err(|_| malformed("?", "entry name is not UTF-8"))?;
                let entry = match r.take(1)?[0] {
                    0 => {
                        let rows = r.len()?;
                        let cols = r.len()?;
                        let n = rows.checked_mul(cols).ok_or(CheckpointError::Truncated)?;
                        let raw = r.take(n.checked_mul(8).ok_or(CheckpointError::Truncated)?)?;
                        let data = raw
                            .chunks_exact(8)
                            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                            .collect();
                        Entry::Array(Tensor::from_vec(rows, cols, data)?)
                    }
                    1 => {
                        let len = r.len()?;
                        Entry::Bytes(r.take(len)?.to_vec())
                    }
                    k => return Err(malformed(&name, &format!("unknown entry kind {k}"))),
                };
                entries.push((name, entry));
            }
            Ok(())
        })();
        if crc32fast::hash(body) != stored {
            return Err(match parsed {
                Err(Error::Checkpoint(CheckpointError::Truncated)) => CheckpointError::Truncated,
                _ => CheckpointError::Checksum,
            }
            .into());
        }
        parsed?;
        if r.pos != body.len() {
            return Err(malformed(
                "<trailer>",
                "unexpected bytes after the last entry",
            ));
        }
        Ok(Archive { entries })
    }

    /// Writes through a temporary sibling and renames it into place.
    pub fn write(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        let bytes = self.encode();
        let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(&bytes).map_err(|e| Error::io(&tmp, e))?;
        f.sync_all().map_err(|e| Error::io(&tmp, e))?;
        drop(f);
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Archive::decode(&bytes)
    }
}

fn malformed(name: &str, detail: &str) -> Error {
    CheckpointError::Malformed {
        name: name.to_string(),
        detail: detail.to_string(),
    }
    .into()
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or(CheckpointError::Truncated)?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }

    fn len(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| CheckpointError::Truncated.into())
    }
}
