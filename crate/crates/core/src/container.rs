//! Versioned binary container of named `f64` arrays, used for encoder
//! weights and training checkpoints.
//!
//! Layout (little-endian):
//!
//! ```text
//! magic      8 bytes  "VFMDETC\0"
//! version    u32
//! kind       u32 length + UTF-8
//! metadata   u64 length + JSON
//! count      u64
//! per array: u32 name length, name, u8 trainable, u32 rank, u64 dims…, f64 values…
//! checksum   32-byte SHA-256 of every preceding byte
//! ```

use std::path::Path;

use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::tensor::ParamStore;

pub const MAGIC: &[u8; 8] = b"VFMDETC\0";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct ArrayRecord {
    pub name: String,
    pub trainable: bool,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Container {
    pub kind: String,
    pub metadata: Value,
    pub arrays: Vec<ArrayRecord>,
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Format {
                path: self.path.to_path_buf(),
                message: format!("truncated at byte {}", self.pos),
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn len(&mut self, wide: bool) -> Result<usize> {
        let n = if wide { self.u64()? } else { self.u32()? as u64 };
        usize::try_from(n).map_err(|_| self.bad(format!("length {n} too large")))
    }

    fn string(&mut self, wide: bool) -> Result<String> {
        let n = self.len(wide)?;
        let bytes = self.take(n)?;
        String::from_utf8(bytes.to_vec()).map_err(|_| self.bad("non UTF-8 string".into()))
    }

    fn bad(&self, message: String) -> Error {
        Error::Format {
            path: self.path.to_path_buf(),
            message,
        }
    }
}

impl Container {
    pub fn new(kind: &str, metadata: Value) -> Self {
        Container {
            kind: kind.to_string(),
            metadata,
            arrays: Vec::new(),
        }
    }

    pub fn push(&mut self, name: &str, trainable: bool, shape: &[usize], data: Vec<f64>) {
        self.arrays.push(ArrayRecord {
            name: name.to_string(),
            trainable,
            shape: shape.to_vec(),
            data,
        });
    }

    /// Appends every parameter of `store` accepted by `pick`, in store order.
    pub fn push_params(&mut self, store: &ParamStore, pick: impl Fn(&str) -> bool) {
        for p in store.iter().filter(|p| pick(&p.name)) {
            self.push(&p.name, p.trainable, p.value.shape(), p.value.to_vec());
        }
    }

    pub fn get(&self, name: &str) -> Option<&ArrayRecord> {
        self.arrays.iter().find(|a| a.name == name)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.kind.len() as u32).to_le_bytes());
        out.extend_from_slice(self.kind.as_bytes());
        let meta = serde_json::to_vec(&self.metadata).expect("metadata serializes");
        out.extend_from_slice(&(meta.len() as u64).to_le_bytes());
        out.extend_from_slice(&meta);
        out.extend_from_slice(&(self.arrays.len() as u64).to_le_bytes());
        for a in &self.arrays {
            out.extend_from_slice(&(a.name.len() as u32).to_le_bytes());
            out.extend_from_slice(a.name.as_bytes());
            out.push(u8::from(a.trainable));
            out.extend_from_slice(&(a.shape.len() as u32).to_le_bytes());
            for d in &a.shape {
                out.extend_from_slice(&(*d as u64).to_le_bytes());
            }
            for v in &a.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        out
    }

    /// `path` is used only in error messages.
    pub fn from_bytes(buf: &[u8], path: &Path) -> Result<Self> {
        let head = MAGIC.len() + 4;
        if buf.len() < head || &buf[..MAGIC.len()] != MAGIC {
            return Err(Error::Format {
                path: path.to_path_buf(),
                message: "not a vfmdet container (bad magic)".into(),
            });
        }
        let version = u32::from_le_bytes(buf[MAGIC.len()..head].try_into().unwrap());
        if version != VERSION {
            return Err(Error::Version {
                path: path.to_path_buf(),
                found: version,
                expected: VERSION,
            });
        }
        if buf.len() < head + 32 {
            return Err(Error::Integrity {
                path: path.to_path_buf(),
                message: "file truncated before checksum".into(),
            });
        }
        let (body, digest) = buf.split_at(buf.len() - 32);
        if Sha256::digest(body).as_slice() != digest {
            return Err(Error::Integrity {
                path: path.to_path_buf(),
                message: "checksum mismatch (truncated or corrupted)".into(),
            });
        }
        let mut r = Reader { buf: body, pos: head, path };
        let kind = r.string(false)?;
        let meta_len = r.len(true)?;
        let metadata = serde_json::from_slice(r.take(meta_len)?)?;
        let count = r.len(true)?;
        let mut arrays = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let name = r.string(false)?;
            let trainable = r.u8()? != 0;
            let rank = r.u32()? as usize;
            let shape = (0..rank).map(|_| r.len(true)).collect::<Result<Vec<_>>>()?;
            let n: usize = shape.iter().product();
            let raw = r.take(n.checked_mul(8).ok_or_else(|| r.bad(format!("array `{name}` too large")))?)?;
            let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
            arrays.push(ArrayRecord {
                name,
                trainable,
                shape,
                data,
            });
        }
        if r.pos != body.len() {
            return Err(r.bad(format!("{} trailing bytes", body.len() - r.pos)));
        }
        Ok(Container { kind, metadata, arrays })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let buf = std::fs::read(path)?;
        Self::from_bytes(&buf, path)
    }

    /// Like [`Container::read`] but also checks the `kind` tag.
    pub fn read_kind(path: &Path, kind: &str) -> Result<Self> {
        let c = Self::read(path)?;
        if c.kind != kind {
            return Err(Error::Format {
                path: path.to_path_buf(),
                message: format!("expected a `{kind}` container, found `{}`", c.kind),
            });
        }
        Ok(c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn sample() -> Container {
        let mut c = Container::new("test", json!({"step": 3, "name": "x"}));
        c.push("a.weight", true, &[2, 2], vec![1.0, -0.0, f64::MIN_POSITIVE, 1e300]);
        c.push("b", false, &[1], vec![0.1 + 0.2]);
        c
    }

    #[test]
    fn round_trip_bitwise() {
        let c = sample();
        let back = Container::from_bytes(&c.to_bytes(), Path::new("mem")).unwrap();
        assert_eq!(back.kind, "test");
        assert_eq!(back.metadata, c.metadata);
        for (a, b) in c.arrays.iter().zip(&back.arrays) {
            assert_eq!(a.name, b.name);
            assert_eq!(a.shape, b.shape);
            assert_eq!(a.trainable, b.trainable);
            let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(&a.data), bits(&b.data));
        }
    }

    #[test]
    fn flipped_byte_is_an_integrity_error() {
        let mut bytes = sample().to_bytes();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0x40;
        assert!(matches!(Container::from_bytes(&bytes, Path::new("m")), Err(Error::Integrity { .. })));
        let cut = &bytes[..bytes.len() - 10];
        assert!(matches!(Container::from_bytes(cut, Path::new("m")), Err(Error::Integrity { .. })));
    }

    #[test]
    fn version_and_magic_checked() {
        let mut bytes = sample().to_bytes();
        bytes[8] = 9;
        assert!(matches!(
            Container::from_bytes(&bytes, Path::new("m")),
            Err(Error::Version { found: 9, expected: 1, .. })
        ));
        assert!(matches!(Container::from_bytes(b"garbage!!!!!", Path::new("m")), Err(Error::Format { .. })));
    }

    #[test]
    fn kind_checked_on_read() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.bin");
        sample().write(&p).unwrap();
        assert!(Container::read_kind(&p, "test").is_ok());
        assert!(Container::read_kind(&p, "checkpoint").is_err());
    }
}
