//! Flat little-endian `f64` arrays with a shape header and a content hash.
//!
//! Layout:
//!
//! ```text
//! magic "FLPS" | version u16 | dtype u8 (1 = f64) | endian u8 (0 = little)
//! ndim u32 | dims u64 * ndim | payload_len u64 | sha256(payload) [32]
//! payload
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"FLPS";
const VERSION: u16 = 1;
const DTYPE_F64: u8 = 1;
const LITTLE_ENDIAN: u8 = 0;

#[derive(Debug, Clone, PartialEq)]
pub struct FlatArray {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl FlatArray {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::Validation(format!(
                "shape {shape:?} needs {expected} values, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn encode(&self) -> Vec<u8> {
        let payload = payload_bytes(&self.data);
        let digest = Sha256::digest(&payload);
        let mut out = Vec::with_capacity(64 + payload.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.push(DTYPE_F64);
        out.push(LITTLE_ENDIAN);
        out.extend_from_slice(&(self.shape.len() as u32).to_le_bytes());
        for &d in &self.shape {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
        out.extend_from_slice(&digest);
        out.extend_from_slice(&payload);
        out
    }

    /// Parses and hash-checks an encoded array.
    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Data("bad magic".into()));
        }
        let version = u16::from_le_bytes(r.take(2)?.try_into().unwrap());
        if version != VERSION {
            return Err(Error::Data(format!("unsupported version {version}")));
        }
        let header = r.take(2)?;
        if header != [DTYPE_F64, LITTLE_ENDIAN] {
            return Err(Error::Data(format!("unsupported dtype/endianness {header:?}")));
        }
        let ndim = u32::from_le_bytes(r.take(4)?.try_into().unwrap()) as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(r.u64()? as usize);
        }
        let len = r.u64()? as usize;
        let digest: [u8; 32] = r.take(32)?.try_into().unwrap();
        let payload = r.take(len)?;
        if r.pos != bytes.len() {
            return Err(Error::Data("trailing bytes after payload".into()));
        }
        if Sha256::digest(payload).as_slice() != digest {
            return Err(Error::Data("content hash mismatch".into()));
        }
        if !len.is_multiple_of(8) {
            return Err(Error::Data(format!("payload length {len} is not a multiple of 8")));
        }
        let data = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Self::new(shape, data)
    }

    pub fn content_hash(&self) -> String {
        hash_values(&self.data)
    }
}

fn payload_bytes(values: &[f64]) -> Vec<u8> {
    let mut payload = Vec::with_capacity(values.len() * 8);
    for v in values {
        payload.extend_from_slice(&v.to_le_bytes());
    }
    payload
}

/// Hex sha256 over the little-endian bytes of `values`.
pub fn hash_values(values: &[f64]) -> String {
    hex::encode(Sha256::digest(payload_bytes(values)))
}

pub fn hash_bytes(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Data("truncated array file".into()))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Writes through a temp file in the destination directory and renames it
/// into place, so readers never observe a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or_else(|| Path::new("."));
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

pub fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn encode_decode_roundtrip(values in proptest::collection::vec(-1e9f64..1e9, 0..64)) {
            let arr = FlatArray::new(vec![values.len()], values).unwrap();
            prop_assert_eq!(FlatArray::decode(&arr.encode()).unwrap(), arr);
        }
    }

    #[test]
    fn flipped_payload_byte_fails_hash() {
        let arr = FlatArray::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let mut bytes = arr.encode();
        let last = bytes.len() - 1;
        bytes[last] ^= 0x01;
        assert!(matches!(FlatArray::decode(&bytes), Err(Error::Data(_))));
    }

    #[test]
    fn truncated_file_rejected() {
        let arr = FlatArray::new(vec![3], vec![1.0, 2.0, 3.0]).unwrap();
        let bytes = arr.encode();
        assert!(FlatArray::decode(&bytes[..bytes.len() - 3]).is_err());
    }
}
