//! `SWGW` weight bundles: a flat, CRC-checked list of named f32 tensors.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "SWGW" | version u16 | count u32
//! count × ( name_len u16 | name UTF-8 | dtype u8 | ndim u8 | dims u32 × ndim | payload f32 × Πdims )
//! crc32 u32 over every preceding byte
//! ```

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use crate::tensor::{Real, Tensor};
use crate::zoo::{ArchSpec, Network, Provenance};
use crate::{BundleError, Result};

pub const MAGIC: &[u8; 4] = b"SWGW";
pub const VERSION: u16 = 1;
pub const DTYPE_F32: u8 = 0;
const HEADER_LEN: usize = 10;
const CRC_LEN: usize = 4;

/// Serialize named tensors in the given order. Values are stored as f32.
pub fn encode<'a, T: Real>(entries: impl IntoIterator<Item = (&'a str, &'a Tensor<T>)>) -> Vec<u8> {
    let entries: Vec<_> = entries.into_iter().collect();
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for (name, t) in entries {
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(DTYPE_F32);
        out.push(t.shape().len() as u8);
        for &d in t.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&(v.f64() as f32).to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], BundleError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(BundleError::Truncated(self.pos)),
        }
    }

    fn u8(&mut self) -> std::result::Result<u8, BundleError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> std::result::Result<u16, BundleError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> std::result::Result<u32, BundleError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn malformed(&self, at: usize, reason: impl Into<String>) -> BundleError {
        BundleError::Malformed {
            offset: at,
            reason: reason.into(),
        }
    }
}

/// Parse and verify a bundle, returning its entries in file order.
pub fn decode(bytes: &[u8]) -> std::result::Result<Vec<(String, Tensor<f32>)>, BundleError> {
    if bytes.len() < 4 {
        return Err(BundleError::Truncated(bytes.len()));
    }
    if &bytes[..4] != MAGIC {
        return Err(BundleError::BadMagic);
    }
    if bytes.len() < HEADER_LEN + CRC_LEN {
        return Err(BundleError::Truncated(bytes.len()));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != VERSION {
        return Err(BundleError::UnsupportedVersion(version));
    }
    let (body, tail) = bytes.split_at(bytes.len() - CRC_LEN);
    let stored = u32::from_le_bytes(tail.try_into().unwrap());
    let computed = crc32fast::hash(body);
    if stored != computed {
        return Err(BundleError::CrcMismatch { stored, computed });
    }

    let mut r = Reader { bytes: body, pos: 6 };
    let count = r.u32()? as usize;
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for _ in 0..count {
        let at = r.pos;
        let name_len = r.u16()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| r.malformed(at, "name is not UTF-8"))?
            .to_string();
        if !seen.insert(name.clone()) {
            return Err(BundleError::Duplicate(name));
        }
        let at = r.pos;
        let dtype = r.u8()?;
        if dtype != DTYPE_F32 {
            return Err(r.malformed(at, format!("unknown dtype {dtype}")));
        }
        let ndim = r.u8()? as usize;
        if ndim == 0 {
            return Err(r.malformed(at + 1, "zero-dimensional entry"));
        }
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            let d = r.u32()? as usize;
            if d == 0 {
                return Err(r.malformed(r.pos - 4, "zero-length dimension"));
            }
            shape.push(d);
        }
        let bytes_needed = shape
            .iter()
            .try_fold(4usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| r.malformed(at, "payload size overflows"))?;
        let payload = r.take(bytes_needed)?;
        let data: Vec<f32> = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let t = Tensor::new(shape, data).map_err(|e| r.malformed(at, e.to_string()))?;
        out.push((name, t));
    }
    if r.pos != body.len() {
        return Err(r.malformed(r.pos, "trailing bytes before checksum"));
    }
    Ok(out)
}

/// Bundle bytes for a network's parameters, in name order.
pub fn save_bundle<T: Real>(net: &Network<T>) -> Vec<u8> {
    encode(net.parameters().iter().map(|(n, t)| (n.as_str(), t)))
}

pub fn write_bundle<T: Real>(net: &Network<T>, path: &Path) -> Result<()> {
    std::fs::write(path, save_bundle(net))?;
    Ok(())
}

/// Build a network for `spec` from bundle bytes; provenance is `Imported`.
pub fn load_bundle<T: Real>(bytes: &[u8], spec: ArchSpec) -> Result<Network<T>> {
    let params: BTreeMap<String, Tensor<T>> = decode(bytes)?
        .into_iter()
        .map(|(n, t)| (n, t.cast()))
        .collect();
    Network::from_parameters(spec, params, 0, Provenance::Imported)
}

pub fn read_bundle<T: Real>(path: &Path, spec: ArchSpec) -> Result<Network<T>> {
    load_bundle(&std::fs::read(path)?, spec)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn identity() -> Tensor<f32> {
        Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap()
    }

    #[test]
    fn single_entry_layout() {
        let t = identity();
        let bytes = encode([("w", &t)]);
        // header 10, name_len 2 + "w" 1, dtype 1, ndim 1, dims 8, payload 16, crc 4
        assert_eq!(bytes.len(), 43);
        assert_eq!(&bytes[..4], b"SWGW");
        assert_eq!(&bytes[4..6], &[1, 0]);
        assert_eq!(&bytes[6..10], &[1, 0, 0, 0]);
        assert_eq!(&bytes[10..13], &[1, 0, b'w']);
        assert_eq!(&bytes[13..15], &[0, 2]);
        assert_eq!(&bytes[15..23], &[2, 0, 0, 0, 2, 0, 0, 0]);
        assert_eq!(&bytes[23..27], &1.0f32.to_le_bytes());
        let back = decode(&bytes).unwrap();
        assert_eq!(back, vec![("w".to_string(), t)]);
    }

    #[test]
    fn distinct_error_kinds() {
        let mut bytes = encode([("w", &identity())]);
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert_eq!(decode(&bad), Err(BundleError::BadMagic));

        let mut bad = bytes.clone();
        bad[4] = 2;
        assert_eq!(decode(&bad), Err(BundleError::UnsupportedVersion(2)));

        let mut bad = bytes.clone();
        bad[30] ^= 0x40;
        assert!(matches!(decode(&bad), Err(BundleError::CrcMismatch { .. })));

        bytes.truncate(20);
        assert!(matches!(decode(&bytes), Err(BundleError::CrcMismatch { .. })));
        assert_eq!(decode(b"SWG"), Err(BundleError::Truncated(3)));
    }

    #[test]
    fn duplicate_names_rejected() {
        let t = identity();
        let bytes = encode([("w", &t), ("w", &t)]);
        assert_eq!(decode(&bytes), Err(BundleError::Duplicate("w".into())));
    }

    #[test]
    fn empty_bundle() {
        let bytes = encode::<f32>([]);
        assert_eq!(bytes.len(), 14);
        assert!(decode(&bytes).unwrap().is_empty());
    }
}
