//! Binary weight files.
//!
//! Layout, all integers little-endian: the magic `MGCN`, a `u32` version
//! (1), a `u32` tensor count, then per tensor a `u16` name length, the UTF-8
//! name, a `u8` rank, `rank` `u32` dimensions and the `f64` payload in
//! row-major order.

use std::fs;
use std::path::Path;

use crate::autodiff::{ParamStore, ParamValue};
use crate::error::{Error, Result};
use crate::learned::SolverWeights;
use crate::tensor::{ConvKernel, Real};

pub const MAGIC: [u8; 4] = *b"MGCN";
pub const VERSION: u32 = 1;

pub fn encode_weights<T: Real>(weights: &SolverWeights<T>) -> Vec<u8> {
    let store = weights.store();
    let mut out = Vec::with_capacity(16 + 8 * store.scalar_count() + 64 * store.len());
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(store.len() as u32).to_le_bytes());
    for (name, value) in store.iter() {
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        let dims = value.dims();
        out.push(dims.len() as u8);
        for d in dims {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in value.as_slice() {
            let v = v.to_f64().unwrap_or(f64::NAN);
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::WeightFormat(format!(
                "truncated file while reading {what} at byte {}",
                self.pos
            ))),
        }
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }
}

/// Parses a weight file and checks it against the solver's parameter
/// registry.
pub fn decode_weights(bytes: &[u8]) -> Result<SolverWeights<f64>> {
    let mut r = Reader { bytes, pos: 0 };
    let magic = r.take(4, "magic")?;
    if magic != MAGIC {
        return Err(Error::WeightFormat(format!(
            "magic mismatch: expected \"MGCN\", found {:?}",
            String::from_utf8_lossy(magic)
        )));
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::WeightFormat(format!("unsupported version {version}")));
    }
    let count = r.u32("tensor count")?;
    let mut store = ParamStore::new();
    for _ in 0..count {
        let len = r.u16("name length")? as usize;
        let name = std::str::from_utf8(r.take(len, "name")?)
            .map_err(|_| Error::WeightFormat("tensor name is not UTF-8".into()))?
            .to_string();
        let rank = r.u8("rank")? as usize;
        let dims = (0..rank)
            .map(|_| r.u32("dims").map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let n = dims
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or_else(|| Error::WeightFormat(format!("tensor '{name}' is too large")))?;
        let payload = r.take(
            n.checked_mul(8)
                .ok_or_else(|| Error::WeightFormat(format!("tensor '{name}' is too large")))?,
            "payload",
        )?;
        let data: Vec<f64> = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let value = match dims.as_slice() {
            [o, i, 3, 3] => ParamValue::Kernel(ConvKernel::from_vec(*o, *i, data)?),
            [_] => ParamValue::Bias(data),
            _ => {
                return Err(Error::WeightFormat(format!(
                    "tensor '{name}' has unsupported dims {dims:?}"
                )))
            }
        };
        store
            .insert(name, value)
            .map_err(|e| Error::WeightFormat(e.to_string()))?;
    }
    if r.pos != bytes.len() {
        return Err(Error::WeightFormat(format!(
            "{} trailing bytes after the last tensor",
            bytes.len() - r.pos
        )));
    }
    SolverWeights::from_store(store)
}

pub fn save_weights<T: Real>(path: &Path, weights: &SolverWeights<T>) -> Result<()> {
    fs::write(path, encode_weights(weights))?;
    Ok(())
}

pub fn load_weights(path: &Path) -> Result<SolverWeights<f64>> {
    let bytes =
        fs::read(path).map_err(|e| Error::WeightFormat(format!("cannot read weight file {}: {e}", path.display())))?;
    decode_weights(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_layout() {
        let w = SolverWeights::<f64>::init(2, 1).unwrap();
        let bytes = encode_weights(&w);
        assert_eq!(&bytes[..4], b"MGCN");
        assert_eq!(&bytes[4..8], &[1, 0, 0, 0]);
        assert_eq!(&bytes[8..12], &[16, 0, 0, 0]);
        // first tensor: "coef_rechannel", rank 4, dims 2 1 3 3
        assert_eq!(&bytes[12..14], &[14, 0]);
        assert_eq!(&bytes[14..28], b"coef_rechannel");
        assert_eq!(bytes[28], 4);
        assert_eq!(&bytes[29..45], &[2, 0, 0, 0, 1, 0, 0, 0, 3, 0, 0, 0, 3, 0, 0, 0]);
        let first = f64::from_le_bytes(bytes[45..53].try_into().unwrap());
        assert_eq!(first, w.store().get(0).as_slice()[0]);
    }

    #[test]
    fn errors() {
        let w = SolverWeights::<f64>::init(2, 1).unwrap();
        let bytes = encode_weights(&w);
        assert!(decode_weights(&bytes[..bytes.len() - 3]).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(decode_weights(&extra).is_err());
        let mut v2 = bytes.clone();
        v2[4] = 2;
        assert!(matches!(decode_weights(&v2), Err(Error::WeightFormat(m)) if m.contains("version")));
        let empty = [b"MGCN".as_slice(), &1u32.to_le_bytes(), &0u32.to_le_bytes()].concat();
        assert!(decode_weights(&empty).is_err());
        assert!(decode_weights(b"MG").is_err());
    }
}
