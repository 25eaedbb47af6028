//! Flat binary parameter files.
//!
//! ```text
//! "PPKT"  count:u32
//! repeated count times:
//!   name_len:u32  name:utf8  rank:u32  dims:u32*rank  data:f64*prod(dims)
//! ```
//!
//! All integers and floats are little-endian.

use std::fs;
use std::path::Path;

use crate::tensor::Tensor;
use crate::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"PPKT";

const MAX_RANK: usize = 8;

pub fn encode_checkpoint(tensors: &[(String, Tensor)]) -> Vec<u8> {
    let mut out = CHECKPOINT_MAGIC.to_vec();
    out.extend((tensors.len() as u32).to_le_bytes());
    for (name, t) in tensors {
        out.extend((name.len() as u32).to_le_bytes());
        out.extend(name.as_bytes());
        out.extend((t.rank() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend((d as u32).to_le_bytes());
        }
        for v in t.data() {
            out.extend(v.to_le_bytes());
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
        match self.pos.checked_add(n).filter(|&end| end <= self.bytes.len()) {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::Format { offset: self.pos, msg: format!("truncated {what}") }),
        }
    }

    fn u32(&mut self, what: &str) -> Result<usize> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }
}

/// Parses a checkpoint. Sizes are validated against the remaining input before any
/// allocation.
pub fn decode_checkpoint(bytes: &[u8]) -> Result<Vec<(String, Tensor)>> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic")? != CHECKPOINT_MAGIC {
        return Err(Error::Format { offset: 0, msg: "bad magic".into() });
    }
    let count = r.u32("tensor count")?;
    let mut out = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let at = r.pos;
        let name_len = r.u32("name length")?;
        let name = std::str::from_utf8(r.take(name_len, "name")?)
            .map_err(|_| Error::Format { offset: at + 4, msg: "name is not UTF-8".into() })?
            .to_string();
        let rank_at = r.pos;
        let rank = r.u32("rank")?;
        if rank > MAX_RANK {
            return Err(Error::Format { offset: rank_at, msg: format!("rank {rank} exceeds {MAX_RANK}") });
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32("dimension")?);
        }
        let remaining = bytes.len() - r.pos;
        let n = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .filter(|&n| n.checked_mul(8).is_some_and(|b| b <= remaining))
            .ok_or_else(|| Error::Format { offset: r.pos, msg: format!("tensor {name:?} of shape {shape:?} exceeds input") })?;
        let data_at = r.pos;
        let data: Vec<f64> = r
            .take(n * 8, "data")?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Format { offset: data_at, msg: format!("tensor {name:?} holds non-finite values") });
        }
        out.push((name, Tensor::new(&shape, data)?));
    }
    if r.pos != bytes.len() {
        return Err(Error::Format { offset: r.pos, msg: "trailing bytes".into() });
    }
    Ok(out)
}

pub fn save_checkpoint(path: &Path, tensors: &[(String, Tensor)]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, encode_checkpoint(tensors)).map_err(|e| Error::Io { path: tmp.clone(), source: e })?;
    fs::rename(&tmp, path).map_err(|e| Error::Io { path: path.to_path_buf(), source: e })
}

pub fn load_checkpoint(path: &Path) -> Result<Vec<(String, Tensor)>> {
    let bytes = fs::read(path).map_err(|e| Error::Io { path: path.to_path_buf(), source: e })?;
    decode_checkpoint(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn layout_is_exact() {
        let t = vec![("w".to_string(), Tensor::new(&[1, 2], vec![1.0, -2.5]).unwrap())];
        let b = encode_checkpoint(&t);
        let mut expect = b"PPKT".to_vec();
        expect.extend([1, 0, 0, 0, 1, 0, 0, 0, b'w', 2, 0, 0, 0, 1, 0, 0, 0, 2, 0, 0, 0]);
        expect.extend(1.0f64.to_le_bytes());
        expect.extend((-2.5f64).to_le_bytes());
        assert_eq!(b, expect);
        assert_eq!(decode_checkpoint(&b).unwrap(), t);
    }

    #[test]
    fn malformed_inputs() {
        assert!(matches!(decode_checkpoint(b"PPK"), Err(Error::Format { offset: 0, .. })));
        assert!(matches!(decode_checkpoint(b"XXXX\0\0\0\0"), Err(Error::Format { offset: 0, .. })));
        let mut huge = b"PPKT\x01\0\0\0\x01\0\0\0a\x02\0\0\0".to_vec();
        huge.extend([0xff; 8]);
        assert!(decode_checkpoint(&huge).is_err());
        let mut b = encode_checkpoint(&[("x".into(), Tensor::scalar(1.0))]);
        b.push(0);
        assert!(matches!(decode_checkpoint(&b), Err(Error::Format { .. })));
    }

    #[test]
    fn file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.ppkt");
        let t = vec![("a".to_string(), Tensor::scalar(3.0)), ("b".to_string(), Tensor::zeros(&[0, 4]))];
        save_checkpoint(&p, &t).unwrap();
        assert_eq!(load_checkpoint(&p).unwrap(), t);
        assert!(matches!(load_checkpoint(&dir.path().join("none")), Err(Error::Io { .. })));
    }

    proptest! {
        #[test]
        fn roundtrip(entries in prop::collection::vec(("[a-z.]{0,8}", prop::collection::vec(0usize..4, 0..3)), 0..4), seed in 0u64..1000) {
            let tensors: Vec<(String, Tensor)> = entries
                .into_iter()
                .map(|(n, shape)| (n, Tensor::from_fn(&shape, |i| (i as f64 + seed as f64).sin())))
                .collect();
            let bytes = encode_checkpoint(&tensors);
            prop_assert_eq!(decode_checkpoint(&bytes).unwrap(), tensors);
        }

        #[test]
        fn arbitrary_bytes_never_panic(bytes in prop::collection::vec(any::<u8>(), 0..64)) {
            let _ = decode_checkpoint(&bytes);
        }
    }
}
