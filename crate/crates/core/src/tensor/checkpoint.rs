//! Binary parameter container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic    8 bytes  b"EALCKPT\0"
//! version  u32
//! count    u32      number of records
//! record*  name_len u32, name (UTF-8), rank u32, dims u64 × rank,
//!          data f64 × product(dims)
//! ```

use super::params::ParamStore;
use super::Tensor;
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"EALCKPT\0";
pub const CHECKPOINT_VERSION: u32 = 1;

const MAX_RANK: usize = 8;

pub fn encode_checkpoint(params: &ParamStore) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + params.scalar_count() * 8);
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for (_, name, t) in params.iter() {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in t.data() {
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
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<ParamStore> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8)? != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let count = r.u32()?;
    let mut store = ParamStore::new();
    for _ in 0..count {
        let name_len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| Error::Checkpoint("record name is not UTF-8".into()))?
            .to_owned();
        let rank = r.u32()? as usize;
        if rank == 0 || rank > MAX_RANK {
            return Err(Error::Checkpoint(format!("unsupported rank {rank}")));
        }
        let mut shape = Vec::with_capacity(rank);
        let mut len: usize = 1;
        for _ in 0..rank {
            let d = usize::try_from(r.u64()?).map_err(|_| Error::Checkpoint("dimension overflow".into()))?;
            len = len
                .checked_mul(d)
                .ok_or_else(|| Error::Checkpoint("element count overflow".into()))?;
            shape.push(d);
        }
        let byte_len = len
            .checked_mul(8)
            .ok_or_else(|| Error::Checkpoint("element count overflow".into()))?;
        let raw = r.take(byte_len)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let tensor = Tensor::new(&shape, data).map_err(|e| Error::Checkpoint(e.to_string()))?;
        store.add(name, tensor).map_err(|e| Error::Checkpoint(e.to_string()))?;
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint("trailing bytes after last record".into()));
    }
    Ok(store)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_truncation_and_bad_magic() {
        let mut store = ParamStore::new();
        store
            .add("w", Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap())
            .unwrap();
        let bytes = encode_checkpoint(&store);
        assert_eq!(decode_checkpoint(&bytes).unwrap(), store);
        for cut in [0, 7, 12, bytes.len() - 1] {
            assert!(decode_checkpoint(&bytes[..cut]).is_err());
        }
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode_checkpoint(&bad).is_err());
        let mut trailing = bytes;
        trailing.push(0);
        assert!(decode_checkpoint(&trailing).is_err());
    }

    #[test]
    fn huge_declared_dims_fail_cleanly() {
        let mut bytes = Vec::new();
        bytes.extend_from_slice(CHECKPOINT_MAGIC);
        bytes.extend_from_slice(&1u32.to_le_bytes());
        bytes.extend_from_slice(&1u32.to_le_bytes());
        bytes.extend_from_slice(&1u32.to_le_bytes());
        bytes.push(b'a');
        bytes.extend_from_slice(&2u32.to_le_bytes());
        bytes.extend_from_slice(&u64::MAX.to_le_bytes());
        bytes.extend_from_slice(&u64::MAX.to_le_bytes());
        assert!(decode_checkpoint(&bytes).is_err());
    }
}
