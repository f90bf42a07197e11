//! Flat binary parameter snapshots.
//!
//! Layout, all integers little-endian `u32`:
//!
//! ```text
//! magic "DHANPARM" | version | count
//! count × ( name_len | name utf-8 | ndim | dims... | f32 values... )
//! ```

use std::io::{Read, Write};
use std::path::Path;

use super::{numel, ParamStore, Result, Tensor, TensorError};
use crate::fsutil::write_atomic;

const MAGIC: &[u8; 8] = b"DHANPARM";
const VERSION: u32 = 1;

fn io_err(e: std::io::Error) -> TensorError {
    TensorError::Snapshot(e.to_string())
}

pub fn write_snapshot<W: Write>(mut w: W, params: &ParamStore<f32>) -> Result<()> {
    let mut put = |bytes: &[u8]| w.write_all(bytes).map_err(io_err);
    put(MAGIC)?;
    put(&VERSION.to_le_bytes())?;
    put(&(params.len() as u32).to_le_bytes())?;
    for (name, t) in params.iter() {
        put(&(name.len() as u32).to_le_bytes())?;
        put(name.as_bytes())?;
        put(&(t.shape().len() as u32).to_le_bytes())?;
        for &d in t.shape() {
            put(&(d as u32).to_le_bytes())?;
        }
        for &v in t.data() {
            put(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_snapshot<R: Read>(mut r: R) -> Result<ParamStore<f32>> {
    let u32_at = |r: &mut R| -> Result<u32> {
        let mut b = [0u8; 4];
        r.read_exact(&mut b).map_err(io_err)?;
        Ok(u32::from_le_bytes(b))
    };
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(io_err)?;
    if &magic != MAGIC {
        return Err(TensorError::Snapshot("bad magic".into()));
    }
    let version = u32_at(&mut r)?;
    if version != VERSION {
        return Err(TensorError::Snapshot(format!("unsupported version {version}")));
    }
    let count = u32_at(&mut r)?;
    let mut store = ParamStore::new();
    for _ in 0..count {
        let len = u32_at(&mut r)? as usize;
        let mut name = vec![0u8; len];
        r.read_exact(&mut name).map_err(io_err)?;
        let name = String::from_utf8(name).map_err(|e| TensorError::Snapshot(e.to_string()))?;
        let ndim = u32_at(&mut r)? as usize;
        let shape = (0..ndim)
            .map(|_| u32_at(&mut r).map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let mut raw = vec![0u8; numel(&shape) * 4];
        r.read_exact(&mut raw).map_err(io_err)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        store.insert(name, Tensor::new(shape, data)?);
    }
    Ok(store)
}

pub fn save_snapshot(path: &Path, params: &ParamStore<f32>) -> Result<()> {
    let mut buf = Vec::new();
    write_snapshot(&mut buf, params)?;
    write_atomic(path, &buf).map_err(io_err)
}

pub fn load_snapshot(path: &Path) -> Result<ParamStore<f32>> {
    let bytes = std::fs::read(path).map_err(io_err)?;
    read_snapshot(bytes.as_slice())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn round_trips_exactly(values in proptest::collection::vec(-1e6f32..1e6, 1..40), rows in 1usize..4) {
            let n = values.len() / rows * rows;
            prop_assume!(n > 0);
            let mut p = ParamStore::new();
            p.insert("emb.item", Tensor::new([rows, n / rows], values[..n].to_vec()).unwrap());
            p.insert("b", Tensor::scalar(values[0]));
            let mut buf = Vec::new();
            write_snapshot(&mut buf, &p).unwrap();
            prop_assert_eq!(read_snapshot(buf.as_slice()).unwrap(), p);
        }
    }

    #[test]
    fn rejects_truncated_and_foreign_files() {
        let mut p = ParamStore::new();
        p.insert("w", Tensor::new([2], vec![1.0f32, 2.0]).unwrap());
        let mut buf = Vec::new();
        write_snapshot(&mut buf, &p).unwrap();
        assert!(read_snapshot(&buf[..buf.len() - 1]).is_err());
        assert!(read_snapshot(&b"NOTASNAP0000"[..]).is_err());
    }
}
