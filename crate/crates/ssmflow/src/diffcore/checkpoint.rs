//! Parameter checkpoint archive.
//!
//! A single binary file mapping parameter identifier to shape plus row-major
//! 64-bit float values, with an integer format version. Values are written
//! as raw IEEE-754 bits, so round trips are bit-exact.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::store::ParameterStore;
use super::tensor::Tensor;
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"SSMFCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn save_checkpoint(store: &ParameterStore, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    w.write_all(&(store.len() as u64).to_le_bytes())?;
    for (name, value, learnable) in store.iter() {
        let bytes = name.as_bytes();
        w.write_all(&(bytes.len() as u32).to_le_bytes())?;
        w.write_all(bytes)?;
        w.write_all(&[learnable as u8])?;
        w.write_all(&(value.shape().len() as u32).to_le_bytes())?;
        for &d in value.shape() {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        for &v in value.data() {
            w.write_all(&v.to_bits().to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<ParameterStore> {
    let mut r = BufReader::new(File::open(path)?);
    let parse_err = |detail: String| Error::Parse {
        file: path.display().to_string(),
        detail,
    };

    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(parse_err("bad magic; not a checkpoint file".into()));
    }
    let version = read_u32(&mut r)?;
    if version != CHECKPOINT_VERSION {
        return Err(parse_err(format!(
            "unsupported checkpoint version {version}"
        )));
    }
    let count = read_u64(&mut r)? as usize;
    let mut store = ParameterStore::new();
    for _ in 0..count {
        let name_len = read_u32(&mut r)? as usize;
        let mut name_bytes = vec![0u8; name_len];
        r.read_exact(&mut name_bytes)?;
        let name = String::from_utf8(name_bytes)
            .map_err(|e| parse_err(format!("bad parameter name: {e}")))?;
        let mut flag = [0u8; 1];
        r.read_exact(&mut flag)?;
        let ndim = read_u32(&mut r)? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(read_u64(&mut r)? as usize);
        }
        let n: usize = shape.iter().product();
        let mut data = Vec::with_capacity(n);
        let mut buf = [0u8; 8];
        for _ in 0..n {
            r.read_exact(&mut buf)?;
            data.push(f64::from_bits(u64::from_le_bytes(buf)));
        }
        let tensor = Tensor::new(shape, data)?;
        if flag[0] != 0 {
            store.insert_learnable(&name, tensor)?;
        } else {
            store.insert_stat(&name, tensor)?;
        }
    }
    Ok(store)
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let mut store = ParameterStore::new();
        store
            .insert_learnable(
                "flow/w",
                Tensor::matrix(2, 3, vec![0.1, -2.5, 1e-300, 3.7, 0.0, -0.0]).unwrap(),
            )
            .unwrap();
        store
            .insert_stat("flow/bn/mean", Tensor::vector(vec![0.25, -1.75]))
            .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("test.ckpt");
        save_checkpoint(&store, &path).unwrap();
        let loaded = load_checkpoint(&path).unwrap();
        assert_eq!(loaded.len(), store.len());
        for (name, value, learnable) in store.iter() {
            let lv = loaded.value(name).unwrap();
            assert_eq!(lv.shape(), value.shape());
            for (a, b) in lv.data().iter().zip(value.data()) {
                assert_eq!(a.to_bits(), b.to_bits());
            }
            let idx = loaded.index_of(name).unwrap();
            assert_eq!(loaded.is_learnable_at(idx), learnable);
        }
    }

    #[test]
    fn rejects_garbage() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("garbage.ckpt");
        std::fs::write(&path, b"not a checkpoint").unwrap();
        assert!(load_checkpoint(&path).is_err());
    }
}
