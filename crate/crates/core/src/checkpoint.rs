//! Binary checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic        8 bytes   "LPCKPT01"
//! desc_len     u32
//! descriptor   desc_len bytes of UTF-8 JSON (architecture + vocabularies)
//! count        u32       number of tensors
//! per tensor:
//!   name_len   u32
//!   name       name_len bytes UTF-8
//!   rank       u32
//!   dims       rank x u64
//!   values     product(dims) x f64, row-major
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::CheckpointError;
use crate::graph::ParamStore;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"LPCKPT01";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub descriptor: String,
    pub tensors: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn from_store(descriptor: String, store: &ParamStore) -> Self {
        Checkpoint {
            descriptor,
            tensors: store
                .iter()
                .map(|(_, p)| (p.name.clone(), p.value.clone()))
                .collect(),
        }
    }

    /// Rebuilds a store in checkpoint order.
    pub fn to_store(&self) -> Result<ParamStore, CheckpointError> {
        let mut store = ParamStore::new();
        for (name, t) in &self.tensors {
            store
                .add(name.clone(), t.clone())
                .map_err(|e| CheckpointError::Corrupt(e.to_string()))?;
        }
        Ok(store)
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<(), CheckpointError> {
        w.write_all(MAGIC)?;
        write_u32(w, self.descriptor.len())?;
        w.write_all(self.descriptor.as_bytes())?;
        write_u32(w, self.tensors.len())?;
        for (name, t) in &self.tensors {
            write_u32(w, name.len())?;
            w.write_all(name.as_bytes())?;
            write_u32(w, t.shape().len())?;
            for &d in t.shape() {
                w.write_all(&(d as u64).to_le_bytes())?;
            }
            for v in t.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self, CheckpointError> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let descriptor = read_string(r)?;
        let count = read_u32(r)?;
        let mut tensors = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let name = read_string(r)?;
            let rank = read_u32(r)?;
            if rank == 0 || rank > 8 {
                return Err(CheckpointError::Corrupt(format!("{name}: rank {rank}")));
            }
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                let mut b = [0u8; 8];
                r.read_exact(&mut b)?;
                shape.push(u64::from_le_bytes(b) as usize);
            }
            let n: usize = shape.iter().product();
            let mut data = Vec::with_capacity(n);
            let mut b = [0u8; 8];
            for _ in 0..n {
                r.read_exact(&mut b)?;
                data.push(f64::from_le_bytes(b));
            }
            let t = Tensor::new(shape, data)
                .map_err(|e| CheckpointError::Corrupt(format!("{name}: {e}")))?;
            tensors.push((name, t));
        }
        Ok(Checkpoint {
            descriptor,
            tensors,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        let mut r = BufReader::new(File::open(path)?);
        Self::read_from(&mut r)
    }
}

fn write_u32<W: Write>(w: &mut W, v: usize) -> Result<(), CheckpointError> {
    let v = u32::try_from(v).map_err(|_| CheckpointError::Corrupt("length overflow".into()))?;
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<usize, CheckpointError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b) as usize)
}

fn read_string<R: Read>(r: &mut R) -> Result<String, CheckpointError> {
    let n = read_u32(r)?;
    let mut buf = vec![0u8; n];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|_| CheckpointError::Corrupt("invalid UTF-8".into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn round_trip(values in prop::collection::vec(-1e6f64..1e6, 1..40), rows in 1usize..4) {
            let n = values.len() - values.len() % rows;
            prop_assume!(n > 0);
            let t = Tensor::new(vec![rows, n / rows], values[..n].to_vec()).unwrap();
            let mut store = ParamStore::new();
            store.add("layer.w", t).unwrap();
            store.add("bias", Tensor::zeros(&[1, 3])).unwrap();
            let ck = Checkpoint::from_store("{\"k\":1}".into(), &store);
            let mut buf = Vec::new();
            ck.write_to(&mut buf).unwrap();
            let back = Checkpoint::read_from(&mut buf.as_slice()).unwrap();
            prop_assert_eq!(&back, &ck);
            prop_assert_eq!(back.to_store().unwrap(), store);
        }
    }

    #[test]
    fn bad_magic_is_rejected() {
        let bytes = b"NOTACKPT\0\0\0\0".to_vec();
        assert!(matches!(
            Checkpoint::read_from(&mut bytes.as_slice()),
            Err(CheckpointError::BadMagic)
        ));
    }

    #[test]
    fn truncated_file_is_an_error() {
        let mut store = ParamStore::new();
        store.add("w", Tensor::zeros(&[2, 2])).unwrap();
        let mut buf = Vec::new();
        Checkpoint::from_store("{}".into(), &store)
            .write_to(&mut buf)
            .unwrap();
        buf.truncate(buf.len() - 3);
        assert!(Checkpoint::read_from(&mut buf.as_slice()).is_err());
    }
}
