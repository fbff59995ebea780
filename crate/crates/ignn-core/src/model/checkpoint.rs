//! Binary tensor container shared by model and solver checkpoints.
//!
//! Layout, all little-endian:
//! - magic `IGNN` (4 bytes), version `u32`;
//! - per tensor: name length `u32`, UTF-8 name, rank `u64`,
//!   dims (`u64` each), then the f64 payload in row-major order.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{IgnnError, Result};
use crate::tensor::matrix::DenseMatrix;

const MAGIC: &[u8; 4] = b"IGNN";
const VERSION: u32 = 1;

/// Write named matrices (rank 2 tensors) in declaration order.
pub fn save_tensors(path: &Path, tensors: &[(&str, &DenseMatrix)]) -> Result<()> {
    let mut file = fs::File::create(path)?;
    file.write_all(MAGIC)?;
    file.write_all(&VERSION.to_le_bytes())?;
    for (name, tensor) in tensors {
        let bytes = name.as_bytes();
        file.write_all(&(bytes.len() as u32).to_le_bytes())?;
        file.write_all(bytes)?;
        file.write_all(&2u64.to_le_bytes())?;
        file.write_all(&(tensor.rows() as u64).to_le_bytes())?;
        file.write_all(&(tensor.cols() as u64).to_le_bytes())?;
        for v in tensor.data() {
            file.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

/// Read every named tensor in file order.
pub fn load_tensors(path: &Path) -> Result<Vec<(String, DenseMatrix)>> {
    let mut file = fs::File::open(path)?;
    let mut magic = [0u8; 4];
    file.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(IgnnError::Checkpoint(format!(
            "{}: bad magic {:?}",
            path.display(),
            magic
        )));
    }
    let mut version = [0u8; 4];
    file.read_exact(&mut version)?;
    let version = u32::from_le_bytes(version);
    if version != VERSION {
        return Err(IgnnError::Checkpoint(format!(
            "{}: unsupported version {version}",
            path.display()
        )));
    }
    let mut rest = Vec::new();
    file.read_to_end(&mut rest)?;
    let mut reader = ByteReader {
        bytes: &rest,
        cursor: 0,
        path,
    };

    let mut tensors = Vec::new();
    while !reader.done() {
        let name_len = u32::from_le_bytes(reader.take(4)?.try_into().unwrap()) as usize;
        let name = String::from_utf8(reader.take(name_len)?.to_vec())
            .map_err(|_| IgnnError::Checkpoint("tensor name is not UTF-8".into()))?;
        let rank = u64::from_le_bytes(reader.take(8)?.try_into().unwrap());
        if rank != 2 {
            return Err(IgnnError::Checkpoint(format!(
                "tensor '{name}' has rank {rank}, expected 2"
            )));
        }
        let rows = u64::from_le_bytes(reader.take(8)?.try_into().unwrap()) as usize;
        let cols = u64::from_le_bytes(reader.take(8)?.try_into().unwrap()) as usize;
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows * cols {
            data.push(f64::from_le_bytes(reader.take(8)?.try_into().unwrap()));
        }
        tensors.push((name, DenseMatrix::from_vec(rows, cols, data)?));
    }
    Ok(tensors)
}

struct ByteReader<'a> {
    bytes: &'a [u8],
    cursor: usize,
    path: &'a Path,
}

impl<'a> ByteReader<'a> {
    fn done(&self) -> bool {
        self.cursor >= self.bytes.len()
    }

    fn take(&mut self, len: usize) -> Result<&'a [u8]> {
        if self.cursor + len > self.bytes.len() {
            return Err(IgnnError::Checkpoint(format!(
                "{}: truncated at byte {}",
                self.path.display(),
                self.cursor
            )));
        }
        let slice = &self.bytes[self.cursor..self.cursor + len];
        self.cursor += len;
        Ok(slice)
    }
}

/// Convenience lookup over loaded tensors.
pub fn find_tensor<'a>(
    tensors: &'a [(String, DenseMatrix)],
    name: &str,
    path: &Path,
) -> Result<&'a DenseMatrix> {
    tensors
        .iter()
        .find(|(n, _)| n == name)
        .map(|(_, t)| t)
        .ok_or_else(|| {
            IgnnError::Checkpoint(format!("{}: missing tensor '{name}'", path.display()))
        })
}

/// Scalar tensor (1 x 1) helper.
pub fn scalar(value: f64) -> DenseMatrix {
    DenseMatrix::from_vec(1, 1, vec![value]).expect("1x1")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_preserves_bits() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.ckpt");
        let a = DenseMatrix::from_rows(&[&[1.5, -2.25], &[0.1, 3.0]]);
        let b = scalar(0.95);
        save_tensors(&path, &[("a", &a), ("kappa", &b)]).unwrap();
        let loaded = load_tensors(&path).unwrap();
        assert_eq!(loaded.len(), 2);
        assert_eq!(find_tensor(&loaded, "a", &path).unwrap(), &a);
        assert_eq!(find_tensor(&loaded, "kappa", &path).unwrap(), &b);
        assert!(find_tensor(&loaded, "missing", &path).is_err());
    }

    #[test]
    fn bad_magic_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.ckpt");
        fs::write(&path, b"NOPE\x01\x00\x00\x00").unwrap();
        assert!(matches!(
            load_tensors(&path),
            Err(IgnnError::Checkpoint(_))
        ));
    }
}
