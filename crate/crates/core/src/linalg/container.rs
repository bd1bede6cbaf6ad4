//! `ROMXMAT1` binary container: 8-byte magic, little-endian `u64` rows and cols,
//! then `rows * cols` little-endian `f64` values in column-major order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::DMatrix;

use super::{LinalgError, Result};

pub const CONTAINER_MAGIC: &[u8; 8] = b"ROMXMAT1";

pub fn write_matrix_to<W: Write>(mut w: W, m: &DMatrix<f64>) -> Result<()> {
    w.write_all(CONTAINER_MAGIC)?;
    w.write_all(&(m.nrows() as u64).to_le_bytes())?;
    w.write_all(&(m.ncols() as u64).to_le_bytes())?;
    // nalgebra storage is already column-major
    for v in m.as_slice() {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_matrix_from<R: Read>(mut r: R) -> Result<DMatrix<f64>> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != CONTAINER_MAGIC {
        return Err(LinalgError::Container(format!("bad magic {magic:?}")));
    }
    let mut word = [0u8; 8];
    r.read_exact(&mut word)?;
    let rows = u64::from_le_bytes(word) as usize;
    r.read_exact(&mut word)?;
    let cols = u64::from_le_bytes(word) as usize;
    let count = rows
        .checked_mul(cols)
        .ok_or_else(|| LinalgError::Container("dimension overflow".into()))?;
    let mut values = Vec::with_capacity(count);
    for _ in 0..count {
        r.read_exact(&mut word)?;
        values.push(f64::from_le_bytes(word));
    }
    let mut rest = Vec::new();
    r.read_to_end(&mut rest)?;
    if !rest.is_empty() {
        return Err(LinalgError::Container(format!(
            "{} trailing bytes",
            rest.len()
        )));
    }
    Ok(DMatrix::from_vec(rows, cols, values))
}

pub fn write_matrix(path: impl AsRef<Path>, m: &DMatrix<f64>) -> Result<()> {
    write_matrix_to(BufWriter::new(File::create(path)?), m)
}

pub fn read_matrix(path: impl AsRef<Path>) -> Result<DMatrix<f64>> {
    read_matrix_from(BufReader::new(File::open(path)?))
}
