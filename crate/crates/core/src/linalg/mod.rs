//! Sparse and dense kernels shared by every other module.
//!
//! Sparse operators are stored as [`CsrMatrix`]; nonsymmetric sparse systems are
//! factorized with a fill-reducing, partially pivoted LU ([`sparse_lu_solve`]).
//! Small dense symmetric problems (POD correlation matrices) go through
//! [`sym_eigh`].

mod container;
mod csr;
mod dense;
mod lu;

pub use container::{
    read_matrix, read_matrix_from, write_matrix, write_matrix_to, CONTAINER_MAGIC,
};
pub use csr::{CsrMatrix, Triplet};
pub use dense::{dense_solve, sym_eigh, DenseSymMatrix, SymEigen};
pub use lu::{sparse_lu_solve, SparseLu};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum LinalgError {
    #[error("triplet ({row}, {col}, {value}) out of range for a {rows}x{cols} matrix")]
    IndexOutOfRange {
        row: usize,
        col: usize,
        value: f64,
        rows: usize,
        cols: usize,
    },
    #[error("non-finite value {value} at ({row}, {col})")]
    NonFinite { row: usize, col: usize, value: f64 },
    #[error("shape mismatch: expected {expected:?}, found {found:?}")]
    ShapeMismatch {
        expected: (usize, usize),
        found: (usize, usize),
    },
    #[error("matrix is structurally singular (no pivot at step {pivot})")]
    StructurallySingular { pivot: usize },
    #[error("matrix is numerically singular (pivot breakdown near step {pivot})")]
    NumericallySingular { pivot: usize },
    #[error("solve did not reach the residual tolerance: relative residual {residual:e}")]
    Inaccurate { residual: f64 },
    #[error("matrix is not symmetric: |C[{row},{col}] - C[{col},{row}]| = {gap:e}")]
    NotSymmetric { row: usize, col: usize, gap: f64 },
    #[error("empty matrix")]
    Empty,
    #[error("bad container: {0}")]
    Container(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("factorization failed: {0}")]
    Backend(String),
}

pub type Result<T> = std::result::Result<T, LinalgError>;

pub(crate) fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
