use nalgebra::{DMatrix, DVector, SymmetricEigen};

use super::{LinalgError, Result};

const SYMMETRY_TOLERANCE: f64 = 1e-12;

/// Dense symmetric matrix in full row-major storage.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseSymMatrix {
    n: usize,
    entries: Vec<f64>,
}

impl DenseSymMatrix {
    /// Validates symmetry to within `1e-12` relative to the largest entry.
    pub fn new(n: usize, entries: Vec<f64>) -> Result<Self> {
        if n == 0 {
            return Err(LinalgError::Empty);
        }
        if entries.len() != n * n {
            return Err(LinalgError::ShapeMismatch {
                expected: (n, n),
                found: (entries.len() / n, n),
            });
        }
        let scale = entries
            .iter()
            .fold(0.0f64, |m, v| m.max(v.abs()))
            .max(f64::MIN_POSITIVE);
        for i in 0..n {
            for j in i + 1..n {
                let gap = (entries[i * n + j] - entries[j * n + i]).abs();
                if gap > SYMMETRY_TOLERANCE * scale {
                    return Err(LinalgError::NotSymmetric {
                        row: i,
                        col: j,
                        gap,
                    });
                }
            }
        }
        Ok(Self { n, entries })
    }

    pub fn from_matrix(m: &DMatrix<f64>) -> Result<Self> {
        let n = m.nrows();
        if m.ncols() != n {
            return Err(LinalgError::ShapeMismatch {
                expected: (n, n),
                found: m.shape(),
            });
        }
        Self::new(n, (0..n * n).map(|k| m[(k / n, k % n)]).collect())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.n + j]
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    pub fn to_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.n, self.n, &self.entries)
    }
}

/// Eigenpairs sorted by descending eigenvalue; eigenvectors are unit-norm columns.
#[derive(Clone, Debug)]
pub struct SymEigen {
    pub values: Vec<f64>,
    pub vectors: DMatrix<f64>,
}

pub fn sym_eigh(c: &DenseSymMatrix) -> SymEigen {
    let m = c.to_matrix();
    // symmetrize exactly so the solver sees a symmetric input
    let m = (&m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(m);
    let n = c.n();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let mut vectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        let col = eig.eigenvectors.column(src);
        let norm = col.norm();
        vectors.set_column(dst, &(col / norm));
    }
    SymEigen { values, vectors }
}

/// Dense LU solve with partial pivoting.
pub fn dense_solve(a: DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    let n = a.nrows();
    if n == 0 {
        return Err(LinalgError::Empty);
    }
    let lu = a.lu();
    let u = lu.u();
    let umax = u.diagonal().amax();
    if let Some(pivot) = (0..n).find(|&k| !(u[(k, k)].abs() > 1e-300_f64.max(umax * 1e-18))) {
        return Err(LinalgError::NumericallySingular { pivot });
    }
    lu.solve(b)
        .ok_or(LinalgError::NumericallySingular { pivot: 0 })
}
