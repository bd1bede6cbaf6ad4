use faer::linalg::solvers::Solve;
use faer::sparse::linalg::solvers::{Lu, SymbolicLu};
use faer::sparse::linalg::LuError;
use faer::sparse::{SparseColMatRef, SymbolicSparseColMatRef};
use faer::Mat;

use super::{norm2, CsrMatrix, LinalgError, Result};

/// Relative residual target `‖Ax − b‖₂ / max(1, ‖b‖₂)` for sparse solves.
pub const RESIDUAL_TOLERANCE: f64 = 1e-10;

const MAX_REFINEMENT_STEPS: usize = 3;

/// Sparse LU factorization (COLAMD column ordering, partial row pivoting).
pub struct SparseLu {
    matrix: CsrMatrix,
    lu: Lu<usize, f64>,
}

impl SparseLu {
    pub fn factorize(a: &CsrMatrix) -> Result<Self> {
        if a.rows() != a.cols() {
            return Err(LinalgError::ShapeMismatch {
                expected: (a.rows(), a.rows()),
                found: a.shape(),
            });
        }
        if a.rows() == 0 {
            return Err(LinalgError::Empty);
        }
        // CSR arrays of Aᵀ are the CSC arrays of A
        let at = a.transpose();
        let n = a.rows();
        let symbolic =
            SymbolicSparseColMatRef::new_checked(n, n, at.row_offsets(), None, at.col_indices());
        let mat = SparseColMatRef::new(symbolic, at.values());
        let map_err = |e: LuError| match e {
            LuError::SymbolicSingular { index } => {
                LinalgError::StructurallySingular { pivot: index }
            }
            LuError::Generic(g) => LinalgError::Backend(format!("{g:?}")),
        };
        let sym =
            SymbolicLu::try_new(symbolic).map_err(|e| LinalgError::Backend(format!("{e:?}")))?;
        let lu = Lu::try_new_with_symbolic(sym, mat).map_err(map_err)?;
        Ok(Self {
            matrix: a.clone(),
            lu,
        })
    }

    fn raw_solve(&self, b: &[f64]) -> Vec<f64> {
        let mut rhs = Mat::<f64>::from_fn(b.len(), 1, |i, _| b[i]);
        self.lu.solve_in_place(rhs.as_mut());
        (0..b.len()).map(|i| rhs[(i, 0)]).collect()
    }

    /// Solves `A x = b` with a few steps of iterative refinement.
    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        assert_eq!(
            b.len(),
            self.matrix.rows(),
            "right-hand side length mismatch"
        );
        let scale = norm2(b).max(1.0);
        let mut x = self.raw_solve(b);
        if let Some(pivot) = x.iter().position(|v| !v.is_finite()) {
            return Err(LinalgError::NumericallySingular { pivot });
        }
        let mut residual = self.residual(&x, b);
        let mut rel = norm2(&residual) / scale;
        for _ in 0..MAX_REFINEMENT_STEPS {
            if rel <= 0.1 * RESIDUAL_TOLERANCE {
                break;
            }
            let dx = self.raw_solve(&residual);
            let candidate: Vec<f64> = x.iter().zip(&dx).map(|(a, d)| a + d).collect();
            let r = self.residual(&candidate, b);
            let r_rel = norm2(&r) / scale;
            if !(r_rel < rel) {
                break;
            }
            x = candidate;
            residual = r;
            rel = r_rel;
        }
        if rel > RESIDUAL_TOLERANCE {
            return Err(LinalgError::Inaccurate { residual: rel });
        }
        Ok(x)
    }

    fn residual(&self, x: &[f64], b: &[f64]) -> Vec<f64> {
        let mut r = b.to_vec();
        self.matrix.mul_vec_acc(-1.0, x, &mut r);
        r
    }
}

/// Solves the square sparse system `A x = b`.
pub fn sparse_lu_solve(a: &CsrMatrix, b: &[f64]) -> Result<Vec<f64>> {
    SparseLu::factorize(a)?.solve(b)
}
