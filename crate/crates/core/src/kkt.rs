//! Parameter-affine 3×3 block saddle-point systems.
//!
//! Block rows are (adjoint equation, gradient equation, state equation) and
//! block columns are (state, control, adjoint). Terms with equal coefficient
//! functions are merged, and the union sparsity pattern is computed once so
//! that evaluation at a parameter is a scatter-add.

use std::collections::BTreeMap;

use crate::assembly::{AffineOperator, AffineVector, Theta};
use crate::linalg::{CsrMatrix, LinalgError, SparseLu, Triplet};

#[derive(Clone, Debug)]
pub struct BlockTerm {
    pub row: usize,
    pub col: usize,
    pub theta: Theta,
    pub matrix: CsrMatrix,
}

#[derive(Clone, Debug)]
pub struct RhsTerm {
    pub row: usize,
    pub theta: Theta,
    pub vector: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct KktBuilder {
    sizes: [usize; 3],
    blocks: BTreeMap<(usize, usize, Theta), CsrMatrix>,
    rhs: BTreeMap<(usize, Theta), Vec<f64>>,
}

impl KktBuilder {
    pub fn new(sizes: [usize; 3]) -> Self {
        Self {
            sizes,
            blocks: BTreeMap::new(),
            rhs: BTreeMap::new(),
        }
    }

    /// Adds `scale · m` with coefficient `theta` to block `(row, col)`.
    pub fn add_matrix(&mut self, row: usize, col: usize, theta: &Theta, scale: f64, m: &CsrMatrix) {
        assert_eq!(
            m.shape(),
            (self.sizes[row], self.sizes[col]),
            "block ({row}, {col}) shape"
        );
        let key = (row, col, theta.clone());
        let merged = match self.blocks.remove(&key) {
            Some(prev) => {
                CsrMatrix::linear_combination(&[(1.0, &prev), (scale, m)]).expect("same shape")
            }
            None => m.scaled(scale),
        };
        self.blocks.insert(key, merged);
    }

    pub fn add_operator(&mut self, row: usize, col: usize, scale: f64, op: &AffineOperator) {
        for t in op.terms() {
            self.add_matrix(row, col, &t.theta, scale, &t.matrix);
        }
    }

    pub fn add_rhs(&mut self, row: usize, scale: f64, v: &AffineVector) {
        assert_eq!(v.len(), self.sizes[row], "rhs block {row} length");
        for (_, theta, vec) in v.terms() {
            let entry = self
                .rhs
                .entry((row, theta.clone()))
                .or_insert_with(|| vec![0.0; self.sizes[row]]);
            entry.iter_mut().zip(vec).for_each(|(e, x)| *e += scale * x);
        }
    }

    pub fn build(self) -> KktAffine {
        let offsets = [0, self.sizes[0], self.sizes[0] + self.sizes[1]];
        let dim = self.sizes.iter().sum();
        let blocks: Vec<BlockTerm> = self
            .blocks
            .into_iter()
            .map(|((row, col, theta), matrix)| BlockTerm {
                row,
                col,
                theta,
                matrix,
            })
            .collect();
        let mut triplets: Vec<Triplet> = Vec::new();
        for b in &blocks {
            triplets.extend(
                b.matrix
                    .triplets()
                    .map(|(i, j, _)| (i + offsets[b.row], j + offsets[b.col], 0.0)),
            );
        }
        let pattern = CsrMatrix::from_triplets(dim, dim, &triplets).expect("in range");
        let scatter = blocks
            .iter()
            .map(|b| {
                b.matrix
                    .triplets()
                    .map(|(i, j, _)| {
                        let gi = i + offsets[b.row];
                        let gj = j + offsets[b.col];
                        let start = pattern.row_offsets()[gi];
                        let row = &pattern.col_indices()[start..pattern.row_offsets()[gi + 1]];
                        start + row.binary_search(&gj).expect("entry in union pattern")
                    })
                    .collect()
            })
            .collect();
        let rhs = self
            .rhs
            .into_iter()
            .map(|((row, theta), vector)| RhsTerm { row, theta, vector })
            .collect();
        KktAffine {
            sizes: self.sizes,
            offsets,
            blocks,
            rhs,
            pattern,
            scatter,
        }
    }
}

#[derive(Clone, Debug)]
pub struct KktAffine {
    sizes: [usize; 3],
    offsets: [usize; 3],
    blocks: Vec<BlockTerm>,
    rhs: Vec<RhsTerm>,
    pattern: CsrMatrix,
    scatter: Vec<Vec<usize>>,
}

impl KktAffine {
    pub fn sizes(&self) -> [usize; 3] {
        self.sizes
    }

    pub fn offsets(&self) -> [usize; 3] {
        self.offsets
    }

    pub fn dim(&self) -> usize {
        self.sizes.iter().sum()
    }

    pub fn blocks(&self) -> &[BlockTerm] {
        &self.blocks
    }

    pub fn rhs_terms(&self) -> &[RhsTerm] {
        &self.rhs
    }

    pub fn nnz(&self) -> usize {
        self.pattern.nnz()
    }

    pub fn matrix(&self, mu: &[f64]) -> CsrMatrix {
        let mut m = self.pattern.clone();
        let values = m.values_mut();
        for (b, map) in self.blocks.iter().zip(&self.scatter) {
            let c = b.theta.eval(mu);
            for (&pos, &v) in map.iter().zip(b.matrix.values()) {
                values[pos] += c * v;
            }
        }
        m
    }

    pub fn rhs(&self, mu: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        for t in &self.rhs {
            let c = t.theta.eval(mu);
            let o = self.offsets[t.row];
            out[o..o + self.sizes[t.row]]
                .iter_mut()
                .zip(&t.vector)
                .for_each(|(a, x)| *a += c * x);
        }
        out
    }

    pub fn system(&self, mu: &[f64]) -> KktSystem {
        KktSystem {
            matrix: self.matrix(mu),
            rhs: self.rhs(mu),
            sizes: self.sizes,
        }
    }
}

/// A KKT system assembled at one parameter value.
#[derive(Clone, Debug)]
pub struct KktSystem {
    pub matrix: CsrMatrix,
    pub rhs: Vec<f64>,
    pub sizes: [usize; 3],
}

impl KktSystem {
    pub fn dim(&self) -> usize {
        self.rhs.len()
    }

    pub fn solve(&self) -> Result<Vec<f64>, LinalgError> {
        SparseLu::factorize(&self.matrix)?.solve(&self.rhs)
    }

    /// Splits a solution vector into (state, control, adjoint).
    pub fn split<'a>(&self, x: &'a [f64]) -> (&'a [f64], &'a [f64], &'a [f64]) {
        let (y, rest) = x.split_at(self.sizes[0]);
        let (u, p) = rest.split_at(self.sizes[1]);
        (y, u, p)
    }

    /// `‖Ax − b‖₂ / max(1, ‖b‖₂)`.
    pub fn relative_residual(&self, x: &[f64]) -> f64 {
        let mut r = self.rhs.clone();
        self.matrix.mul_vec_acc(-1.0, x, &mut r);
        let norm = |v: &[f64]| v.iter().map(|a| a * a).sum::<f64>().sqrt();
        norm(&r) / norm(&self.rhs).max(1.0)
    }
}
