use nalgebra::DMatrix;

use super::{LinalgError, Result};

/// A single `(row, col, value)` entry used to build sparse matrices.
pub type Triplet = (usize, usize, f64);

/// Compressed sparse row matrix with sorted, duplicate-free column indices.
#[derive(Clone, Debug, PartialEq)]
pub struct CsrMatrix {
    rows: usize,
    cols: usize,
    row_offsets: Vec<usize>,
    col_indices: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Builds a canonical CSR matrix, summing duplicate entries.
    pub fn from_triplets(rows: usize, cols: usize, triplets: &[Triplet]) -> Result<Self> {
        for &(i, j, v) in triplets {
            if i >= rows || j >= cols {
                return Err(LinalgError::IndexOutOfRange {
                    row: i,
                    col: j,
                    value: v,
                    rows,
                    cols,
                });
            }
            if !v.is_finite() {
                return Err(LinalgError::NonFinite {
                    row: i,
                    col: j,
                    value: v,
                });
            }
        }

        // counting sort by row, then sort each row by column
        let mut counts = vec![0usize; rows + 1];
        for &(i, _, _) in triplets {
            counts[i + 1] += 1;
        }
        for i in 0..rows {
            counts[i + 1] += counts[i];
        }
        let mut next = counts.clone();
        let mut cols_tmp = vec![0usize; triplets.len()];
        let mut vals_tmp = vec![0.0; triplets.len()];
        for &(i, j, v) in triplets {
            let slot = next[i];
            cols_tmp[slot] = j;
            vals_tmp[slot] = v;
            next[i] += 1;
        }

        let mut row_offsets = Vec::with_capacity(rows + 1);
        let mut col_indices = Vec::with_capacity(triplets.len());
        let mut values = Vec::with_capacity(triplets.len());
        row_offsets.push(0);
        let mut scratch: Vec<(usize, f64)> = Vec::new();
        for i in 0..rows {
            scratch.clear();
            scratch.extend((counts[i]..counts[i + 1]).map(|k| (cols_tmp[k], vals_tmp[k])));
            scratch.sort_unstable_by_key(|&(j, _)| j);
            let mut k = 0;
            while k < scratch.len() {
                let j = scratch[k].0;
                let mut acc = 0.0;
                while k < scratch.len() && scratch[k].0 == j {
                    acc += scratch[k].1;
                    k += 1;
                }
                col_indices.push(j);
                values.push(acc);
            }
            row_offsets.push(col_indices.len());
        }

        Ok(Self {
            rows,
            cols,
            row_offsets,
            col_indices,
            values,
        })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            row_offsets: vec![0; rows + 1],
            col_indices: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn identity(n: usize) -> Self {
        Self {
            rows: n,
            cols: n,
            row_offsets: (0..=n).collect(),
            col_indices: (0..n).collect(),
            values: vec![1.0; n],
        }
    }

    /// Builds a matrix from raw CSR arrays, validating the canonical-form invariants.
    pub fn from_raw(
        rows: usize,
        cols: usize,
        row_offsets: Vec<usize>,
        col_indices: Vec<usize>,
        values: Vec<f64>,
    ) -> Result<Self> {
        let bad = |msg: &str| LinalgError::Container(format!("invalid CSR arrays: {msg}"));
        if row_offsets.len() != rows + 1 || row_offsets[0] != 0 {
            return Err(bad("row offsets length"));
        }
        if col_indices.len() != values.len() || *row_offsets.last().unwrap() != values.len() {
            return Err(bad("entry count"));
        }
        for i in 0..rows {
            if row_offsets[i] > row_offsets[i + 1] {
                return Err(bad("row offsets not monotone"));
            }
            let row = &col_indices[row_offsets[i]..row_offsets[i + 1]];
            if row.windows(2).any(|w| w[0] >= w[1]) || row.iter().any(|&j| j >= cols) {
                return Err(bad("column indices"));
            }
        }
        if let Some(k) = values.iter().position(|v| !v.is_finite()) {
            let row = row_offsets.partition_point(|&o| o <= k) - 1;
            return Err(LinalgError::NonFinite {
                row,
                col: col_indices[k],
                value: values[k],
            });
        }
        Ok(Self {
            rows,
            cols,
            row_offsets,
            col_indices,
            values,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row_offsets(&self) -> &[usize] {
        &self.row_offsets
    }

    pub fn col_indices(&self) -> &[usize] {
        &self.col_indices
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// Column indices and values of row `i`.
    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let span = self.row_offsets[i]..self.row_offsets[i + 1];
        (&self.col_indices[span.clone()], &self.values[span])
    }

    /// Entry `(i, j)`, zero when not stored.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (cols, vals) = self.row(i);
        match cols.binary_search(&j) {
            Ok(k) => vals[k],
            Err(_) => 0.0,
        }
    }

    pub fn triplets(&self) -> impl Iterator<Item = Triplet> + '_ {
        (0..self.rows).flat_map(move |i| {
            let (cols, vals) = self.row(i);
            cols.iter().zip(vals).map(move |(&j, &v)| (i, j, v))
        })
    }

    pub fn transpose(&self) -> Self {
        let mut counts = vec![0usize; self.cols + 1];
        for &j in &self.col_indices {
            counts[j + 1] += 1;
        }
        for j in 0..self.cols {
            counts[j + 1] += counts[j];
        }
        let mut next = counts.clone();
        let mut col_indices = vec![0usize; self.nnz()];
        let mut values = vec![0.0; self.nnz()];
        // rows are visited in increasing order, so each transposed row stays sorted
        for i in 0..self.rows {
            let (cols, vals) = self.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                let slot = next[j];
                col_indices[slot] = i;
                values[slot] = v;
                next[j] += 1;
            }
        }
        Self {
            rows: self.cols,
            cols: self.rows,
            row_offsets: counts,
            col_indices,
            values,
        }
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(
            x.len(),
            self.cols,
            "vector length does not match column count"
        );
        (0..self.rows)
            .map(|i| {
                let (cols, vals) = self.row(i);
                cols.iter().zip(vals).map(|(&j, &v)| v * x[j]).sum()
            })
            .collect()
    }

    /// `y += alpha * A x`
    pub fn mul_vec_acc(&self, alpha: f64, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.cols);
        assert_eq!(y.len(), self.rows);
        for (i, yi) in y.iter_mut().enumerate() {
            let (cols, vals) = self.row(i);
            let s: f64 = cols.iter().zip(vals).map(|(&j, &v)| v * x[j]).sum();
            *yi += alpha * s;
        }
    }

    /// Sparse times dense: `A * X`.
    pub fn mul_dense(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        assert_eq!(x.nrows(), self.cols);
        let mut out = DMatrix::zeros(self.rows, x.ncols());
        for c in 0..x.ncols() {
            let col = x.column(c);
            let src = col.as_slice();
            let mut dst = out.column_mut(c);
            for i in 0..self.rows {
                let (cols, vals) = self.row(i);
                dst[i] = cols.iter().zip(vals).map(|(&j, &v)| v * src[j]).sum();
            }
        }
        out
    }

    pub fn scaled(&self, s: f64) -> Self {
        let mut out = self.clone();
        out.values.iter_mut().for_each(|v| *v *= s);
        out
    }

    /// `sum_k c_k A_k` over matrices of identical shape.
    pub fn linear_combination(terms: &[(f64, &CsrMatrix)]) -> Result<Self> {
        let Some(&(_, first)) = terms.first() else {
            return Err(LinalgError::Empty);
        };
        let shape = first.shape();
        let mut triplets = Vec::with_capacity(terms.iter().map(|(_, m)| m.nnz()).sum());
        for &(c, m) in terms {
            if m.shape() != shape {
                return Err(LinalgError::ShapeMismatch {
                    expected: shape,
                    found: m.shape(),
                });
            }
            triplets.extend(m.triplets().map(|(i, j, v)| (i, j, c * v)));
        }
        Self::from_triplets(shape.0, shape.1, &triplets)
    }

    pub fn add(&self, other: &CsrMatrix) -> Result<Self> {
        Self::linear_combination(&[(1.0, self), (1.0, other)])
    }

    /// Restriction to the given row and column index lists (in the given order).
    pub fn submatrix(&self, rows: &[usize], cols: &[usize]) -> Self {
        let mut col_map = vec![usize::MAX; self.cols];
        for (new, &old) in cols.iter().enumerate() {
            col_map[old] = new;
        }
        let mut triplets = Vec::new();
        for (new_i, &old_i) in rows.iter().enumerate() {
            let (cs, vs) = self.row(old_i);
            for (&j, &v) in cs.iter().zip(vs) {
                let nj = col_map[j];
                if nj != usize::MAX {
                    triplets.push((new_i, nj, v));
                }
            }
        }
        Self::from_triplets(rows.len(), cols.len(), &triplets).expect("indices in range")
    }

    /// Kronecker product `A ⊗ B`.
    pub fn kron(a: &CsrMatrix, b: &CsrMatrix) -> Self {
        let mut triplets = Vec::with_capacity(a.nnz() * b.nnz());
        for (ia, ja, va) in a.triplets() {
            for (ib, jb, vb) in b.triplets() {
                triplets.push((ia * b.rows + ib, ja * b.cols + jb, va * vb));
            }
        }
        Self::from_triplets(a.rows * b.rows, a.cols * b.cols, &triplets).expect("indices in range")
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut d = DMatrix::zeros(self.rows, self.cols);
        for (i, j, v) in self.triplets() {
            d[(i, j)] += v;
        }
        d
    }

    pub fn frobenius_norm(&self) -> f64 {
        super::norm2(&self.values)
    }

    /// Frobenius norm of `self - other`, computed entrywise over the union pattern.
    pub fn frobenius_distance(&self, other: &CsrMatrix) -> Result<f64> {
        Ok(Self::linear_combination(&[(1.0, self), (-1.0, other)])?.frobenius_norm())
    }
}
