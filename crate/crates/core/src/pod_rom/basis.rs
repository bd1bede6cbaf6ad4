use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{Gram, Result, RomError};
use crate::linalg::{dot, sym_eigh, DenseSymMatrix};

/// Eigenpairs at or below this fraction of the largest eigenvalue are discarded.
pub const EIGEN_FLOOR: f64 = 1e-14;
/// Columns whose norm shrinks below this fraction during orthogonalization are dropped.
const DEPENDENCE_TOL: f64 = 1e-10;

/// `C_ij = s_iᵀ G s_j / N`.
pub fn correlation_matrix(snapshots: &DMatrix<f64>, gram: &Gram) -> Result<DenseSymMatrix> {
    let n = snapshots.ncols();
    if n == 0 {
        return Err(RomError::EmptyBasis);
    }
    if snapshots.nrows() != gram.dim() {
        return Err(RomError::Dimension(format!(
            "snapshots have {} rows, gram has dimension {}",
            snapshots.nrows(),
            gram.dim()
        )));
    }
    let gs = gram.apply_dense(snapshots);
    let c = snapshots.transpose() * gs / n as f64;
    let c = (&c + c.transpose()) * 0.5;
    Ok(DenseSymMatrix::from_matrix(&c)?)
}

/// Orthonormalizes `v` against `basis` in the gram inner product, with two passes.
/// Returns `None` when `v` is numerically dependent on the basis.
fn orthonormalize(basis: &[(Vec<f64>, Vec<f64>)], mut v: Vec<f64>, gram: &Gram) -> Option<(Vec<f64>, Vec<f64>)> {
    let initial = gram.norm(&v);
    if initial == 0.0 {
        return None;
    }
    for _ in 0..2 {
        for (q, gq) in basis {
            let c = dot(gq, &v);
            v.iter_mut().zip(q).for_each(|(a, b)| *a -= c * b);
        }
    }
    let norm = gram.norm(&v);
    if norm <= DEPENDENCE_TOL * initial {
        return None;
    }
    v.iter_mut().for_each(|a| *a /= norm);
    let gv = gram.apply(&v);
    Some((v, gv))
}

fn to_matrix(rows: usize, cols: &[(Vec<f64>, Vec<f64>)]) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(rows, cols.len());
    for (j, (v, _)) in cols.iter().enumerate() {
        m.set_column(j, &DVector::from_column_slice(v));
    }
    m
}

/// Basis of one variable together with the full correlation spectrum.
#[derive(Clone, Debug)]
pub struct PodBasis {
    /// Gram-orthonormal basis vectors as columns.
    pub vectors: DMatrix<f64>,
    /// All correlation eigenvalues, descending and clipped at zero.
    pub eigenvalues: Vec<f64>,
    pub requested: usize,
    pub warning: Option<String>,
}

impl PodBasis {
    pub fn len(&self) -> usize {
        self.vectors.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.ncols() == 0
    }

    /// `Π_N s = Σ_{n<N} η_n (η_n, s)_G`.
    pub fn project(&self, s: &[f64], n: usize, gram: &Gram) -> Vec<f64> {
        let gs = gram.apply(s);
        let mut out = vec![0.0; s.len()];
        for col in self.vectors.column_iter().take(n) {
            let c = dot(col.as_slice(), &gs);
            out.iter_mut().zip(col.iter()).for_each(|(o, e)| *o += c * e);
        }
        out
    }
}

/// Builds `η_n = S e_n / √(N λ_n)` for the `n` leading eigenpairs above the floor.
pub fn pod_basis(c: &DenseSymMatrix, snapshots: &DMatrix<f64>, gram: &Gram, n: usize) -> Result<PodBasis> {
    if n == 0 {
        return Err(RomError::EmptyBasis);
    }
    let n_snap = snapshots.ncols();
    if c.n() != n_snap {
        return Err(RomError::Dimension(format!(
            "correlation matrix of order {} for {} snapshots",
            c.n(),
            n_snap
        )));
    }
    let eig = sym_eigh(c);
    let eigenvalues: Vec<f64> = eig.values.iter().map(|v| v.max(0.0)).collect();
    let lead = eigenvalues[0];
    let usable = eigenvalues
        .iter()
        .take_while(|&&l| lead > 0.0 && l > EIGEN_FLOOR * lead)
        .count();
    let mut warning = (n > usable).then(|| {
        format!("requested {n} modes but only {usable} eigenvalues lie above the floor")
    });
    let mut cols: Vec<(Vec<f64>, Vec<f64>)> = Vec::new();
    for k in 0..n.min(usable) {
        let e = eig.vectors.column(k);
        let eta = (snapshots * e) / (n_snap as f64 * eigenvalues[k]).sqrt();
        if let Some(q) = orthonormalize(&cols, eta.as_slice().to_vec(), gram) {
            cols.push(q);
        }
    }
    if cols.len() < n.min(usable) && warning.is_none() {
        warning = Some(format!(
            "{} of {} modes were numerically dependent and dropped",
            n.min(usable) - cols.len(),
            n.min(usable)
        ));
    }
    if cols.is_empty() {
        return Err(RomError::EmptyBasis);
    }
    Ok(PodBasis {
        vectors: to_matrix(snapshots.nrows(), &cols),
        eigenvalues,
        requested: n,
        warning,
    })
}

/// State and adjoint modes interleaved by rank and orthonormalized in the state gram.
#[derive(Clone, Debug)]
pub struct AggregatedBasis {
    pub vectors: DMatrix<f64>,
    /// POD rank (0-based) of the mode each column came from.
    pub origin_rank: Vec<usize>,
}

impl AggregatedBasis {
    pub fn len(&self) -> usize {
        self.vectors.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.ncols() == 0
    }

    /// Number of leading columns spanned by the first `n` modes of each variable.
    pub fn columns_for(&self, n: usize) -> usize {
        self.origin_rank.iter().take_while(|&&r| r < n).count()
    }
}

pub fn aggregated_basis(state: &PodBasis, adjoint: &PodBasis, gram: &Gram) -> Result<AggregatedBasis> {
    if state.vectors.nrows() != adjoint.vectors.nrows() {
        return Err(RomError::Dimension("state and adjoint bases differ in length".into()));
    }
    let mut cols: Vec<(Vec<f64>, Vec<f64>)> = Vec::new();
    let mut origin_rank = Vec::new();
    for k in 0..state.len().max(adjoint.len()) {
        for b in [state, adjoint] {
            if k < b.len() {
                if let Some(q) = orthonormalize(&cols, b.vectors.column(k).as_slice().to_vec(), gram) {
                    cols.push(q);
                    origin_rank.push(k);
                }
            }
        }
    }
    if cols.is_empty() {
        return Err(RomError::EmptyBasis);
    }
    Ok(AggregatedBasis {
        vectors: to_matrix(state.vectors.nrows(), &cols),
        origin_rank,
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Spectrum {
    pub eigenvalues: Vec<f64>,
    /// `tails[n] = Σ_{k≥n} λ_k` (0-based), so `tails[N]` is the error after `N` modes.
    pub tails: Vec<f64>,
}

impl Spectrum {
    fn new(eigenvalues: &[f64]) -> Self {
        let mut tails = vec![0.0; eigenvalues.len() + 1];
        for k in (0..eigenvalues.len()).rev() {
            tails[k] = tails[k + 1] + eigenvalues[k];
        }
        Self {
            eigenvalues: eigenvalues.to_vec(),
            tails,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TruncationReport {
    pub state: Spectrum,
    pub control: Spectrum,
    pub adjoint: Spectrum,
}

pub fn truncation_report(state: &PodBasis, control: &PodBasis, adjoint: &PodBasis) -> TruncationReport {
    TruncationReport {
        state: Spectrum::new(&state.eigenvalues),
        control: Spectrum::new(&control.eigenvalues),
        adjoint: Spectrum::new(&adjoint.eigenvalues),
    }
}
