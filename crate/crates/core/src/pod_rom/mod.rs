//! Snapshot compression and reduced optimality systems.
//!
//! Snapshots are homogenized solutions on free dofs (full dofs for the control).
//! State and adjoint share one aggregated basis; the control has its own.

mod basis;
mod reduced;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assembly::{OperatorCatalog, ProblemDef, Stabilization};
use crate::kkt::KktAffine;
use crate::linalg::{dot, CsrMatrix, LinalgError};
use crate::mesh::Mesh;
use crate::ocp_spacetime::SpaceTimeOcp;
use crate::ocp_steady::{OcpError, SteadyOcp};

pub use basis::{
    aggregated_basis, correlation_matrix, pod_basis, truncation_report, AggregatedBasis, PodBasis,
    TruncationReport,
};
pub use reduced::{build_offline, OfflineInfo, ReducedModel, ReducedSolution, RomMode};

#[derive(Debug, Error)]
pub enum RomError {
    #[error(transparent)]
    Ocp(#[from] OcpError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error("invalid training request: {0}")]
    Training(String),
    #[error("snapshot {index} at mu = {mu:?} failed: {source}")]
    Snapshot {
        index: usize,
        mu: Vec<f64>,
        #[source]
        source: OcpError,
    },
    #[error("empty reduced basis")]
    EmptyBasis,
    #[error("truncation {requested} exceeds the offline size {available}")]
    Truncation { requested: usize, available: usize },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("reduced solve failed at mu = {mu:?}, N = {n}, mode {mode:?}: {source}")]
    ReducedSolve {
        mu: Vec<f64>,
        n: usize,
        mode: RomMode,
        #[source]
        source: LinalgError,
    },
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad offline data: {0}")]
    Format(String),
}

pub type Result<T> = std::result::Result<T, RomError>;

/// Inner product `weight · Σ_i v_iᵀ G v_i` over `blocks` stacked copies of a spatial gram.
#[derive(Clone, Debug)]
pub struct Gram {
    spatial: CsrMatrix,
    blocks: usize,
    weight: f64,
}

impl Gram {
    pub fn spatial(g: CsrMatrix) -> Self {
        Self {
            spatial: g,
            blocks: 1,
            weight: 1.0,
        }
    }

    pub fn space_time(g: CsrMatrix, blocks: usize, dt: f64) -> Self {
        Self {
            spatial: g,
            blocks,
            weight: dt,
        }
    }

    pub fn dim(&self) -> usize {
        self.spatial.rows() * self.blocks
    }

    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.dim(), "gram operand length");
        let mut out = Vec::with_capacity(v.len());
        for block in v.chunks(self.spatial.rows()) {
            out.extend(self.spatial.mul_vec(block).into_iter().map(|x| self.weight * x));
        }
        out
    }

    pub fn apply_dense(&self, s: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(s.nrows(), s.ncols());
        for (j, col) in s.column_iter().enumerate() {
            let g = self.apply(col.as_slice());
            out.set_column(j, &nalgebra::DVector::from_vec(g));
        }
        out
    }

    pub fn inner(&self, a: &[f64], b: &[f64]) -> f64 {
        dot(a, &self.apply(b))
    }

    pub fn norm(&self, v: &[f64]) -> f64 {
        self.inner(v, v).max(0.0).sqrt()
    }
}

/// Inner products for state/adjoint (H¹) and control (L²).
#[derive(Clone, Debug)]
pub struct Grams {
    pub state: Gram,
    pub control: Gram,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct HfSolution {
    pub y: Vec<f64>,
    pub u: Vec<f64>,
    pub p: Vec<f64>,
    pub mu: Vec<f64>,
    pub wall_time: f64,
    pub residual: f64,
}

/// Steady or space-time high-fidelity solver behind one interface.
pub enum HighFidelity {
    Steady(SteadyOcp),
    SpaceTime(SpaceTimeOcp),
}

impl HighFidelity {
    pub fn new(problem: &ProblemDef, mesh: &Mesh) -> std::result::Result<Self, OcpError> {
        let catalog = OperatorCatalog::build(problem, mesh)?;
        Ok(if problem.id.is_parabolic() {
            HighFidelity::SpaceTime(SpaceTimeOcp::from_catalog(catalog)?)
        } else {
            HighFidelity::Steady(SteadyOcp::from_catalog(catalog))
        })
    }

    pub fn catalog(&self) -> &OperatorCatalog {
        match self {
            HighFidelity::Steady(s) => s.catalog(),
            HighFidelity::SpaceTime(s) => s.catalog(),
        }
    }

    pub fn problem(&self) -> &ProblemDef {
        self.catalog().problem()
    }

    pub fn kkt(&self, stab: Stabilization) -> &KktAffine {
        match self {
            HighFidelity::Steady(s) => s.kkt(stab),
            HighFidelity::SpaceTime(s) => s.kkt(stab),
        }
    }

    pub fn solve(&self, mu: &[f64], stab: Stabilization) -> std::result::Result<HfSolution, OcpError> {
        Ok(match self {
            HighFidelity::Steady(s) => {
                let r = s.solve(mu, stab)?;
                HfSolution {
                    y: r.y,
                    u: r.u,
                    p: r.p,
                    mu: r.mu,
                    wall_time: r.wall_time,
                    residual: r.residual,
                }
            }
            HighFidelity::SpaceTime(s) => {
                let r = s.solve(mu, stab)?;
                HfSolution {
                    y: r.y,
                    u: r.u,
                    p: r.p,
                    mu: r.mu,
                    wall_time: r.wall_time,
                    residual: r.residual,
                }
            }
        })
    }

    pub fn grams(&self) -> Grams {
        let cat = self.catalog();
        match self {
            HighFidelity::Steady(_) => Grams {
                state: Gram::spatial(cat.state_gram()),
                control: Gram::spatial(cat.control_gram()),
            },
            HighFidelity::SpaceTime(s) => {
                let (nt, dt) = (s.time().n_steps, s.time().dt());
                Grams {
                    state: Gram::space_time(cat.state_gram(), nt, dt),
                    control: Gram::space_time(cat.control_gram(), nt, dt),
                }
            }
        }
    }

    /// Largest deviation from `u = p/α`, relative to `max |u|`.
    pub fn gradient_deviation(&self, sol: &HfSolution) -> f64 {
        let spaces = self.catalog().spaces();
        let nf = spaces.n_free();
        let p_full: Vec<f64> = sol.p.chunks(nf).flat_map(|b| spaces.extend_zero(b)).collect();
        crate::ocp_steady::gradient_deviation(&sol.u, &p_full, self.problem().alpha)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingSet {
    pub samples: Vec<Vec<f64>>,
    pub rng_seed: u64,
    pub bounds: Vec<(f64, f64)>,
}

impl TrainingSet {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Independent uniform draws from the box.
pub fn draw_training_set(bounds: &[(f64, f64)], n: usize, seed: u64) -> Result<TrainingSet> {
    if n == 0 {
        return Err(RomError::Training("at least one sample is required".into()));
    }
    if bounds.is_empty() {
        return Err(RomError::Training("empty parameter box".into()));
    }
    if let Some(&(lo, hi)) = bounds
        .iter()
        .find(|(lo, hi)| !(lo.is_finite() && hi.is_finite() && lo <= hi))
    {
        return Err(RomError::Training(format!("empty parameter range [{lo}, {hi}]")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples = (0..n)
        .map(|_| {
            bounds
                .iter()
                .map(|&(lo, hi)| if lo == hi { lo } else { rng.random_range(lo..=hi) })
                .collect()
        })
        .collect();
    Ok(TrainingSet {
        samples,
        rng_seed: seed,
        bounds: bounds.to_vec(),
    })
}

/// Snapshot matrices with one column per training sample.
#[derive(Clone, Debug)]
pub struct SnapshotSet {
    pub y: DMatrix<f64>,
    pub u: DMatrix<f64>,
    pub p: DMatrix<f64>,
    pub grams: Grams,
    /// High-fidelity wall time per sample.
    pub wall_times: Vec<f64>,
}

impl SnapshotSet {
    pub fn len(&self) -> usize {
        self.y.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.y.ncols() == 0
    }
}

pub fn collect_snapshots(hf: &HighFidelity, training: &TrainingSet, stab: Stabilization) -> Result<SnapshotSet> {
    let kkt = hf.kkt(stab);
    let [ny, nu, np] = kkt.sizes();
    let n = training.len();
    let (mut y, mut u, mut p) = (DMatrix::zeros(ny, n), DMatrix::zeros(nu, n), DMatrix::zeros(np, n));
    let mut wall_times = Vec::with_capacity(n);
    for (k, mu) in training.samples.iter().enumerate() {
        let sol = hf.solve(mu, stab).map_err(|source| RomError::Snapshot {
            index: k,
            mu: mu.clone(),
            source,
        })?;
        y.column_mut(k).copy_from_slice(&sol.y);
        u.column_mut(k).copy_from_slice(&sol.u);
        p.column_mut(k).copy_from_slice(&sol.p);
        wall_times.push(sol.wall_time);
    }
    Ok(SnapshotSet {
        y,
        u,
        p,
        grams: hf.grams(),
        wall_times,
    })
}
