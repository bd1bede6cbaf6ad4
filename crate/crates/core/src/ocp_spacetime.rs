//! All-at-once solution of the parabolic optimality system.
//!
//! Time blocks are stacked per variable: `y = [y_1; …; y_{N_t}]`. The state is
//! marched with backward Euler, the adjoint with forward Euler backwards in
//! time, and the terminal adjoint block has no forward coupling (`p_{N_t+1} = 0`).
//! The homogenized initial state is zero.

use std::path::Path;
use std::time::Instant;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::assembly::{AffineOperator, AffineVector, OperatorCatalog, ProblemDef, Stabilization, Theta, TimeGrid};
use crate::kkt::{KktAffine, KktBuilder, KktSystem};
use crate::linalg::{write_matrix, CsrMatrix};
use crate::mesh::Mesh;
use crate::ocp_steady::{gradient_deviation, OcpError, Result};

fn shift(n: usize, lower: bool) -> CsrMatrix {
    let t: Vec<_> = (1..n)
        .map(|i| if lower { (i, i - 1, 1.0) } else { (i - 1, i, 1.0) })
        .collect();
    CsrMatrix::from_triplets(n, n, &t).expect("in range")
}

fn kron_op(builder: &mut KktBuilder, row: usize, col: usize, pattern: &CsrMatrix, scale: f64, op: &AffineOperator) {
    for t in op.terms() {
        builder.add_matrix(row, col, &t.theta, scale, &CsrMatrix::kron(pattern, &t.matrix));
    }
}

fn repeat(v: &AffineVector, n: usize) -> AffineVector {
    let mut out = AffineVector::new(v.len() * n);
    for (name, theta, vec) in v.terms() {
        out.push(name.clone(), theta.clone(), vec.repeat(n));
    }
    out
}

/// Builds `[[Δt ℳ*_obs, 0, 𝒜*], [0, αΔt ℳ, Δt 𝒞ᵀ], [𝒜, Δt 𝒞, 0]]`.
pub fn build_spacetime_kkt(catalog: &OperatorCatalog, time: &TimeGrid, stab: Stabilization) -> KktAffine {
    let nt = time.n_steps;
    let dt = time.dt();
    let nf = catalog.spaces().n_free();
    let n = catalog.spaces().n_full();
    let alpha = catalog.problem().alpha;
    let (eye, lower, upper) = (CsrMatrix::identity(nt), shift(nt, true), shift(nt, false));
    let state = catalog.state_operator(stab);
    let m_state = catalog.state_time_mass(stab);
    let m_adj = catalog.adjoint_time_mass(stab);

    let mut b = KktBuilder::new([nf * nt, n * nt, nf * nt]);
    // adjoint equation
    kron_op(&mut b, 0, 0, &eye, dt, &catalog.observation_mass(stab));
    kron_op(&mut b, 0, 2, &eye, 1.0, &m_adj);
    kron_op(&mut b, 0, 2, &eye, dt, &state.transpose());
    kron_op(&mut b, 0, 2, &upper, -1.0, &m_adj);
    // gradient equation
    let one = Theta::one();
    b.add_matrix(1, 1, &one, alpha * dt, &CsrMatrix::kron(&eye, catalog.mass()));
    b.add_matrix(1, 2, &one, dt, &CsrMatrix::kron(&eye, &catalog.control_coupling_adjoint()));
    // state equation
    kron_op(&mut b, 2, 0, &eye, 1.0, &m_state);
    kron_op(&mut b, 2, 0, &eye, dt, &state);
    kron_op(&mut b, 2, 0, &lower, -1.0, &m_state);
    kron_op(&mut b, 2, 1, &eye, dt, &catalog.control_coupling(stab));

    b.add_rhs(0, dt, &repeat(&catalog.observation_rhs(stab), nt));
    b.add_rhs(2, dt, &repeat(&catalog.forcing(stab), nt));
    b.build()
}

/// `(Δt Σ_i v_iᵀ G v_i)^{1/2}` over the time blocks of a stacked vector.
pub fn spacetime_norm(v: &[f64], gram: &CsrMatrix, dt: f64) -> f64 {
    let n = gram.rows();
    assert_eq!(v.len() % n, 0, "stacked vector length");
    let mut total = 0.0;
    for block in v.chunks(n) {
        let g = gram.mul_vec(block);
        total += crate::linalg::dot(block, &g);
    }
    (dt * total.max(0.0)).sqrt()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpaceTimeNorms {
    pub y: f64,
    pub u: f64,
    pub p: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SpaceTimeSolution {
    /// Stacked homogenized state blocks on free dofs.
    pub y: Vec<f64>,
    pub u: Vec<f64>,
    pub p: Vec<f64>,
    pub mu: Vec<f64>,
    pub dt: f64,
    pub n_steps: usize,
    pub stabilization: Stabilization,
    pub wall_time: f64,
    pub residual: f64,
}

impl SpaceTimeSolution {
    fn block<'a>(v: &'a [f64], n_steps: usize, i: usize) -> &'a [f64] {
        let len = v.len() / n_steps;
        &v[i * len..(i + 1) * len]
    }

    /// State at time step `i + 1` (0-based block index).
    pub fn y_block(&self, i: usize) -> &[f64] {
        Self::block(&self.y, self.n_steps, i)
    }

    pub fn u_block(&self, i: usize) -> &[f64] {
        Self::block(&self.u, self.n_steps, i)
    }

    pub fn p_block(&self, i: usize) -> &[f64] {
        Self::block(&self.p, self.n_steps, i)
    }

    /// Writes `<stem>_{y,u,p}.romx` with one column per time step plus `<stem>.json`.
    pub fn export(&self, dir: &Path, stem: &str) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        for (name, v) in [("y", &self.y), ("u", &self.u), ("p", &self.p)] {
            let rows = v.len() / self.n_steps;
            write_matrix(
                dir.join(format!("{stem}_{name}.romx")),
                &DMatrix::from_column_slice(rows, self.n_steps, v),
            )?;
        }
        let times: Vec<f64> = (1..=self.n_steps).map(|i| i as f64 * self.dt).collect();
        let meta = serde_json::json!({
            "mu": self.mu,
            "stabilization": self.stabilization,
            "dt": self.dt,
            "times": times,
            "wall_time_s": self.wall_time,
            "residual": self.residual,
            "state_coordinates": "homogenized, free dofs",
        });
        std::fs::write(dir.join(format!("{stem}.json")), serde_json::to_string_pretty(&meta).expect("json"))?;
        Ok(())
    }
}

pub struct SpaceTimeOcp {
    catalog: OperatorCatalog,
    time: TimeGrid,
    kkt_supg: KktAffine,
    kkt_plain: KktAffine,
}

impl SpaceTimeOcp {
    pub fn new(problem: &ProblemDef, mesh: &Mesh) -> Result<Self> {
        Self::from_catalog(OperatorCatalog::build(problem, mesh)?)
    }

    pub fn from_catalog(catalog: OperatorCatalog) -> Result<Self> {
        let time = catalog
            .problem()
            .time
            .filter(|_| catalog.problem().id.is_parabolic())
            .ok_or(OcpError::WrongKind(catalog.problem().id.name()))?;
        let kkt_supg = build_spacetime_kkt(&catalog, &time, Stabilization::Supg);
        let kkt_plain = build_spacetime_kkt(&catalog, &time, Stabilization::None);
        Ok(Self {
            catalog,
            time,
            kkt_supg,
            kkt_plain,
        })
    }

    pub fn catalog(&self) -> &OperatorCatalog {
        &self.catalog
    }

    pub fn problem(&self) -> &ProblemDef {
        self.catalog.problem()
    }

    pub fn time(&self) -> &TimeGrid {
        &self.time
    }

    pub fn kkt(&self, stab: Stabilization) -> &KktAffine {
        match stab {
            Stabilization::Supg => &self.kkt_supg,
            Stabilization::None => &self.kkt_plain,
        }
    }

    pub fn assemble(&self, mu: &[f64], stab: Stabilization) -> Result<KktSystem> {
        self.problem().check_parameter(mu)?;
        Ok(self.kkt(stab).system(mu))
    }

    pub fn solve(&self, mu: &[f64], stab: Stabilization) -> Result<SpaceTimeSolution> {
        self.problem().check_parameter(mu)?;
        let start = Instant::now();
        let sys = self.kkt(stab).system(mu);
        let x = sys.solve().map_err(|source| OcpError::Solve {
            mu: mu.to_vec(),
            source,
        })?;
        let wall_time = start.elapsed().as_secs_f64();
        let residual = sys.relative_residual(&x);
        let (y, u, p) = sys.split(&x);
        Ok(SpaceTimeSolution {
            y: y.to_vec(),
            u: u.to_vec(),
            p: p.to_vec(),
            mu: mu.to_vec(),
            dt: self.time.dt(),
            n_steps: self.time.n_steps,
            stabilization: stab,
            wall_time,
            residual,
        })
    }

    /// Largest blockwise deviation from `u_i = p_i / α`, relative to `max |u|`.
    pub fn gradient_deviation(&self, sol: &SpaceTimeSolution) -> f64 {
        let spaces = self.catalog.spaces();
        let p_full: Vec<f64> = (0..sol.n_steps)
            .flat_map(|i| spaces.extend_zero(sol.p_block(i)))
            .collect();
        gradient_deviation(&sol.u, &p_full, self.problem().alpha)
    }

    /// Space-time norms: H¹ for state and adjoint, L² for control.
    pub fn norms(&self, sol: &SpaceTimeSolution) -> SpaceTimeNorms {
        let gy = self.catalog.state_gram();
        let gu = self.catalog.control_gram();
        SpaceTimeNorms {
            y: spacetime_norm(&sol.y, &gy, sol.dt),
            u: spacetime_norm(&sol.u, &gu, sol.dt),
            p: spacetime_norm(&sol.p, &gy, sol.dt),
        }
    }
}
