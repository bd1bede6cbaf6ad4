//! One-shot solution of the steady optimality system.
//!
//! Unknowns are the homogenized state on free dofs, the control on all dofs
//! and the adjoint on free dofs. Block rows are the adjoint, gradient and
//! state equations.

use std::path::Path;
use std::time::Instant;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assembly::{AssemblyError, OperatorCatalog, ProblemDef, Stabilization, Theta};
use crate::kkt::{KktAffine, KktBuilder, KktSystem};
use crate::linalg::{sparse_lu_solve, write_matrix, LinalgError};
use crate::mesh::Mesh;

#[derive(Debug, Error)]
pub enum OcpError {
    #[error(transparent)]
    Assembly(#[from] AssemblyError),
    #[error("solve failed at mu = {mu:?}: {source}")]
    Solve {
        mu: Vec<f64>,
        #[source]
        source: LinalgError,
    },
    #[error("problem {0} is not handled by this solver")]
    WrongKind(&'static str),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

pub type Result<T> = std::result::Result<T, OcpError>;

/// Builds the steady KKT family `[[M_obs,s, 0, K_sᵀ], [0, αM, Bᵀ], [K_s, B_s, 0]]`.
pub fn build_steady_kkt(catalog: &OperatorCatalog, stab: Stabilization) -> KktAffine {
    let nf = catalog.spaces().n_free();
    let n = catalog.spaces().n_full();
    let alpha = catalog.problem().alpha;
    let state = catalog.state_operator(stab);
    let mut b = KktBuilder::new([nf, n, nf]);
    b.add_operator(0, 0, 1.0, &catalog.observation_mass(stab));
    b.add_operator(0, 2, 1.0, &state.transpose());
    b.add_matrix(1, 1, &Theta::one(), alpha, catalog.mass());
    b.add_matrix(
        1,
        2,
        &Theta::one(),
        1.0,
        &catalog.control_coupling_adjoint(),
    );
    b.add_operator(2, 0, 1.0, &state);
    b.add_operator(2, 1, 1.0, &catalog.control_coupling(stab));
    b.add_rhs(0, 1.0, &catalog.observation_rhs(stab));
    b.add_rhs(2, 1.0, &catalog.forcing(stab));
    b.build()
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SteadySolution {
    /// Homogenized state on free dofs.
    pub y: Vec<f64>,
    pub u: Vec<f64>,
    pub p: Vec<f64>,
    pub mu: Vec<f64>,
    pub stabilization: Stabilization,
    /// Seconds spent on coefficient evaluation, assembly and the sparse solve.
    pub wall_time: f64,
    pub residual: f64,
}

impl SteadySolution {
    /// Writes `<stem>_{y,u,p}.romx` column vectors and `<stem>.json`.
    pub fn export(&self, dir: &Path, stem: &str, objective: f64) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        for (name, v) in [("y", &self.y), ("u", &self.u), ("p", &self.p)] {
            write_matrix(
                dir.join(format!("{stem}_{name}.romx")),
                &DMatrix::from_column_slice(v.len(), 1, v),
            )?;
        }
        let meta = serde_json::json!({
            "mu": self.mu,
            "stabilization": self.stabilization,
            "wall_time_s": self.wall_time,
            "residual": self.residual,
            "objective": objective,
            "objective_masses": "unstabilized",
            "state_coordinates": "homogenized, free dofs",
        });
        std::fs::write(
            dir.join(format!("{stem}.json")),
            serde_json::to_string_pretty(&meta).expect("json"),
        )?;
        Ok(())
    }
}

/// Steady optimal control problem on a fixed mesh with both KKT families prebuilt.
pub struct SteadyOcp {
    catalog: OperatorCatalog,
    kkt_supg: KktAffine,
    kkt_plain: KktAffine,
}

impl SteadyOcp {
    pub fn new(problem: &ProblemDef, mesh: &Mesh) -> Result<Self> {
        if problem.id.is_parabolic() {
            return Err(OcpError::WrongKind(problem.id.name()));
        }
        Ok(Self::from_catalog(OperatorCatalog::build(problem, mesh)?))
    }

    pub fn from_catalog(catalog: OperatorCatalog) -> Self {
        let kkt_supg = build_steady_kkt(&catalog, Stabilization::Supg);
        let kkt_plain = build_steady_kkt(&catalog, Stabilization::None);
        Self {
            catalog,
            kkt_supg,
            kkt_plain,
        }
    }

    pub fn catalog(&self) -> &OperatorCatalog {
        &self.catalog
    }

    pub fn problem(&self) -> &ProblemDef {
        self.catalog.problem()
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

    pub fn solve(&self, mu: &[f64], stab: Stabilization) -> Result<SteadySolution> {
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
        Ok(SteadySolution {
            y: y.to_vec(),
            u: u.to_vec(),
            p: p.to_vec(),
            mu: mu.to_vec(),
            stabilization: stab,
            wall_time,
            residual,
        })
    }

    /// Solves the state equation alone for a given control.
    pub fn solve_state(&self, mu: &[f64], u: &[f64], stab: Stabilization) -> Result<Vec<f64>> {
        let k = self.catalog.state_operator(stab).evaluate(mu);
        let b = self.catalog.control_coupling(stab).evaluate(mu);
        let mut rhs = self.catalog.forcing(stab).evaluate(mu);
        b.mul_vec_acc(-1.0, u, &mut rhs);
        sparse_lu_solve(&k, &rhs).map_err(|source| OcpError::Solve {
            mu: mu.to_vec(),
            source,
        })
    }

    /// `½ (y − y_d)ᵀ M_obs (y − y_d) + (α/2) uᵀ M u` with plain masses and the lifting added back.
    pub fn objective(&self, y: &[f64], u: &[f64]) -> f64 {
        let spaces = self.catalog.spaces();
        let e: Vec<f64> = spaces
            .extend_lifted(y)
            .iter()
            .map(|v| v - self.problem().y_desired)
            .collect();
        let me = self.catalog.mass_obs().mul_vec(&e);
        let mu_ = self.catalog.mass().mul_vec(u);
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
        0.5 * dot(&e, &me) + 0.5 * self.problem().alpha * dot(u, &mu_)
    }

    pub fn evaluate_objective(&self, sol: &SteadySolution) -> f64 {
        self.objective(&sol.y, &sol.u)
    }

    /// `max |u − ext(p)/α| / max |u|`.
    pub fn gradient_deviation(&self, sol: &SteadySolution) -> f64 {
        gradient_deviation(
            &sol.u,
            &self.catalog.spaces().extend_zero(&sol.p),
            self.problem().alpha,
        )
    }

    /// Full nodal state including the lifting.
    pub fn full_state(&self, sol: &SteadySolution) -> Vec<f64> {
        self.catalog.spaces().extend_lifted(&sol.y)
    }
}

pub(crate) fn gradient_deviation(u: &[f64], p_full: &[f64], alpha: f64) -> f64 {
    let scale = u
        .iter()
        .fold(0.0f64, |m, v| m.max(v.abs()))
        .max(f64::MIN_POSITIVE);
    u.iter()
        .zip(p_full)
        .map(|(u, p)| (u - p / alpha).abs())
        .fold(0.0, f64::max)
        / scale
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assembly::ProblemId;
    use crate::mesh::DomainId;
    use rand::{Rng, SeedableRng};

    fn graetz(nx: usize, ny: usize) -> SteadyOcp {
        let p = ProblemDef::preset(ProblemId::GraetzSteady);
        SteadyOcp::new(&p, &Mesh::structured(DomainId::GraetzRect, nx, ny).unwrap()).unwrap()
    }

    #[test]
    fn dimension_is_twice_free_plus_control() {
        let ocp = graetz(10, 5);
        let sys = ocp.assemble(&[1e5], Stabilization::Supg).unwrap();
        let s = ocp.catalog().spaces();
        assert_eq!(sys.dim(), 2 * s.n_free() + s.n_full());
    }

    #[test]
    fn gradient_identity_holds() {
        let ocp = graetz(20, 10);
        for stab in [Stabilization::Supg, Stabilization::None] {
            let sol = ocp.solve(&[1e5], stab).unwrap();
            assert!(sol.residual <= 1e-10);
            assert!(ocp.gradient_deviation(&sol) <= 1e-10, "{stab:?}");
        }
    }

    #[test]
    fn plain_system_symmetric_and_supg_system_not() {
        // the nonsymmetric advection operator enters as K and Kᵀ in mirrored blocks,
        // so only the stabilized mass terms break symmetry
        let ocp = graetz(10, 5);
        let mu = [1e5];
        let plain = ocp.assemble(&mu, Stabilization::None).unwrap().matrix;
        let k = ocp
            .catalog()
            .state_operator(Stabilization::None)
            .evaluate(&mu);
        assert!(k.frobenius_distance(&k.transpose()).unwrap() > 1e-3 * k.frobenius_norm());
        assert!(plain.frobenius_distance(&plain.transpose()).unwrap() <= 1e-15 * plain.frobenius_norm());
        let supg = ocp.assemble(&mu, Stabilization::Supg).unwrap().matrix;
        assert!(supg.frobenius_distance(&supg.transpose()).unwrap() > 1e-6 * supg.frobenius_norm());
    }

    #[test]
    fn small_delta_approaches_plain_system() {
        let mut p = ProblemDef::preset(ProblemId::GraetzSteady);
        p.delta_rule = crate::assembly::DeltaRule::Constant(1e-12);
        let mesh = Mesh::structured(DomainId::GraetzRect, 10, 5).unwrap();
        let ocp = SteadyOcp::new(&p, &mesh).unwrap();
        let a = ocp.assemble(&[1e5], Stabilization::Supg).unwrap().matrix;
        let b = ocp.assemble(&[1e5], Stabilization::None).unwrap().matrix;
        assert!(a.frobenius_distance(&b).unwrap() <= 1e-10 * b.frobenius_norm());
    }

    #[test]
    fn self_consistent_target_gives_zero_control() {
        // target chosen as the uncontrolled state makes (y0, 0, 0) optimal
        let ocp = graetz(10, 5);
        let mu = [1e5];
        for stab in [Stabilization::None, Stabilization::Supg] {
            let y0 = ocp
                .solve_state(&mu, &vec![0.0; ocp.catalog().spaces().n_full()], stab)
                .unwrap();
            // replace the observation rhs by M_obs (y0) on free rows, i.e. shift y_d
            let mut sys = ocp.assemble(&mu, stab).unwrap();
            let m_obs = ocp.catalog().observation_mass(stab).evaluate(&mu);
            let target = m_obs.mul_vec(&y0);
            sys.rhs[..y0.len()].copy_from_slice(&target);
            let x = sys.solve().unwrap();
            let (y, u, p) = sys.split(&x);
            let norm = |v: &[f64]| v.iter().map(|a| a * a).sum::<f64>().sqrt();
            assert!(norm(u) <= 1e-8 && norm(p) <= 1e-8);
            let dy: Vec<f64> = y.iter().zip(&y0).map(|(a, b)| a - b).collect();
            assert!(norm(&dy) <= 1e-8 * norm(&y0));
        }
    }

    #[test]
    fn objective_properties() {
        let ocp = graetz(10, 5);
        let sol = ocp.solve(&[1e5], Stabilization::Supg).unwrap();
        let j = ocp.evaluate_objective(&sol);
        assert!(j >= 0.0);
        let mass_u: f64 = {
            let mu_ = ocp.catalog().mass().mul_vec(&sol.u);
            sol.u.iter().zip(&mu_).map(|(a, b)| a * b).sum()
        };
        let doubled: Vec<f64> = sol.u.iter().map(|v| 2.0 * v).collect();
        let j2 = ocp.objective(&sol.y, &doubled);
        let expected = 0.5 * ocp.problem().alpha * 3.0 * mass_u;
        assert!((j2 - j - expected).abs() <= 1e-12 * j2.abs().max(1.0));
        // u = 0 and y = y_d on Ω_obs gives zero cost; uniform boundary data keeps
        // the lifted field equal to the target on every observed vertex
        let mut p = ProblemDef::preset(ProblemId::GraetzSteady);
        p.dirichlet_values.iter_mut().for_each(|(_, v)| *v = 1.0);
        let ocp =
            SteadyOcp::new(&p, &Mesh::structured(DomainId::GraetzRect, 10, 5).unwrap()).unwrap();
        let spaces = ocp.catalog().spaces();
        let y = vec![1.0; spaces.n_free()];
        assert_eq!(ocp.objective(&y, &vec![0.0; spaces.n_full()]), 0.0);
    }

    #[test]
    fn stationarity_without_stabilization() {
        let ocp = graetz(10, 5);
        let mu = [1e5];
        let sol = ocp.solve(&mu, Stabilization::None).unwrap();
        let j0 = ocp.evaluate_objective(&sol);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        for _ in 0..5 {
            let mut du: Vec<f64> = (0..sol.u.len())
                .map(|_| rng.random::<f64>() - 0.5)
                .collect();
            let n = du.iter().map(|v| v * v).sum::<f64>().sqrt();
            du.iter_mut().for_each(|v| *v *= 1e-3 / n);
            let u: Vec<f64> = sol.u.iter().zip(&du).map(|(a, b)| a + b).collect();
            let y = ocp.solve_state(&mu, &u, Stabilization::None).unwrap();
            assert!(ocp.objective(&y, &u) >= j0 - 1e-10);
        }
    }

    #[test]
    fn export_writes_vectors_and_metadata() {
        let ocp = graetz(10, 5);
        let sol = ocp.solve(&[1e5], Stabilization::Supg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        sol.export(dir.path(), "sol", ocp.evaluate_objective(&sol))
            .unwrap();
        let y = crate::linalg::read_matrix(dir.path().join("sol_y.romx")).unwrap();
        assert_eq!(y.as_slice(), &sol.y[..]);
        let meta: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join("sol.json")).unwrap())
                .unwrap();
        assert_eq!(meta["stabilization"], "supg");
    }

    #[test]
    fn parabolic_problem_rejected() {
        let p = ProblemDef::preset(ProblemId::GraetzParabolic);
        let mesh = Mesh::structured(DomainId::GraetzRect, 10, 5).unwrap();
        assert!(matches!(
            SteadyOcp::new(&p, &mesh),
            Err(OcpError::WrongKind(_))
        ));
    }
}
