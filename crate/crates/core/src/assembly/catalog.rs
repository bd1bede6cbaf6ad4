use std::path::Path;

use nalgebra::DMatrix;
use serde_json::json;

use super::affine::{AffineOperator, AffineVector, Theta};
use super::kernels::{
    assemble_advection, assemble_correction, assemble_correction_component, assemble_mass,
    assemble_stiffness, assemble_streamline, assemble_streamline_component, element_deltas,
};
use super::lifting::LiftedSpaces;
use super::problem::{DeltaRule, ProblemDef, Stabilization};
use super::{AssemblyError, Result};
use crate::linalg::{write_matrix, CsrMatrix};
use crate::mesh::{local_peclet, DomainId, Mesh, ObservationMask};

/// Parameter-independent operators of one problem on one mesh.
///
/// Full-space operators act on all vertices; the eliminated accessors restrict
/// rows and columns to free dofs (or keep all columns where the lifting or the
/// control enters).
#[derive(Clone, Debug)]
pub struct OperatorCatalog {
    problem: ProblemDef,
    spaces: LiftedSpaces,
    mask: ObservationMask,
    deltas: Vec<f64>,
    mass: CsrMatrix,
    mass_obs: CsrMatrix,
    stiffness: CsrMatrix,
    advection: AffineOperator,
    streamline: AffineOperator,
    correction: AffineOperator,
    correction_obs: AffineOperator,
}

/// Checks that `δ_K` does not depend on the parameter and returns it.
fn affine_deltas(problem: &ProblemDef, mesh: &Mesh) -> Result<Vec<f64>> {
    let lo = problem
        .parameter_box
        .iter()
        .map(|r| r.0)
        .collect::<Vec<_>>();
    let b = |x: [f64; 2]| problem.advection(x, &lo);
    match problem.delta_rule {
        DeltaRule::Constant(_) => Ok(element_deltas(
            mesh,
            &problem.delta_rule,
            b,
            problem.diffusion(&lo),
        )),
        DeltaRule::PecletSwitch { delta2, .. } => {
            // Pe grows with μ₁ and |b| does not depend on the other components,
            // so the smallest μ₁ is the worst case
            let eps = problem.diffusion(&lo);
            for k in 0..mesh.n_elements() {
                let pe = local_peclet(mesh.h(k), b(mesh.centroid(k)), eps)?;
                if pe <= 1.0 {
                    return Err(AssemblyError::NonAffine(format!(
                        "element {k} has Peclet number {pe:.3} <= 1 at mu_1 = {}, so delta_K depends on mu",
                        lo[0]
                    )));
                }
            }
            Ok(vec![delta2; mesh.n_elements()])
        }
    }
}

impl OperatorCatalog {
    pub fn build(problem: &ProblemDef, mesh: &Mesh) -> Result<Self> {
        let mask = mesh.observation_mask()?;
        Self::build_with_mask(problem, mesh, mask)
    }

    /// Builds with an explicit observation mask.
    pub fn build_with_mask(
        problem: &ProblemDef,
        mesh: &Mesh,
        mask: ObservationMask,
    ) -> Result<Self> {
        problem.validate()?;
        if mesh.domain_id() != problem.domain() {
            return Err(AssemblyError::DomainMismatch {
                expected: problem.domain(),
                found: mesh.domain_id(),
            });
        }
        let n = mesh.n_vertices();
        let deltas = affine_deltas(problem, mesh)?;
        let mut advection = AffineOperator::new(n, n);
        let mut streamline = AffineOperator::new(n, n);
        let mut correction = AffineOperator::new(n, n);
        let mut correction_obs = AffineOperator::new(n, n);
        match problem.domain() {
            DomainId::GraetzRect => {
                let mu = [problem.parameter_box[0].0];
                let b = |x: [f64; 2]| problem.advection(x, &mu);
                advection.push("advection", Theta::one(), assemble_advection(mesh, b))?;
                streamline.push(
                    "streamline",
                    Theta::one(),
                    assemble_streamline(mesh, b, &deltas),
                )?;
                correction.push(
                    "correction",
                    Theta::one(),
                    assemble_correction(mesh, b, &deltas, None),
                )?;
                correction_obs.push(
                    "correction_obs",
                    Theta::one(),
                    assemble_correction(mesh, b, &deltas, Some(&mask)),
                )?;
            }
            DomainId::UnitSquare => {
                let (c, s) = (Theta::cos(1), Theta::sin(1));
                advection.push(
                    "advection_x",
                    c.clone(),
                    assemble_advection(mesh, |_| [1.0, 0.0]),
                )?;
                advection.push(
                    "advection_y",
                    s.clone(),
                    assemble_advection(mesh, |_| [0.0, 1.0]),
                )?;
                let sxy = assemble_streamline_component(mesh, &deltas, 0, 1)
                    .add(&assemble_streamline_component(mesh, &deltas, 1, 0))?;
                streamline.push(
                    "streamline_xx",
                    c.times(&c),
                    assemble_streamline_component(mesh, &deltas, 0, 0),
                )?;
                streamline.push("streamline_xy", c.times(&s), sxy)?;
                streamline.push(
                    "streamline_yy",
                    s.times(&s),
                    assemble_streamline_component(mesh, &deltas, 1, 1),
                )?;
                correction.push(
                    "correction_x",
                    c.clone(),
                    assemble_correction_component(mesh, &deltas, 0, None),
                )?;
                correction.push(
                    "correction_y",
                    s.clone(),
                    assemble_correction_component(mesh, &deltas, 1, None),
                )?;
                correction_obs.push(
                    "correction_obs_x",
                    c,
                    assemble_correction_component(mesh, &deltas, 0, Some(&mask)),
                )?;
                correction_obs.push(
                    "correction_obs_y",
                    s,
                    assemble_correction_component(mesh, &deltas, 1, Some(&mask)),
                )?;
            }
        }
        Ok(Self {
            problem: problem.clone(),
            spaces: LiftedSpaces::new(problem, mesh),
            mass: assemble_mass(mesh, None),
            mass_obs: assemble_mass(mesh, Some(&mask)),
            stiffness: assemble_stiffness(mesh),
            mask,
            deltas,
            advection,
            streamline,
            correction,
            correction_obs,
        })
    }

    pub fn problem(&self) -> &ProblemDef {
        &self.problem
    }

    pub fn spaces(&self) -> &LiftedSpaces {
        &self.spaces
    }

    pub fn mask(&self) -> &ObservationMask {
        &self.mask
    }

    pub fn deltas(&self) -> &[f64] {
        &self.deltas
    }

    pub fn mass(&self) -> &CsrMatrix {
        &self.mass
    }

    pub fn mass_obs(&self) -> &CsrMatrix {
        &self.mass_obs
    }

    pub fn stiffness(&self) -> &CsrMatrix {
        &self.stiffness
    }

    fn n(&self) -> usize {
        self.mass.rows()
    }

    /// `(1/μ₁) K + A(μ) [+ S(μ)]` on all vertices.
    pub fn full_state(&self, stab: Stabilization) -> AffineOperator {
        let n = self.n();
        let mut op = AffineOperator::new(n, n);
        op.push("diffusion", Theta::reciprocal(0), self.stiffness.clone())
            .expect("square");
        op.extend_scaled(&self.advection, 1.0).expect("square");
        if stab == Stabilization::Supg {
            op.extend_scaled(&self.streamline, 1.0).expect("square");
        }
        op
    }

    /// `M + sign · C` on all vertices, observed elements only if `observed`.
    pub fn full_stabilized_mass(
        &self,
        sign: f64,
        observed: bool,
        stab: Stabilization,
    ) -> AffineOperator {
        let n = self.n();
        let (m, c) = if observed {
            (&self.mass_obs, &self.correction_obs)
        } else {
            (&self.mass, &self.correction)
        };
        let mut op = AffineOperator::new(n, n);
        op.push(
            if observed { "mass_obs" } else { "mass" },
            Theta::one(),
            m.clone(),
        )
        .expect("square");
        if stab == Stabilization::Supg {
            op.extend_scaled(c, sign).expect("square");
        }
        op
    }

    fn free(&self) -> &[usize] {
        self.spaces.free_dofs_state()
    }

    fn all(&self) -> Vec<usize> {
        (0..self.n()).collect()
    }

    /// `K_s` on free × free dofs.
    pub fn state_operator(&self, stab: Stabilization) -> AffineOperator {
        self.full_state(stab).submatrix(self.free(), self.free())
    }

    /// `M + C` on free dofs (time-derivative weighting of the state equation).
    pub fn state_time_mass(&self, stab: Stabilization) -> AffineOperator {
        self.full_stabilized_mass(1.0, false, stab)
            .submatrix(self.free(), self.free())
    }

    /// `M − C` on free dofs (time-derivative weighting of the adjoint equation).
    pub fn adjoint_time_mass(&self, stab: Stabilization) -> AffineOperator {
        self.full_stabilized_mass(-1.0, false, stab)
            .submatrix(self.free(), self.free())
    }

    /// `M_obs − C_obs` on free dofs (observation term of the adjoint equation).
    pub fn observation_mass(&self, stab: Stabilization) -> AffineOperator {
        self.full_stabilized_mass(-1.0, true, stab)
            .submatrix(self.free(), self.free())
    }

    /// `B_s = −(M + C)` on free rows and all control columns.
    pub fn control_coupling(&self, stab: Stabilization) -> AffineOperator {
        self.full_stabilized_mass(1.0, false, stab)
            .submatrix(self.free(), &self.all())
            .scaled(-1.0)
    }

    /// `Bᵀ = −M` on all control rows and free adjoint columns.
    pub fn control_coupling_adjoint(&self) -> CsrMatrix {
        self.mass.submatrix(&self.all(), self.free()).scaled(-1.0)
    }

    /// `f_s = −K_s R_y` on free rows.
    pub fn forcing(&self, stab: Stabilization) -> AffineVector {
        self.full_state(stab)
            .submatrix(self.free(), &self.all())
            .apply(self.spaces.lifting())
            .scaled(-1.0)
    }

    /// `(M_obs − C_obs)(y_d − R_y)` on free rows.
    pub fn observation_rhs(&self, stab: Stabilization) -> AffineVector {
        let target: Vec<f64> = self
            .spaces
            .lifting()
            .iter()
            .map(|r| self.problem.y_desired - r)
            .collect();
        self.full_stabilized_mass(-1.0, true, stab)
            .submatrix(self.free(), &self.all())
            .apply(&target)
    }

    /// `(M + K)` on free dofs: H¹ inner product of state and adjoint.
    pub fn state_gram(&self) -> CsrMatrix {
        self.mass
            .add(&self.stiffness)
            .expect("same shape")
            .submatrix(self.free(), self.free())
    }

    /// `M` on all dofs: L² inner product of the control.
    pub fn control_gram(&self) -> CsrMatrix {
        self.mass.clone()
    }

    /// Writes every full-space term as `[row, col, value]` rows in ROMXMAT1 files
    /// plus `manifest.json` mapping term names to θ descriptors.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(crate::linalg::LinalgError::Io)?;
        let mut entries = Vec::new();
        let mut save_term = |name: &str, theta: &Theta, m: &CsrMatrix| -> Result<()> {
            let file = format!("{name}.romx");
            let trip: Vec<_> = m.triplets().collect();
            let dense = DMatrix::from_fn(trip.len(), 3, |r, c| match c {
                0 => trip[r].0 as f64,
                1 => trip[r].1 as f64,
                _ => trip[r].2,
            });
            write_matrix(dir.join(&file), &dense)?;
            entries.push(json!({
                "name": name,
                "theta": theta,
                "theta_text": theta.to_string(),
                "file": file,
                "shape": [m.rows(), m.cols()],
                "layout": "triplets",
            }));
            Ok(())
        };
        save_term("mass", &Theta::one(), &self.mass)?;
        save_term("mass_obs", &Theta::one(), &self.mass_obs)?;
        save_term("stiffness", &Theta::reciprocal(0), &self.stiffness)?;
        for op in [
            &self.advection,
            &self.streamline,
            &self.correction,
            &self.correction_obs,
        ] {
            for t in op.terms() {
                save_term(&t.name, &t.theta, &t.matrix)?;
            }
        }
        let manifest = json!({
            "problem": self.problem,
            "n_vertices": self.n(),
            "free_dofs": self.spaces.free_dofs_state(),
            "lifting": self.spaces.lifting(),
            "terms": entries,
        });
        std::fs::write(
            dir.join("manifest.json"),
            serde_json::to_string_pretty(&manifest).expect("serializable"),
        )
        .map_err(crate::linalg::LinalgError::Io)?;
        Ok(())
    }
}

/// Full-space operators assembled directly at one parameter value.
#[derive(Clone, Debug)]
pub struct MonolithicOperators {
    /// `ε K + A + S`
    pub state: CsrMatrix,
    /// `ε K + A`
    pub state_plain: CsrMatrix,
    /// `M + C`
    pub mass_plus: CsrMatrix,
    /// `M − C`
    pub mass_minus: CsrMatrix,
    /// `M_obs − C_obs`
    pub mass_obs_minus: CsrMatrix,
}

/// Direct assembly at `mu` with `δ_K` resolved per element at that parameter.
pub fn assemble_monolithic(
    problem: &ProblemDef,
    mesh: &Mesh,
    mask: &ObservationMask,
    mu: &[f64],
) -> Result<MonolithicOperators> {
    problem.check_parameter(mu)?;
    let eps = problem.diffusion(mu);
    let b = |x: [f64; 2]| problem.advection(x, mu);
    let deltas = element_deltas(mesh, &problem.delta_rule, b, eps);
    let k = assemble_stiffness(mesh);
    let a = assemble_advection(mesh, b);
    let s = assemble_streamline(mesh, b, &deltas);
    let m = assemble_mass(mesh, None);
    let m_obs = assemble_mass(mesh, Some(mask));
    let c = assemble_correction(mesh, b, &deltas, None);
    let c_obs = assemble_correction(mesh, b, &deltas, Some(mask));
    let comb = |t: &[(f64, &CsrMatrix)]| CsrMatrix::linear_combination(t);
    Ok(MonolithicOperators {
        state: comb(&[(eps, &k), (1.0, &a), (1.0, &s)])?,
        state_plain: comb(&[(eps, &k), (1.0, &a)])?,
        mass_plus: comb(&[(1.0, &m), (1.0, &c)])?,
        mass_minus: comb(&[(1.0, &m), (-1.0, &c)])?,
        mass_obs_minus: comb(&[(1.0, &m_obs), (-1.0, &c_obs)])?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assembly::ProblemId;
    use crate::linalg::DenseSymMatrix;
    use rand::{Rng, SeedableRng};

    fn rel(a: &CsrMatrix, b: &CsrMatrix) -> f64 {
        a.frobenius_distance(b).unwrap() / b.frobenius_norm().max(f64::MIN_POSITIVE)
    }

    fn setup(id: ProblemId, nx: usize, ny: usize) -> (ProblemDef, Mesh, OperatorCatalog) {
        let p = ProblemDef::preset(id);
        let m = Mesh::structured(id.domain(), nx, ny).unwrap();
        let c = OperatorCatalog::build(&p, &m).unwrap();
        (p, m, c)
    }

    #[test]
    fn graetz_state_operator_has_three_terms() {
        let (_, _, cat) = setup(ProblemId::GraetzSteady, 10, 5);
        let op = cat.state_operator(Stabilization::Supg);
        assert_eq!(op.n_terms(), 3);
        assert_eq!(cat.state_operator(Stabilization::None).n_terms(), 2);
        let n = cat.spaces().n_free();
        assert_eq!(op.shape(), (n, n));
    }

    #[test]
    fn square_state_at_zero_angle() {
        let (_, m, cat) = setup(ProblemId::SquareSteady, 8, 8);
        let mu = [2e4, 0.0];
        let op = cat.full_state(Stabilization::Supg).evaluate(&mu);
        let deltas = vec![1.0; m.n_elements()];
        let expected = CsrMatrix::linear_combination(&[
            (1.0 / mu[0], &assemble_stiffness(&m)),
            (1.0, &assemble_advection(&m, |_| [1.0, 0.0])),
            (1.0, &assemble_streamline_component(&m, &deltas, 0, 0)),
        ])
        .unwrap();
        assert!(rel(&op, &expected) < 1e-15);
    }

    #[test]
    fn affine_matches_monolithic_at_random_parameters() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        for (id, nx, ny) in [
            (ProblemId::GraetzSteady, 10, 5),
            (ProblemId::SquareSteady, 8, 8),
        ] {
            let (p, m, cat) = setup(id, nx, ny);
            for _ in 0..5 {
                let mu: Vec<f64> = p
                    .parameter_box
                    .iter()
                    .map(|&(lo, hi)| rng.random_range(lo..=hi))
                    .collect();
                let mono = assemble_monolithic(&p, &m, cat.mask(), &mu).unwrap();
                let pairs = [
                    (
                        cat.full_state(Stabilization::Supg).evaluate(&mu),
                        &mono.state,
                    ),
                    (
                        cat.full_state(Stabilization::None).evaluate(&mu),
                        &mono.state_plain,
                    ),
                    (
                        cat.full_stabilized_mass(1.0, false, Stabilization::Supg)
                            .evaluate(&mu),
                        &mono.mass_plus,
                    ),
                    (
                        cat.full_stabilized_mass(-1.0, false, Stabilization::Supg)
                            .evaluate(&mu),
                        &mono.mass_minus,
                    ),
                    (
                        cat.full_stabilized_mass(-1.0, true, Stabilization::Supg)
                            .evaluate(&mu),
                        &mono.mass_obs_minus,
                    ),
                ];
                for (i, (affine, direct)) in pairs.iter().enumerate() {
                    let r = rel(affine, direct);
                    assert!(r <= 1e-12, "{id:?} operator {i} at {mu:?}: {r}");
                }
            }
        }
    }

    #[test]
    fn peclet_switch_accepted_when_uniformly_advective() {
        let mut p = ProblemDef::preset(ProblemId::SquareSteady);
        p.delta_rule = DeltaRule::PecletSwitch {
            delta1: 0.3,
            delta2: 0.8,
        };
        let m = Mesh::structured(p.domain(), 8, 8).unwrap();
        let cat = OperatorCatalog::build(&p, &m).unwrap();
        assert!(cat.deltas().iter().all(|&d| d == 0.8));
        // low Péclet somewhere → rejected
        p.parameter_box[0] = (1.0, 1e5);
        assert!(matches!(
            OperatorCatalog::build(&p, &m),
            Err(AssemblyError::NonAffine(_))
        ));
    }

    #[test]
    fn coercivity_proxy_of_stabilized_state() {
        let (p, _, cat) = setup(ProblemId::SquareSteady, 8, 8);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        for _ in 0..3 {
            let mu: Vec<f64> = p
                .parameter_box
                .iter()
                .map(|&(lo, hi)| rng.random_range(lo..=hi))
                .collect();
            let a = cat
                .state_operator(Stabilization::Supg)
                .evaluate(&mu)
                .to_dense();
            let sym = (&a + a.transpose()) * 0.5;
            let eig = crate::linalg::sym_eigh(&DenseSymMatrix::from_matrix(&sym).unwrap());
            assert!(*eig.values.last().unwrap() > 0.0);
        }
    }

    #[test]
    fn forcing_is_minus_state_applied_to_lifting() {
        let (_, _, cat) = setup(ProblemId::GraetzSteady, 10, 5);
        let mu = [3e4];
        let f = cat.forcing(Stabilization::Supg).evaluate(&mu);
        let full = cat.full_state(Stabilization::Supg).evaluate(&mu);
        let r = full.mul_vec(cat.spaces().lifting());
        for (k, &v) in cat.spaces().free_dofs_state().iter().enumerate() {
            assert!((f[k] + r[v]).abs() < 1e-14);
        }
    }

    #[test]
    fn state_operator_annihilates_constants() {
        let (_, _, cat) = setup(ProblemId::SquareSteady, 8, 8);
        let k = cat.full_state(Stabilization::Supg).evaluate(&[1e4, 0.4]);
        let r = k.mul_vec(&vec![1.0; k.cols()]);
        assert!(r.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn catalog_save_writes_manifest() {
        let (_, _, cat) = setup(ProblemId::SquareSteady, 4, 4);
        let dir = tempfile::tempdir().unwrap();
        cat.save(dir.path()).unwrap();
        let text = std::fs::read_to_string(dir.path().join("manifest.json")).unwrap();
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        let terms = v["terms"].as_array().unwrap();
        assert_eq!(terms.len(), 3 + 2 + 3 + 2 + 2);
        let mass = crate::linalg::read_matrix(dir.path().join("mass.romx")).unwrap();
        assert_eq!(mass.ncols(), 3);
        assert_eq!(mass.nrows(), cat.mass().nnz());
    }

    #[test]
    fn mismatched_domain_rejected() {
        let p = ProblemDef::preset(ProblemId::SquareSteady);
        let m = Mesh::structured(DomainId::GraetzRect, 10, 5).unwrap();
        assert!(OperatorCatalog::build(&p, &m).is_err());
    }
}
