//! Dense reference solver for tiny meshes, assembled from the variational forms
//! with an interior Gauss rule and boundary data taken from the geometry.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};

use supg_rom::assembly::{OperatorCatalog, ProblemDef, ProblemId, Stabilization};
use supg_rom::mesh::{DomainId, Mesh, ObservationMask};
use supg_rom::ocp_spacetime::SpaceTimeOcp;
use supg_rom::ocp_steady::SteadyOcp;

/// Degree-4 rule on the reference triangle: barycentric point and weight (weights sum to 1).
fn gauss_points() -> Vec<([f64; 3], f64)> {
    let (a1, w1) = (0.445948490915965, 0.223381589678011);
    let (a2, w2) = (0.091576213509771, 0.109951743655322);
    let mut pts = Vec::new();
    for (a, w) in [(a1, w1), (a2, w2)] {
        let b = 1.0 - 2.0 * a;
        pts.push(([a, a, b], w));
        pts.push(([a, b, a], w));
        pts.push(([b, a, a], w));
    }
    pts
}

/// Boundary value at `x`, smallest value on shared corners, `None` for natural or interior points.
pub fn boundary_value(domain: DomainId, x: [f64; 2]) -> Option<f64> {
    let eps = 1e-12;
    let near = |a: f64, b: f64| (a - b).abs() < eps;
    let mut vals = Vec::new();
    match domain {
        DomainId::GraetzRect => {
            for wall in [0.0, 1.0] {
                if near(x[1], wall) {
                    if x[0] <= 1.0 + eps {
                        vals.push(0.0);
                    }
                    if x[0] >= 1.0 - eps {
                        vals.push(1.0);
                    }
                }
            }
            if near(x[0], 0.0) {
                vals.push(0.0);
            }
        }
        DomainId::UnitSquare => {
            if near(x[0], 0.0) && x[1] <= 0.25 + eps {
                vals.push(1.0);
            }
            if near(x[1], 0.0) {
                vals.push(1.0);
            }
            if near(x[0], 1.0) || near(x[1], 1.0) {
                vals.push(0.0);
            }
            if near(x[0], 0.0) && x[1] >= 0.25 - eps {
                vals.push(0.0);
            }
        }
    }
    vals.into_iter().reduce(f64::min)
}

fn velocity(id: ProblemId, x: [f64; 2], mu: &[f64]) -> [f64; 2] {
    match id.domain() {
        DomainId::GraetzRect => [4.0 * x[1] * (1.0 - x[1]), 0.0],
        DomainId::UnitSquare => [mu[1].cos(), mu[1].sin()],
    }
}

/// Full-vertex matrices, indexed `[test][trial]`.
pub struct DenseForms {
    pub mass: DMatrix<f64>,
    /// `(φ_j, φ_i)` plus `δh (φ_j, b̂·∇φ_i)` when stabilized.
    pub state_mass: DMatrix<f64>,
    /// `(φ_j, φ_i)` minus `δh (φ_j, b̂·∇φ_i)` when stabilized.
    pub adjoint_mass: DMatrix<f64>,
    pub obs_mass: DMatrix<f64>,
    pub state: DMatrix<f64>,
    /// `(y_d − R_y, φ_i − δh b̂·∇φ_i)` over the observed region.
    pub obs_rhs: DVector<f64>,
    pub lifting: DVector<f64>,
    pub free: Vec<usize>,
}

pub fn dense_forms(problem: &ProblemDef, mesh: &Mesh, mu: &[f64], observed: &dyn Fn(usize) -> bool, supg: bool) -> DenseForms {
    let n = mesh.n_vertices();
    let eps = 1.0 / mu[0];
    let delta = 1.0;
    let mut lifting = DVector::zeros(n);
    let mut free = Vec::new();
    for (v, &x) in mesh.vertices().iter().enumerate() {
        match boundary_value(problem.domain(), x) {
            Some(g) => lifting[v] = g,
            None => free.push(v),
        }
    }
    let mut f = DenseForms {
        mass: DMatrix::zeros(n, n),
        state_mass: DMatrix::zeros(n, n),
        adjoint_mass: DMatrix::zeros(n, n),
        obs_mass: DMatrix::zeros(n, n),
        state: DMatrix::zeros(n, n),
        obs_rhs: DVector::zeros(n),
        lifting,
        free,
    };
    for (k, tri) in mesh.triangles().iter().enumerate() {
        let p = tri.map(|v| mesh.vertices()[v]);
        let t = Matrix3::new(1.0, 1.0, 1.0, p[0][0], p[1][0], p[2][0], p[0][1], p[1][1], p[2][1]);
        let area = 0.5 * t.determinant().abs();
        let tinv = t.try_inverse().expect("non-degenerate element");
        let grad = |i: usize| [tinv[(i, 1)], tinv[(i, 2)]];
        let edge = |a: usize, b: usize| ((p[a][0] - p[b][0]).powi(2) + (p[a][1] - p[b][1]).powi(2)).sqrt();
        let h = edge(0, 1).max(edge(1, 2)).max(edge(2, 0));
        let sd = if supg { delta * h } else { 0.0 };
        let obs = observed(k);
        for (lam, w) in gauss_points() {
            let x = [
                lam[0] * p[0][0] + lam[1] * p[1][0] + lam[2] * p[2][0],
                lam[0] * p[0][1] + lam[1] * p[1][1] + lam[2] * p[2][1],
            ];
            let check = tinv * Vector3::new(1.0, x[0], x[1]);
            assert!((0..3).all(|i| (check[i] - lam[i]).abs() < 1e-12));
            let b = velocity(problem.id, x, mu);
            let nb = b[0].hypot(b[1]);
            assert!(nb > 0.0, "Gauss points are interior");
            let dir = [b[0] / nb, b[1] / nb];
            let wq = w * area;
            let target = problem.y_desired
                - (0..3).map(|i| lam[i] * f.lifting[tri[i]]).sum::<f64>();
            for i in 0..3 {
                let gi = grad(i);
                let d_gi = dir[0] * gi[0] + dir[1] * gi[1];
                let (vi, phi_i) = (tri[i], lam[i]);
                if obs {
                    f.obs_rhs[vi] += wq * target * (phi_i - sd * d_gi);
                }
                for j in 0..3 {
                    let gj = grad(j);
                    let b_gj = b[0] * gj[0] + b[1] * gj[1];
                    let vj = tri[j];
                    let m = wq * lam[j] * phi_i;
                    let c = wq * sd * lam[j] * d_gi;
                    f.mass[(vi, vj)] += m;
                    f.state_mass[(vi, vj)] += m + c;
                    f.adjoint_mass[(vi, vj)] += m - c;
                    if obs {
                        f.obs_mass[(vi, vj)] += m - c;
                    }
                    f.state[(vi, vj)] += wq
                        * (eps * (gi[0] * gj[0] + gi[1] * gj[1]) + b_gj * phi_i + sd * b_gj * d_gi);
                }
            }
        }
    }
    f
}

fn sub(m: &DMatrix<f64>, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), cols.len(), |i, j| m[(rows[i], cols[j])])
}

fn put(a: &mut DMatrix<f64>, r: usize, c: usize, m: &DMatrix<f64>, s: f64) {
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            a[(r + i, c + j)] += s * m[(i, j)];
        }
    }
}

/// Oracle solution `(y, u, p)`, with the parabolic unknowns stacked per time step.
pub struct OracleSolution {
    pub y: Vec<f64>,
    pub u: Vec<f64>,
    pub p: Vec<f64>,
}

/// Solves the optimality system on the given forms; `steps = None` is the steady problem.
pub fn oracle_solve(problem: &ProblemDef, forms: &DenseForms, steps: Option<(usize, f64)>) -> OracleSolution {
    let n = forms.mass.nrows();
    let fr = &forms.free;
    let all: Vec<usize> = (0..n).collect();
    let nf = fr.len();
    let forcing = -(sub(&forms.state, fr, &all) * &forms.lifting);
    let obs_rhs = DVector::from_fn(nf, |i, _| forms.obs_rhs[fr[i]]);
    let k_ff = sub(&forms.state, fr, fr);
    let ms_ff = sub(&forms.state_mass, fr, fr);
    let ms_fa = sub(&forms.state_mass, fr, &all);
    let ma_ff = sub(&forms.adjoint_mass, fr, fr);
    let mo_ff = sub(&forms.obs_mass, fr, fr);
    let m_af = sub(&forms.mass, &all, fr);
    let alpha = problem.alpha;
    let (nt, dt) = steps.unwrap_or((1, 1.0));
    let steady = steps.is_none();
    let (oy, ou, op) = (0, nf * nt, nf * nt + n * nt);
    let dim = 2 * nf * nt + n * nt;
    let mut a = DMatrix::zeros(dim, dim);
    let mut rhs = DVector::zeros(dim);
    for k in 0..nt {
        let (yk, uk, pk) = (oy + k * nf, ou + k * n, op + k * nf);
        // state equation, tested at free vertices
        let r = pk;
        put(&mut a, r, yk, &k_ff, 1.0);
        put(&mut a, r, uk, &ms_fa, -1.0);
        if !steady {
            put(&mut a, r, yk, &ms_ff, 1.0 / dt);
            if k > 0 {
                put(&mut a, r, yk - nf, &ms_ff, -1.0 / dt);
            }
        }
        rhs.rows_mut(r, nf).copy_from(&forcing);
        // gradient equation
        put(&mut a, uk, uk, &forms.mass, alpha);
        put(&mut a, uk, pk, &m_af, -1.0);
        // adjoint equation: a_s(φ_z, p) in row z
        let r = yk;
        put(&mut a, r, pk, &k_ff.transpose(), 1.0);
        put(&mut a, r, yk, &mo_ff, 1.0);
        if !steady {
            put(&mut a, r, pk, &ma_ff, 1.0 / dt);
            if k + 1 < nt {
                put(&mut a, r, pk + nf, &ma_ff, -1.0 / dt);
            }
        }
        rhs.rows_mut(r, nf).copy_from(&obs_rhs);
    }
    let x = a.full_piv_lu().solve(&rhs).expect("oracle system is nonsingular");
    OracleSolution {
        y: x.rows(oy, nf * nt).iter().copied().collect(),
        u: x.rows(ou, n * nt).iter().copied().collect(),
        p: x.rows(op, nf * nt).iter().copied().collect(),
    }
}

/// Catalog with every element observed, for meshes too coarse to resolve the observation region.
pub fn whole_domain_catalog(problem: &ProblemDef, mesh: &Mesh) -> OperatorCatalog {
    let mask = ObservationMask {
        element_flags: vec![true; mesh.n_elements()],
    };
    OperatorCatalog::build_with_mask(problem, mesh, mask).expect("valid problem")
}

pub fn max_rel_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let scale = b.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max) / scale
}

/// Worst relative deviation between the sparse solvers and the oracle over both
/// stabilizations, for a steady or `N_t = 2` problem on a 2×2-cell mesh.
pub fn oracle_deviation(id: ProblemId, mu: &[f64]) -> f64 {
    let mut problem = ProblemDef::preset(id);
    if id.is_parabolic() {
        problem.time = Some(supg_rom::assembly::TimeGrid {
            t_final: 0.2,
            n_steps: 2,
        });
    }
    let mesh = Mesh::structured(id.domain(), 2, 2).unwrap();
    let mut worst = 0.0f64;
    for (stab, supg) in [(Stabilization::None, false), (Stabilization::Supg, true)] {
        let forms = dense_forms(&problem, &mesh, mu, &|_| true, supg);
        let catalog = whole_domain_catalog(&problem, &mesh);
        assert_eq!(catalog.spaces().free_dofs_state(), forms.free.as_slice());
        let (y, u, p, oracle) = match problem.time {
            None => {
                let s = SteadyOcp::from_catalog(catalog).solve(mu, stab).unwrap();
                (s.y, s.u, s.p, oracle_solve(&problem, &forms, None))
            }
            Some(t) => {
                let s = SpaceTimeOcp::from_catalog(catalog).unwrap().solve(mu, stab).unwrap();
                (s.y, s.u, s.p, oracle_solve(&problem, &forms, Some((t.n_steps, t.dt()))))
            }
        };
        for (got, want) in [(&y, &oracle.y), (&u, &oracle.u), (&p, &oracle.p)] {
            worst = worst.max(max_rel_diff(got, want));
        }
    }
    worst
}
