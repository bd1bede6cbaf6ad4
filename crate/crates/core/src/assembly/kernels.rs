//! Element integrals for P1 triangles and their global assembly.
//!
//! Local matrices are indexed `[test][trial]`. Variable coefficients are
//! integrated with a six-point Gauss rule of degree 4; its points are interior,
//! so the Graetz velocity never vanishes at a quadrature point.

use super::problem::DeltaRule;
use crate::linalg::{CsrMatrix, Triplet};
use crate::mesh::{local_peclet, Mesh, ObservationMask};

pub(crate) struct Element {
    pub area: f64,
    pub grads: [[f64; 2]; 3],
    pub h: f64,
    /// Quadrature points in physical coordinates.
    pub points: [[f64; 2]; 6],
}

const A1: f64 = 0.445_948_490_915_965;
const A2: f64 = 0.091_576_213_509_771;
const W1: f64 = 0.223_381_589_678_011;
const W2: f64 = 0.109_951_743_655_322;

/// Barycentric coordinates of the Gauss points; they are also the values of φ_0, φ_1, φ_2.
const BARY: [[f64; 3]; 6] = [
    [A1, A1, 1.0 - 2.0 * A1],
    [A1, 1.0 - 2.0 * A1, A1],
    [1.0 - 2.0 * A1, A1, A1],
    [A2, A2, 1.0 - 2.0 * A2],
    [A2, 1.0 - 2.0 * A2, A2],
    [1.0 - 2.0 * A2, A2, A2],
];

/// Weights relative to the element area.
const WEIGHTS: [f64; 6] = [W1, W1, W1, W2, W2, W2];

pub(crate) fn element(mesh: &Mesh, k: usize) -> Element {
    let [p0, p1, p2] = mesh.element_vertices(k);
    let two_area = (p1[0] - p0[0]) * (p2[1] - p0[1]) - (p2[0] - p0[0]) * (p1[1] - p0[1]);
    let grads = [
        [(p1[1] - p2[1]) / two_area, (p2[0] - p1[0]) / two_area],
        [(p2[1] - p0[1]) / two_area, (p0[0] - p2[0]) / two_area],
        [(p0[1] - p1[1]) / two_area, (p1[0] - p0[0]) / two_area],
    ];
    let points = BARY.map(|l| {
        [
            l[0] * p0[0] + l[1] * p1[0] + l[2] * p2[0],
            l[0] * p0[1] + l[1] * p1[1] + l[2] * p2[1],
        ]
    });
    Element {
        area: 0.5 * two_area,
        grads,
        h: mesh.h(k),
        points,
    }
}

#[inline]
fn dot(a: [f64; 2], b: [f64; 2]) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

fn assemble_local<F>(mesh: &Mesh, mask: Option<&ObservationMask>, mut local: F) -> CsrMatrix
where
    F: FnMut(usize, &Element) -> [[f64; 3]; 3],
{
    let n = mesh.n_vertices();
    let mut triplets: Vec<Triplet> = Vec::with_capacity(9 * mesh.n_elements());
    for (k, tri) in mesh.triangles().iter().enumerate() {
        if mask.is_some_and(|m| !m.is_flagged(k)) {
            continue;
        }
        let el = element(mesh, k);
        let loc = local(k, &el);
        for i in 0..3 {
            for j in 0..3 {
                triplets.push((tri[i], tri[j], loc[i][j]));
            }
        }
    }
    CsrMatrix::from_triplets(n, n, &triplets).expect("element indices are in range")
}

/// `M_ij = ∫ φ_i φ_j`, over flagged elements only when a mask is given.
pub fn assemble_mass(mesh: &Mesh, mask: Option<&ObservationMask>) -> CsrMatrix {
    assemble_local(mesh, mask, |_, el| {
        let d = el.area / 6.0;
        let o = el.area / 12.0;
        [[d, o, o], [o, d, o], [o, o, d]]
    })
}

/// `K_ij = ∫ ∇φ_i · ∇φ_j`.
pub fn assemble_stiffness(mesh: &Mesh) -> CsrMatrix {
    assemble_local(mesh, None, |_, el| {
        let mut loc = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                loc[i][j] = el.area * dot(el.grads[i], el.grads[j]);
            }
        }
        loc
    })
}

/// `A_ij = ∫ (b · ∇φ_j) φ_i`.
pub fn assemble_advection(mesh: &Mesh, b: impl Fn([f64; 2]) -> [f64; 2]) -> CsrMatrix {
    assemble_local(mesh, None, |_, el| {
        let mut loc = [[0.0; 3]; 3];
        for q in 0..6 {
            let bq = b(el.points[q]);
            for i in 0..3 {
                let w = el.area * WEIGHTS[q] * BARY[q][i];
                for j in 0..3 {
                    loc[i][j] += w * dot(bq, el.grads[j]);
                }
            }
        }
        loc
    })
}

/// Per-element `δ_K` from the rule, using the local Péclet number at the centroid.
pub fn element_deltas(
    mesh: &Mesh,
    rule: &DeltaRule,
    b: impl Fn([f64; 2]) -> [f64; 2],
    epsilon: f64,
) -> Vec<f64> {
    (0..mesh.n_elements())
        .map(|k| match rule {
            DeltaRule::Constant(d) => *d,
            DeltaRule::PecletSwitch { .. } => {
                let pe = local_peclet(mesh.h(k), b(mesh.centroid(k)), epsilon)
                    .expect("diffusion is validated positive");
                rule.delta(pe, mesh.h(k), epsilon)
            }
        })
        .collect()
}

/// `S_ij = Σ_K δ_K h_K ∫_K (b·∇φ_j)(b·∇φ_i) / |b|` with given `δ_K`.
pub(crate) fn assemble_streamline(
    mesh: &Mesh,
    b: impl Fn([f64; 2]) -> [f64; 2],
    deltas: &[f64],
) -> CsrMatrix {
    assemble_local(mesh, None, |k, el| {
        let mut loc = [[0.0; 3]; 3];
        for q in 0..6 {
            let scale = deltas[k] * el.h * el.area * WEIGHTS[q];
            let bq = b(el.points[q]);
            let norm = bq[0].hypot(bq[1]);
            if norm == 0.0 {
                continue;
            }
            let d: [f64; 3] = std::array::from_fn(|i| dot(bq, el.grads[i]));
            for i in 0..3 {
                for j in 0..3 {
                    loc[i][j] += scale * d[j] * d[i] / norm;
                }
            }
        }
        loc
    })
}

/// `C_ij = Σ_K δ_K h_K ∫_K φ_j (b·∇φ_i) / |b|` with given `δ_K`.
pub(crate) fn assemble_correction(
    mesh: &Mesh,
    b: impl Fn([f64; 2]) -> [f64; 2],
    deltas: &[f64],
    mask: Option<&ObservationMask>,
) -> CsrMatrix {
    assemble_local(mesh, mask, |k, el| {
        let mut loc = [[0.0; 3]; 3];
        for q in 0..6 {
            let scale = deltas[k] * el.h * el.area * WEIGHTS[q];
            let bq = b(el.points[q]);
            let norm = bq[0].hypot(bq[1]);
            if norm == 0.0 {
                continue;
            }
            for i in 0..3 {
                let di = dot(bq, el.grads[i]) / norm;
                for j in 0..3 {
                    loc[i][j] += scale * BARY[q][j] * di;
                }
            }
        }
        loc
    })
}

/// Streamline SUPG matrix with `δ_K` resolved from the rule.
pub fn assemble_supg_advection(
    mesh: &Mesh,
    b: impl Fn([f64; 2]) -> [f64; 2] + Copy,
    rule: &DeltaRule,
    epsilon: f64,
) -> CsrMatrix {
    let deltas = element_deltas(mesh, rule, b, epsilon);
    assemble_streamline(mesh, b, &deltas)
}

/// `M + sign · C`, restricted to flagged elements when a mask is given.
pub fn assemble_supg_mass(
    mesh: &Mesh,
    b: impl Fn([f64; 2]) -> [f64; 2] + Copy,
    rule: &DeltaRule,
    epsilon: f64,
    sign: f64,
    mask: Option<&ObservationMask>,
) -> CsrMatrix {
    let deltas = element_deltas(mesh, rule, b, epsilon);
    let m = assemble_mass(mesh, mask);
    let c = assemble_correction(mesh, b, &deltas, mask);
    CsrMatrix::linear_combination(&[(1.0, &m), (sign, &c)]).expect("same shape")
}

/// `Σ_K δ_K h_K ∫_K ∂_a φ_j ∂_c φ_i`; for a unit direction `b` the streamline
/// matrix is `Σ_{a,c} b_a b_c` times these components.
pub fn assemble_streamline_component(mesh: &Mesh, deltas: &[f64], a: usize, c: usize) -> CsrMatrix {
    assemble_local(mesh, None, |k, el| {
        let s = deltas[k] * el.h * el.area;
        let mut loc = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                loc[i][j] = s * el.grads[j][a] * el.grads[i][c];
            }
        }
        loc
    })
}

/// `Σ_K δ_K h_K ∫_K φ_j ∂_a φ_i`; for a unit direction `b` the mass correction
/// is `Σ_a b_a` times these components.
pub fn assemble_correction_component(
    mesh: &Mesh,
    deltas: &[f64],
    a: usize,
    mask: Option<&ObservationMask>,
) -> CsrMatrix {
    assemble_local(mesh, mask, |k, el| {
        // ∫_K φ_j = |K| / 3
        let s = deltas[k] * el.h * el.area / 3.0;
        let mut loc = [[0.0; 3]; 3];
        for (i, row) in loc.iter_mut().enumerate() {
            row.fill(s * el.grads[i][a]);
        }
        loc
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{DomainId, Mesh};

    fn square(n: usize) -> Mesh {
        Mesh::structured(DomainId::UnitSquare, n, n).unwrap()
    }

    /// Local matrix of the first element of a 2x2 grid, scaled to the unit right triangle.
    fn first_element_local(f: impl Fn(&Mesh) -> CsrMatrix) -> (Mesh, [[f64; 3]; 3]) {
        let m = Mesh::structured(DomainId::GraetzRect, 2, 2).unwrap();
        let full = f(&m);
        let tri = m.triangles()[0];
        let mut loc = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                loc[i][j] = full.get(tri[i], tri[j]);
            }
        }
        (m, loc)
    }

    #[test]
    fn unit_triangle_mass_and_stiffness() {
        let m = Mesh::structured(DomainId::UnitSquare, 2, 2).unwrap();
        let mut flags = vec![false; m.n_elements()];
        flags[0] = true;
        let mask = ObservationMask {
            element_flags: flags,
        };
        let mass = assemble_mass(&m, Some(&mask));
        let tri = m.triangles()[0];
        let area = 0.125;
        let expected = [[2.0, 1.0, 1.0], [1.0, 2.0, 1.0], [1.0, 1.0, 2.0]];
        for i in 0..3 {
            for j in 0..3 {
                let e = area / 12.0 * expected[i][j];
                assert!((mass.get(tri[i], tri[j]) - e).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn stiffness_of_right_triangle() {
        // a single right triangle with legs (1,0),(0,1) at the right-angle vertex 0:
        // local stiffness = ½[[2,−1,−1],[−1,1,0],[−1,0,1]]. On our grid the right
        // angle sits at vertex 1 of element 0: [v00, v10, v11].
        let m = Mesh::structured(DomainId::UnitSquare, 2, 2).unwrap();
        let el = element(&m, 0);
        let mut loc = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                loc[i][j] = el.area * dot(el.grads[i], el.grads[j]);
            }
        }
        // reorder so the right-angle vertex comes first: (1, 0, 2)
        let perm = [1, 0, 2];
        let expected = [[2.0, -1.0, -1.0], [-1.0, 1.0, 0.0], [-1.0, 0.0, 1.0]];
        for i in 0..3 {
            for j in 0..3 {
                assert!((loc[perm[i]][perm[j]] - 0.5 * expected[i][j]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn stiffness_symmetric_and_kills_constants() {
        let k = assemble_stiffness(&square(5));
        assert_eq!(k.transpose(), k);
        let kc = k.mul_vec(&vec![3.0; k.cols()]);
        assert!(kc.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn mass_partition_of_unity() {
        for d in [DomainId::GraetzRect, DomainId::UnitSquare] {
            let m = Mesh::structured(d, 8, 4).unwrap();
            let mass = assemble_mass(&m, None);
            let total: f64 = mass.values().iter().sum();
            assert!((total - d.area()).abs() < 1e-12);
        }
    }

    #[test]
    fn empty_mask_gives_zero_mass() {
        let m = square(4);
        let mass = assemble_mass(&m, Some(&ObservationMask::empty(m.n_elements())));
        assert!(mass.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn advection_zero_field_and_constants() {
        let m = square(4);
        let a = assemble_advection(&m, |_| [0.0, 0.0]);
        assert!(a.values().iter().all(|&v| v == 0.0));
        let a = assemble_advection(&m, |x| [x[1], 1.0 - x[0]]);
        assert!(a
            .mul_vec(&vec![1.0; a.cols()])
            .iter()
            .all(|v| v.abs() < 1e-14));
    }

    #[test]
    fn advection_column_sums_on_one_element() {
        // Σ_i A_ij = ∫ ∂x φ_j for b = (1,0)
        let m = square(2);
        let el = element(&m, 0);
        let mut loc = [[0.0; 3]; 3];
        for q in 0..6 {
            for i in 0..3 {
                for j in 0..3 {
                    loc[i][j] += el.area * WEIGHTS[q] * BARY[q][i] * el.grads[j][0];
                }
            }
        }
        for j in 0..3 {
            let col: f64 = (0..3).map(|i| loc[i][j]).sum();
            assert!((col - el.area * el.grads[j][0]).abs() < 1e-15);
        }
    }

    #[test]
    fn skew_part_of_divergence_free_advection() {
        // with div b = 0 and zero boundary values, A + Aᵀ vanishes on interior dofs
        let m = square(6);
        let a = assemble_advection(&m, |_| [0.6, 0.8]);
        let interior: Vec<usize> = (0..m.n_vertices())
            .filter(|v| m.tags_of(*v).is_none())
            .collect();
        let ai = a.submatrix(&interior, &interior);
        let sym = ai.add(&ai.transpose()).unwrap();
        assert!(sym.values().iter().all(|v| v.abs() < 1e-14));
    }

    #[test]
    fn streamline_zero_delta_is_zero() {
        let m = square(4);
        let s = assemble_streamline(&m, |_| [1.0, 0.0], &vec![0.0; m.n_elements()]);
        assert!(s.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn streamline_along_x_is_h_times_xx_stiffness() {
        let (m, loc) = first_element_local(|m| {
            let mut flags = vec![0.0; m.n_elements()];
            flags[0] = 1.0;
            assemble_streamline(m, |_| [1.0, 0.0], &flags)
        });
        let el = element(&m, 0);
        for i in 0..3 {
            for j in 0..3 {
                let e = el.h * el.area * el.grads[i][0] * el.grads[j][0];
                assert!((loc[i][j] - e).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn graetz_streamline_matches_reduced_form() {
        // for b = (4x₁(1−x₁), 0) the SUPG term reduces to δ h ∫ 4x₁(1−x₁) ∂₀φ_j ∂₀φ_i
        let m = Mesh::structured(DomainId::GraetzRect, 6, 4).unwrap();
        let s = assemble_streamline(
            &m,
            |x| [4.0 * x[1] * (1.0 - x[1]), 0.0],
            &vec![1.0; m.n_elements()],
        );
        let reference = assemble_local(&m, None, |k, el| {
            // 7-point degree-5 rule, independent of the midpoint rule
            let mut loc = [[0.0; 3]; 3];
            let [v0, v1, v2] = m.element_vertices(k);
            let w = dunavant5();
            let mut weight_int = 0.0;
            for (l0, l1, l2, wq) in w {
                let y = l0 * v0[1] + l1 * v1[1] + l2 * v2[1];
                weight_int += wq * el.area * 4.0 * y * (1.0 - y);
            }
            for i in 0..3 {
                for j in 0..3 {
                    loc[i][j] = el.h * weight_int * el.grads[i][0] * el.grads[j][0];
                }
            }
            loc
        });
        let rel = s.frobenius_distance(&reference).unwrap() / reference.frobenius_norm();
        assert!(rel < 1e-12, "relative gap {rel}");
    }

    fn dunavant5() -> Vec<(f64, f64, f64, f64)> {
        let a1 = 0.059_715_871_789_770;
        let b1 = 0.470_142_064_105_115;
        let a2 = 0.797_426_985_353_087;
        let b2 = 0.101_286_507_323_456;
        let w0 = 0.225;
        let w1 = 0.132_394_152_788_506;
        let w2 = 0.125_939_180_544_827;
        vec![
            (1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0, w0),
            (a1, b1, b1, w1),
            (b1, a1, b1, w1),
            (b1, b1, a1, w1),
            (a2, b2, b2, w2),
            (b2, a2, b2, w2),
            (b2, b2, a2, w2),
        ]
    }

    #[test]
    fn supg_mass_sign_linearity() {
        let m = square(4);
        let b = |_: [f64; 2]| [0.6, 0.8];
        let rule = DeltaRule::Constant(0.7);
        let plus = assemble_supg_mass(&m, b, &rule, 1e-3, 1.0, None);
        let minus = assemble_supg_mass(&m, b, &rule, 1e-3, -1.0, None);
        let mass = assemble_mass(&m, None);
        let avg = CsrMatrix::linear_combination(&[(0.5, &plus), (0.5, &minus)]).unwrap();
        assert!(avg.frobenius_distance(&mass).unwrap() < 1e-15);
        let deltas = vec![0.7; m.n_elements()];
        let c = assemble_correction(&m, b, &deltas, None);
        let diff =
            CsrMatrix::linear_combination(&[(1.0, &plus), (-1.0, &minus), (-2.0, &c)]).unwrap();
        assert!(diff.frobenius_norm() < 1e-15);
        let zero = assemble_supg_mass(&m, b, &DeltaRule::Constant(0.0), 1e-3, 1.0, None);
        assert!(zero.frobenius_distance(&mass).unwrap() == 0.0);
    }

    #[test]
    fn directional_components_reconstruct_unit_field() {
        let m = square(5);
        let theta: f64 = 0.9;
        let (c, s) = (theta.cos(), theta.sin());
        let deltas: Vec<f64> = (0..m.n_elements()).map(|k| 0.5 + 0.01 * k as f64).collect();
        let direct = assemble_streamline(&m, |_| [c, s], &deltas);
        let sxx = assemble_streamline_component(&m, &deltas, 0, 0);
        let sxy = assemble_streamline_component(&m, &deltas, 0, 1);
        let syx = assemble_streamline_component(&m, &deltas, 1, 0);
        let syy = assemble_streamline_component(&m, &deltas, 1, 1);
        let sum = CsrMatrix::linear_combination(&[
            (c * c, &sxx),
            (c * s, &sxy),
            (c * s, &syx),
            (s * s, &syy),
        ])
        .unwrap();
        assert!(sum.frobenius_distance(&direct).unwrap() < 1e-13 * direct.frobenius_norm());
        // S is symmetric
        assert!(
            direct.frobenius_distance(&direct.transpose()).unwrap()
                < 1e-15 * direct.frobenius_norm()
        );

        let direct = assemble_correction(&m, |_| [c, s], &deltas, None);
        let cx = assemble_correction_component(&m, &deltas, 0, None);
        let cy = assemble_correction_component(&m, &deltas, 1, None);
        let sum = CsrMatrix::linear_combination(&[(c, &cx), (s, &cy)]).unwrap();
        assert!(sum.frobenius_distance(&direct).unwrap() < 1e-13 * direct.frobenius_norm());
    }

    #[test]
    fn gauss_rule_is_exact_to_degree_four() {
        // ∫ x^a y^b over the unit right triangle is a! b! / (a + b + 2)!
        let fact = |n: u32| (1..=n).map(f64::from).product::<f64>();
        for a in 0..=4u32 {
            for b in 0..=(4 - a) {
                let quad: f64 = BARY
                    .iter()
                    .zip(WEIGHTS)
                    .map(|(l, w)| 0.5 * w * l[1].powi(a as i32) * l[2].powi(b as i32))
                    .sum();
                let exact = fact(a) * fact(b) / fact(a + b + 2);
                assert!((quad - exact).abs() < 1e-14, "x^{a} y^{b}: {quad} vs {exact}");
            }
        }
    }

    #[test]
    fn wall_zeros_of_the_field_keep_the_flow_direction() {
        // the Graetz field vanishes on the walls, yet b/|b| = (1, 0) at every interior point
        let m = Mesh::structured(DomainId::GraetzRect, 4, 2).unwrap();
        let deltas = vec![1.0; m.n_elements()];
        let s = assemble_streamline(&m, |x| [4.0 * x[1] * (1.0 - x[1]), 0.0], &deltas);
        let c = assemble_correction(&m, |x| [4.0 * x[1] * (1.0 - x[1]), 0.0], &deltas, None);
        assert!(s.values().iter().chain(c.values()).all(|v| v.is_finite()));
        let cx = assemble_correction_component(&m, &deltas, 0, None);
        assert!(c.frobenius_distance(&cx).unwrap() < 1e-13 * cx.frobenius_norm());
    }
}
