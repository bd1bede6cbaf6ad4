//! Structured triangulations of the two benchmark domains.
//!
//! Each rectangle cell of an `nx × ny` grid is split along its lower-left to
//! upper-right diagonal. Boundary vertices carry the labels of every closed
//! boundary segment they lie on, so corners carry two labels.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

const GEOM_TOL: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum MeshError {
    #[error("grid needs at least 2 cells per direction, got {nx}x{ny}")]
    TooCoarse { nx: usize, ny: usize },
    #[error(
        "observation region boundary {axis}={coordinate} is not a grid line for a {nx}x{ny} grid"
    )]
    MisalignedObservation {
        axis: &'static str,
        coordinate: f64,
        nx: usize,
        ny: usize,
    },
    #[error("element index {0} out of range")]
    NoSuchElement(usize),
    #[error("diffusion must be positive, got {0}")]
    NonPositiveDiffusion(f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DomainId {
    /// `[0,2] × [0,1]` channel with segments Γ₁…Γ₆.
    GraetzRect,
    /// `[0,1]²` with segments Γ₁…Γ₅.
    UnitSquare,
}

/// Boundary segment label (`Γ₁` is `Segment(1)`).
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Segment(pub u8);

/// An axis-aligned rectangle `[x0_min, x0_max] × [x1_min, x1_max]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub x0: (f64, f64),
    pub x1: (f64, f64),
}

impl Rect {
    pub fn contains(&self, p: [f64; 2]) -> bool {
        p[0] >= self.x0.0 - GEOM_TOL
            && p[0] <= self.x0.1 + GEOM_TOL
            && p[1] >= self.x1.0 - GEOM_TOL
            && p[1] <= self.x1.1 + GEOM_TOL
    }
}

impl DomainId {
    pub fn extent(self) -> (f64, f64) {
        match self {
            DomainId::GraetzRect => (2.0, 1.0),
            DomainId::UnitSquare => (1.0, 1.0),
        }
    }

    pub fn area(self) -> f64 {
        let (w, h) = self.extent();
        w * h
    }

    /// Observation region as a union of rectangles.
    pub fn observation_region(self) -> Vec<Rect> {
        match self {
            DomainId::GraetzRect => vec![
                Rect {
                    x0: (1.0, 2.0),
                    x1: (0.8, 1.0),
                },
                Rect {
                    x0: (1.0, 2.0),
                    x1: (0.0, 0.2),
                },
            ],
            DomainId::UnitSquare => vec![Rect {
                x0: (0.25, 1.0),
                x1: (0.75, 1.0),
            }],
        }
    }

    /// Closed boundary segments as `(label, start, end)`.
    pub fn segments(self) -> Vec<(Segment, [f64; 2], [f64; 2])> {
        match self {
            DomainId::GraetzRect => vec![
                (Segment(1), [0.0, 0.0], [1.0, 0.0]),
                (Segment(2), [1.0, 0.0], [2.0, 0.0]),
                (Segment(3), [2.0, 0.0], [2.0, 1.0]),
                (Segment(4), [1.0, 1.0], [2.0, 1.0]),
                (Segment(5), [0.0, 1.0], [1.0, 1.0]),
                (Segment(6), [0.0, 0.0], [0.0, 1.0]),
            ],
            DomainId::UnitSquare => vec![
                (Segment(1), [0.0, 0.0], [0.0, 0.25]),
                (Segment(2), [0.0, 0.0], [1.0, 0.0]),
                (Segment(3), [1.0, 0.0], [1.0, 1.0]),
                (Segment(4), [0.0, 1.0], [1.0, 1.0]),
                (Segment(5), [0.0, 0.25], [0.0, 1.0]),
            ],
        }
    }

    /// Coordinates that must be grid lines for the observation mask: `(x0 lines, x1 lines)`.
    fn observation_grid_lines(self) -> (Vec<f64>, Vec<f64>) {
        match self {
            DomainId::GraetzRect => (vec![1.0], vec![0.2, 0.8]),
            DomainId::UnitSquare => (vec![0.25], vec![0.75]),
        }
    }
}

fn on_segment(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> bool {
    // segments are axis-aligned
    let within =
        |v: f64, lo: f64, hi: f64| v >= lo.min(hi) - GEOM_TOL && v <= lo.max(hi) + GEOM_TOL;
    if (a[0] - b[0]).abs() < GEOM_TOL {
        (p[0] - a[0]).abs() < GEOM_TOL && within(p[1], a[1], b[1])
    } else {
        (p[1] - a[1]).abs() < GEOM_TOL && within(p[0], a[0], b[0])
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Mesh {
    vertices: Vec<[f64; 2]>,
    triangles: Vec<[usize; 3]>,
    boundary_tags: BTreeMap<usize, BTreeSet<Segment>>,
    h_per_element: Vec<f64>,
    domain_id: DomainId,
    nx: usize,
    ny: usize,
}

impl Mesh {
    pub fn structured(domain_id: DomainId, nx: usize, ny: usize) -> Result<Self, MeshError> {
        if nx < 2 || ny < 2 {
            return Err(MeshError::TooCoarse { nx, ny });
        }
        let (w, h) = domain_id.extent();
        let mut vertices = Vec::with_capacity((nx + 1) * (ny + 1));
        for j in 0..=ny {
            for i in 0..=nx {
                vertices.push([w * i as f64 / nx as f64, h * j as f64 / ny as f64]);
            }
        }
        let vid = |i: usize, j: usize| j * (nx + 1) + i;
        let mut triangles = Vec::with_capacity(2 * nx * ny);
        for j in 0..ny {
            for i in 0..nx {
                let (a, b, c, d) = (vid(i, j), vid(i + 1, j), vid(i + 1, j + 1), vid(i, j + 1));
                triangles.push([a, b, c]);
                triangles.push([a, c, d]);
            }
        }
        let h_per_element = triangles
            .iter()
            .map(|t| {
                let p = t.map(|v| vertices[v]);
                let e = |u: [f64; 2], v: [f64; 2]| {
                    ((u[0] - v[0]).powi(2) + (u[1] - v[1]).powi(2)).sqrt()
                };
                e(p[0], p[1]).max(e(p[1], p[2])).max(e(p[2], p[0]))
            })
            .collect();

        let segments = domain_id.segments();
        let mut boundary_tags = BTreeMap::new();
        for (v, &p) in vertices.iter().enumerate() {
            let tags: BTreeSet<Segment> = segments
                .iter()
                .filter(|(_, a, b)| on_segment(p, *a, *b))
                .map(|(s, _, _)| *s)
                .collect();
            if !tags.is_empty() {
                boundary_tags.insert(v, tags);
            }
        }

        Ok(Self {
            vertices,
            triangles,
            boundary_tags,
            h_per_element,
            domain_id,
            nx,
            ny,
        })
    }

    /// Picks the grid whose element diameter is closest to `h_target` while
    /// keeping square cells and aligning with the observation region.
    pub fn with_target_h(domain_id: DomainId, h_target: f64) -> Result<Self, MeshError> {
        let (w, _) = domain_id.extent();
        let step = match domain_id {
            DomainId::GraetzRect => 5,
            DomainId::UnitSquare => 4,
        };
        let ny_ideal = std::f64::consts::SQRT_2 / h_target;
        let mut best = step;
        let mut best_gap = f64::INFINITY;
        let mut ny = step;
        while (ny as f64) < 4.0 * ny_ideal + step as f64 {
            let gap = (std::f64::consts::SQRT_2 / ny as f64 - h_target).abs();
            if gap < best_gap {
                best_gap = gap;
                best = ny;
            }
            ny += step;
        }
        Self::structured(domain_id, (w as usize) * best, best)
    }

    pub fn domain_id(&self) -> DomainId {
        self.domain_id
    }

    pub fn grid(&self) -> (usize, usize) {
        (self.nx, self.ny)
    }

    pub fn vertices(&self) -> &[[f64; 2]] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn n_elements(&self) -> usize {
        self.triangles.len()
    }

    pub fn boundary_tags(&self) -> &BTreeMap<usize, BTreeSet<Segment>> {
        &self.boundary_tags
    }

    pub fn tags_of(&self, vertex: usize) -> Option<&BTreeSet<Segment>> {
        self.boundary_tags.get(&vertex)
    }

    pub fn h(&self, element: usize) -> f64 {
        self.h_per_element[element]
    }

    pub fn h_per_element(&self) -> &[f64] {
        &self.h_per_element
    }

    pub fn h_max(&self) -> f64 {
        self.h_per_element.iter().cloned().fold(0.0, f64::max)
    }

    /// Vertex index of grid node `(i, j)`.
    pub fn grid_vertex(&self, i: usize, j: usize) -> usize {
        j * (self.nx + 1) + i
    }

    pub fn element_vertices(&self, element: usize) -> [[f64; 2]; 3] {
        self.triangles[element].map(|v| self.vertices[v])
    }

    pub fn signed_area(&self, element: usize) -> f64 {
        let [a, b, c] = self.element_vertices(element);
        0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]))
    }

    pub fn centroid(&self, element: usize) -> [f64; 2] {
        let [a, b, c] = self.element_vertices(element);
        [(a[0] + b[0] + c[0]) / 3.0, (a[1] + b[1] + c[1]) / 3.0]
    }

    /// Flags elements whose closed triangle lies inside the observation region.
    pub fn observation_mask(&self) -> Result<ObservationMask, MeshError> {
        let (w, h) = self.domain_id.extent();
        let (x0_lines, x1_lines) = self.domain_id.observation_grid_lines();
        let aligned = |c: f64, len: f64, n: usize| {
            let k = c / len * n as f64;
            (k - k.round()).abs() < 1e-9
        };
        for &c in &x0_lines {
            if !aligned(c, w, self.nx) {
                return Err(MeshError::MisalignedObservation {
                    axis: "x0",
                    coordinate: c,
                    nx: self.nx,
                    ny: self.ny,
                });
            }
        }
        for &c in &x1_lines {
            if !aligned(c, h, self.ny) {
                return Err(MeshError::MisalignedObservation {
                    axis: "x1",
                    coordinate: c,
                    nx: self.nx,
                    ny: self.ny,
                });
            }
        }
        let region = self.domain_id.observation_region();
        let element_flags = (0..self.n_elements())
            .map(|k| {
                let pts = self.element_vertices(k);
                region.iter().any(|r| pts.iter().all(|&p| r.contains(p)))
            })
            .collect();
        Ok(ObservationMask { element_flags })
    }

    pub fn local_peclet(
        &self,
        element: usize,
        b_at_centroid: [f64; 2],
        epsilon_at_centroid: f64,
    ) -> Result<f64, MeshError> {
        if element >= self.n_elements() {
            return Err(MeshError::NoSuchElement(element));
        }
        local_peclet(self.h(element), b_at_centroid, epsilon_at_centroid)
    }

    /// `Σ |v(i+1, j) − v(i, j)|` over grid rows: total variation of a nodal field along x0.
    pub fn total_variation_x0(&self, values: &[f64]) -> f64 {
        assert_eq!(values.len(), self.n_vertices(), "nodal field length");
        let mut tv = 0.0;
        for j in 0..=self.ny {
            for i in 0..self.nx {
                tv += (values[self.grid_vertex(i + 1, j)] - values[self.grid_vertex(i, j)]).abs();
            }
        }
        tv
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "domain": self.domain_id,
            "nx": self.nx,
            "ny": self.ny,
            "vertices": self.vertices,
            "triangles": self.triangles,
            "tags": self.boundary_tags.iter()
                .map(|(v, t)| (v.to_string(), t.iter().map(|s| s.0).collect::<Vec<_>>()))
                .collect::<BTreeMap<_, _>>(),
        })
    }
}

/// `|b| h_K / (2 ε)`.
pub fn local_peclet(h: f64, b: [f64; 2], epsilon: f64) -> Result<f64, MeshError> {
    if !(epsilon > 0.0) {
        return Err(MeshError::NonPositiveDiffusion(epsilon));
    }
    Ok(b[0].hypot(b[1]) * h / (2.0 * epsilon))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObservationMask {
    pub element_flags: Vec<bool>,
}

impl ObservationMask {
    pub fn count(&self) -> usize {
        self.element_flags.iter().filter(|&&f| f).count()
    }

    pub fn is_flagged(&self, element: usize) -> bool {
        self.element_flags[element]
    }

    pub fn empty(n_elements: usize) -> Self {
        Self {
            element_flags: vec![false; n_elements],
        }
    }
}
