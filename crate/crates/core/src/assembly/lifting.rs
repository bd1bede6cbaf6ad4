use serde::{Deserialize, Serialize};

use super::problem::ProblemDef;
use crate::mesh::Mesh;

/// Free-dof numbering and the nodal lifting of the Dirichlet data.
///
/// State and adjoint share the same Dirichlet portion, so one free list serves both.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LiftedSpaces {
    free_dofs_state: Vec<usize>,
    free_dofs_adjoint: Vec<usize>,
    full_to_free: Vec<Option<usize>>,
    lifting: Vec<f64>,
}

impl LiftedSpaces {
    /// Vertices touching several Dirichlet segments take the smallest value.
    pub fn new(problem: &ProblemDef, mesh: &Mesh) -> Self {
        let n = mesh.n_vertices();
        let mut lifting = vec![0.0; n];
        let mut full_to_free = vec![None; n];
        let mut free = Vec::new();
        for v in 0..n {
            let value = mesh.tags_of(v).and_then(|tags| {
                tags.iter()
                    .filter_map(|s| problem.dirichlet_value(*s))
                    .min_by(f64::total_cmp)
            });
            match value {
                Some(val) => lifting[v] = val,
                None => {
                    full_to_free[v] = Some(free.len());
                    free.push(v);
                }
            }
        }
        Self {
            free_dofs_adjoint: free.clone(),
            free_dofs_state: free,
            full_to_free,
            lifting,
        }
    }

    pub fn free_dofs_state(&self) -> &[usize] {
        &self.free_dofs_state
    }

    pub fn free_dofs_adjoint(&self) -> &[usize] {
        &self.free_dofs_adjoint
    }

    pub fn n_free(&self) -> usize {
        self.free_dofs_state.len()
    }

    pub fn n_full(&self) -> usize {
        self.lifting.len()
    }

    pub fn lifting(&self) -> &[f64] {
        &self.lifting
    }

    pub fn free_index(&self, vertex: usize) -> Option<usize> {
        self.full_to_free[vertex]
    }

    /// Values on free dofs.
    pub fn restrict(&self, full: &[f64]) -> Vec<f64> {
        self.free_dofs_state.iter().map(|&v| full[v]).collect()
    }

    /// Zero extension of a free-dof vector.
    pub fn extend_zero(&self, free: &[f64]) -> Vec<f64> {
        let mut full = vec![0.0; self.n_full()];
        for (&v, &x) in self.free_dofs_state.iter().zip(free) {
            full[v] = x;
        }
        full
    }

    /// `R_y` plus the zero extension of a homogenized state.
    pub fn extend_lifted(&self, free: &[f64]) -> Vec<f64> {
        let mut full = self.lifting.clone();
        for (&v, &x) in self.free_dofs_state.iter().zip(free) {
            full[v] = x;
        }
        full
    }
}
