//! P1 finite-element assembly for the benchmark control problems.
//!
//! Every bilinear form is assembled as a parameter-independent sparse matrix
//! and combined into [`AffineOperator`]s so that evaluation at a new parameter
//! is a weighted sum. [`assemble_monolithic`] assembles the same operators
//! directly at a given parameter and serves as a reference.

mod affine;
mod catalog;
mod kernels;
mod lifting;
mod problem;

pub use affine::{AffineOperator, AffineTerm, AffineVector, Theta, ThetaFactor};
pub use catalog::{assemble_monolithic, MonolithicOperators, OperatorCatalog};
pub use kernels::{
    assemble_advection, assemble_correction_component, assemble_mass, assemble_stiffness,
    assemble_streamline_component, assemble_supg_advection, assemble_supg_mass, element_deltas,
};
pub use lifting::LiftedSpaces;
pub use problem::{DeltaRule, ProblemDef, ProblemId, Stabilization, TimeGrid};

use thiserror::Error;

use crate::linalg::LinalgError;
use crate::mesh::MeshError;

#[derive(Debug, Error)]
pub enum AssemblyError {
    #[error("invalid problem definition: {0}")]
    InvalidProblem(String),
    #[error("operator is not affine in the parameter: {0}")]
    NonAffine(String),
    #[error("parameter has {found} components, expected {expected}")]
    ParameterDimension { expected: usize, found: usize },
    #[error("mesh domain {found:?} does not match problem domain {expected:?}")]
    DomainMismatch {
        expected: crate::mesh::DomainId,
        found: crate::mesh::DomainId,
    },
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

pub type Result<T> = std::result::Result<T, AssemblyError>;
