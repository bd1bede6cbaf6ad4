use std::fmt;

use serde::{Deserialize, Serialize};

use super::{AssemblyError, Result};
use crate::linalg::CsrMatrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThetaFactor {
    /// `1 / μ_k`
    Reciprocal(usize),
    /// `cos μ_k`
    Cos(usize),
    /// `sin μ_k`
    Sin(usize),
}

impl ThetaFactor {
    fn eval(self, mu: &[f64]) -> f64 {
        match self {
            ThetaFactor::Reciprocal(k) => 1.0 / mu[k],
            ThetaFactor::Cos(k) => mu[k].cos(),
            ThetaFactor::Sin(k) => mu[k].sin(),
        }
    }
}

/// Parameter coefficient as a product of elementary factors; the empty product is 1.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
pub struct Theta {
    factors: Vec<ThetaFactor>,
}

impl Theta {
    pub fn one() -> Self {
        Self::default()
    }

    pub fn from_factors(mut factors: Vec<ThetaFactor>) -> Self {
        factors.sort();
        Self { factors }
    }

    pub fn reciprocal(k: usize) -> Self {
        Self::from_factors(vec![ThetaFactor::Reciprocal(k)])
    }

    pub fn cos(k: usize) -> Self {
        Self::from_factors(vec![ThetaFactor::Cos(k)])
    }

    pub fn sin(k: usize) -> Self {
        Self::from_factors(vec![ThetaFactor::Sin(k)])
    }

    pub fn times(&self, other: &Theta) -> Self {
        Self::from_factors(self.factors.iter().chain(&other.factors).copied().collect())
    }

    pub fn factors(&self) -> &[ThetaFactor] {
        &self.factors
    }

    pub fn eval(&self, mu: &[f64]) -> f64 {
        self.factors.iter().map(|f| f.eval(mu)).product()
    }
}

impl fmt::Display for Theta {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.factors.is_empty() {
            return write!(f, "1");
        }
        let parts: Vec<String> = self
            .factors
            .iter()
            .map(|t| match t {
                ThetaFactor::Reciprocal(k) => format!("1/mu{k}"),
                ThetaFactor::Cos(k) => format!("cos(mu{k})"),
                ThetaFactor::Sin(k) => format!("sin(mu{k})"),
            })
            .collect();
        write!(f, "{}", parts.join("*"))
    }
}

#[derive(Clone, Debug)]
pub struct AffineTerm {
    pub name: String,
    pub theta: Theta,
    pub matrix: CsrMatrix,
}

/// `Σ_q θ_q(μ) A_q` over matrices of a common shape.
#[derive(Clone, Debug)]
pub struct AffineOperator {
    rows: usize,
    cols: usize,
    terms: Vec<AffineTerm>,
}

impl AffineOperator {
    pub fn new(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            terms: Vec::new(),
        }
    }

    pub fn push(&mut self, name: impl Into<String>, theta: Theta, matrix: CsrMatrix) -> Result<()> {
        if matrix.shape() != (self.rows, self.cols) {
            return Err(crate::linalg::LinalgError::ShapeMismatch {
                expected: (self.rows, self.cols),
                found: matrix.shape(),
            }
            .into());
        }
        self.terms.push(AffineTerm {
            name: name.into(),
            theta,
            matrix,
        });
        Ok(())
    }

    pub fn with(
        mut self,
        name: impl Into<String>,
        theta: Theta,
        matrix: CsrMatrix,
    ) -> Result<Self> {
        self.push(name, theta, matrix)?;
        Ok(self)
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn terms(&self) -> &[AffineTerm] {
        &self.terms
    }

    pub fn n_terms(&self) -> usize {
        self.terms.len()
    }

    /// Appends the terms of `other` scaled by `scale`.
    pub fn extend_scaled(&mut self, other: &AffineOperator, scale: f64) -> Result<()> {
        if other.shape() != self.shape() {
            return Err(AssemblyError::Linalg(
                crate::linalg::LinalgError::ShapeMismatch {
                    expected: self.shape(),
                    found: other.shape(),
                },
            ));
        }
        for t in &other.terms {
            let m = if scale == 1.0 {
                t.matrix.clone()
            } else {
                t.matrix.scaled(scale)
            };
            self.terms.push(AffineTerm {
                name: t.name.clone(),
                theta: t.theta.clone(),
                matrix: m,
            });
        }
        Ok(())
    }

    pub fn map_matrices(
        &self,
        rows: usize,
        cols: usize,
        f: impl Fn(&CsrMatrix) -> CsrMatrix,
    ) -> Self {
        Self {
            rows,
            cols,
            terms: self
                .terms
                .iter()
                .map(|t| AffineTerm {
                    name: t.name.clone(),
                    theta: t.theta.clone(),
                    matrix: f(&t.matrix),
                })
                .collect(),
        }
    }

    pub fn submatrix(&self, rows: &[usize], cols: &[usize]) -> Self {
        self.map_matrices(rows.len(), cols.len(), |m| m.submatrix(rows, cols))
    }

    pub fn transpose(&self) -> Self {
        self.map_matrices(self.cols, self.rows, |m| m.transpose())
    }

    pub fn scaled(&self, s: f64) -> Self {
        self.map_matrices(self.rows, self.cols, |m| m.scaled(s))
    }

    pub fn evaluate(&self, mu: &[f64]) -> CsrMatrix {
        if self.terms.is_empty() {
            return CsrMatrix::zeros(self.rows, self.cols);
        }
        let coeffs: Vec<f64> = self.terms.iter().map(|t| t.theta.eval(mu)).collect();
        let pairs: Vec<(f64, &CsrMatrix)> = coeffs
            .iter()
            .copied()
            .zip(self.terms.iter().map(|t| &t.matrix))
            .collect();
        CsrMatrix::linear_combination(&pairs).expect("terms share a shape")
    }

    /// Affine vector `θ_q · A_q x`.
    pub fn apply(&self, x: &[f64]) -> AffineVector {
        AffineVector {
            len: self.rows,
            terms: self
                .terms
                .iter()
                .map(|t| (t.name.clone(), t.theta.clone(), t.matrix.mul_vec(x)))
                .collect(),
        }
    }
}

/// `Σ_q θ_q(μ) v_q`.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct AffineVector {
    len: usize,
    terms: Vec<(String, Theta, Vec<f64>)>,
}

impl AffineVector {
    pub fn new(len: usize) -> Self {
        Self {
            len,
            terms: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn terms(&self) -> &[(String, Theta, Vec<f64>)] {
        &self.terms
    }

    pub fn scaled(mut self, s: f64) -> Self {
        for (_, _, v) in &mut self.terms {
            v.iter_mut().for_each(|x| *x *= s);
        }
        self
    }

    pub fn push(&mut self, name: impl Into<String>, theta: Theta, v: Vec<f64>) {
        assert_eq!(v.len(), self.len, "affine vector term length");
        self.terms.push((name.into(), theta, v));
    }

    pub fn evaluate(&self, mu: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.len];
        for (_, theta, v) in &self.terms {
            let c = theta.eval(mu);
            out.iter_mut().zip(v).for_each(|(o, x)| *o += c * x);
        }
        out
    }
}
