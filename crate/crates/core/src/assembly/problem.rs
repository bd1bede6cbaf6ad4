use serde::{Deserialize, Serialize};

use super::{AssemblyError, Result};
use crate::mesh::{DomainId, Segment};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProblemId {
    GraetzSteady,
    GraetzParabolic,
    SquareSteady,
    SquareParabolic,
}

impl ProblemId {
    pub const ALL: [ProblemId; 4] = [
        ProblemId::GraetzSteady,
        ProblemId::GraetzParabolic,
        ProblemId::SquareSteady,
        ProblemId::SquareParabolic,
    ];

    pub fn domain(self) -> DomainId {
        match self {
            ProblemId::GraetzSteady | ProblemId::GraetzParabolic => DomainId::GraetzRect,
            ProblemId::SquareSteady | ProblemId::SquareParabolic => DomainId::UnitSquare,
        }
    }

    pub fn is_parabolic(self) -> bool {
        matches!(
            self,
            ProblemId::GraetzParabolic | ProblemId::SquareParabolic
        )
    }

    pub fn name(self) -> &'static str {
        match self {
            ProblemId::GraetzSteady => "graetz-steady",
            ProblemId::GraetzParabolic => "graetz-parabolic",
            ProblemId::SquareSteady => "square-steady",
            ProblemId::SquareParabolic => "square-parabolic",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|p| p.name() == name)
    }

    /// Number of parameter components.
    pub fn n_params(self) -> usize {
        match self.domain() {
            DomainId::GraetzRect => 1,
            DomainId::UnitSquare => 2,
        }
    }
}

/// Selection of the SUPG parameter `δ_K`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeltaRule {
    Constant(f64),
    /// `δ₁ h_K / ε` where the local Péclet number is at most 1, `δ₂` elsewhere.
    PecletSwitch {
        delta1: f64,
        delta2: f64,
    },
}

impl DeltaRule {
    pub fn delta(&self, peclet: f64, h: f64, epsilon: f64) -> f64 {
        match *self {
            DeltaRule::Constant(d) => d,
            DeltaRule::PecletSwitch { delta1, delta2 } => {
                if peclet <= 1.0 {
                    delta1 * h / epsilon
                } else {
                    delta2
                }
            }
        }
    }

    fn is_valid(&self) -> bool {
        match *self {
            DeltaRule::Constant(d) => d > 0.0 && d.is_finite(),
            DeltaRule::PecletSwitch { delta1, delta2 } => {
                delta1 > 0.0 && delta2 > 0.0 && delta1.is_finite() && delta2.is_finite()
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stabilization {
    Supg,
    None,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub t_final: f64,
    pub n_steps: usize,
}

impl TimeGrid {
    pub fn dt(&self) -> f64 {
        self.t_final / self.n_steps as f64
    }

    /// Nodes `t_1, …, t_{N_t}`.
    pub fn nodes(&self) -> Vec<f64> {
        (1..=self.n_steps).map(|i| i as f64 * self.dt()).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProblemDef {
    pub id: ProblemId,
    pub alpha: f64,
    pub delta_rule: DeltaRule,
    /// Constant desired state on the observation region.
    pub y_desired: f64,
    /// Dirichlet segments and their boundary values; untagged segments are natural.
    pub dirichlet_values: Vec<(Segment, f64)>,
    pub time: Option<TimeGrid>,
    pub parameter_box: Vec<(f64, f64)>,
}

impl ProblemDef {
    pub fn preset(id: ProblemId) -> Self {
        let seg = |k: u8, v: f64| (Segment(k), v);
        let (dirichlet_values, y_desired, parameter_box) = match id.domain() {
            DomainId::GraetzRect => (
                vec![
                    seg(1, 0.0),
                    seg(2, 1.0),
                    seg(4, 1.0),
                    seg(5, 0.0),
                    seg(6, 0.0),
                ],
                1.0,
                vec![(1e4, 1e6)],
            ),
            DomainId::UnitSquare => (
                vec![
                    seg(1, 1.0),
                    seg(2, 1.0),
                    seg(3, 0.0),
                    seg(4, 0.0),
                    seg(5, 0.0),
                ],
                0.5,
                vec![(1e4, 1e5), (0.0, 1.57)],
            ),
        };
        let time = id.is_parabolic().then_some(TimeGrid {
            t_final: 3.0,
            n_steps: 30,
        });
        Self {
            id,
            alpha: 0.01,
            delta_rule: DeltaRule::Constant(1.0),
            y_desired,
            dirichlet_values,
            time,
            parameter_box,
        }
    }

    pub fn domain(&self) -> DomainId {
        self.id.domain()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(AssemblyError::InvalidProblem(m));
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return bad(format!("alpha must be positive, got {}", self.alpha));
        }
        if !self.delta_rule.is_valid() {
            return bad(format!(
                "delta values must be positive, got {:?}",
                self.delta_rule
            ));
        }
        if self.parameter_box.len() != self.id.n_params() {
            return bad(format!(
                "parameter box has {} components, expected {}",
                self.parameter_box.len(),
                self.id.n_params()
            ));
        }
        for &(lo, hi) in &self.parameter_box {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return bad(format!("empty or non-finite parameter range [{lo}, {hi}]"));
            }
        }
        if !(self.parameter_box[0].0 > 0.0) {
            return bad("diffusion 1/mu_1 must be positive on the whole box".into());
        }
        match (self.id.is_parabolic(), &self.time) {
            (true, None) => return bad("parabolic problem without a time grid".into()),
            (true, Some(t)) if !(t.n_steps >= 1 && t.t_final > 0.0) => {
                return bad(format!("invalid time grid {t:?}"));
            }
            (false, Some(_)) => return bad("steady problem with a time grid".into()),
            _ => {}
        }
        Ok(())
    }

    pub fn check_parameter(&self, mu: &[f64]) -> Result<()> {
        if mu.len() != self.id.n_params() {
            return Err(AssemblyError::ParameterDimension {
                expected: self.id.n_params(),
                found: mu.len(),
            });
        }
        Ok(())
    }

    pub fn advection(&self, x: [f64; 2], mu: &[f64]) -> [f64; 2] {
        match self.domain() {
            DomainId::GraetzRect => [4.0 * x[1] * (1.0 - x[1]), 0.0],
            DomainId::UnitSquare => [mu[1].cos(), mu[1].sin()],
        }
    }

    pub fn diffusion(&self, mu: &[f64]) -> f64 {
        1.0 / mu[0]
    }

    pub fn desired_state(&self, _x: [f64; 2], _t: f64) -> f64 {
        self.y_desired
    }

    pub fn dirichlet_value(&self, segment: Segment) -> Option<f64> {
        self.dirichlet_values
            .iter()
            .find(|(s, _)| *s == segment)
            .map(|&(_, v)| v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_are_valid() {
        for id in ProblemId::ALL {
            let p = ProblemDef::preset(id);
            p.validate().unwrap();
            assert_eq!(ProblemId::from_name(id.name()), Some(id));
        }
    }

    #[test]
    fn invalid_definitions_rejected() {
        let mut p = ProblemDef::preset(ProblemId::GraetzSteady);
        p.alpha = 0.0;
        assert!(p.validate().is_err());
        let mut p = ProblemDef::preset(ProblemId::GraetzSteady);
        p.delta_rule = DeltaRule::Constant(-1.0);
        assert!(p.validate().is_err());
        let mut p = ProblemDef::preset(ProblemId::SquareSteady);
        p.parameter_box[0] = (0.0, 1.0);
        assert!(p.validate().is_err());
        let mut p = ProblemDef::preset(ProblemId::GraetzParabolic);
        p.time = None;
        assert!(p.validate().is_err());
    }

    #[test]
    fn peclet_switch_shape() {
        let rule = DeltaRule::PecletSwitch {
            delta1: 0.5,
            delta2: 1.0,
        };
        assert_eq!(rule.delta(10.0, 0.1, 1e-3), 1.0);
        assert!((rule.delta(0.5, 0.1, 1.0) - 0.05).abs() < 1e-15);
    }

    #[test]
    fn time_grid() {
        let t = ProblemDef::preset(ProblemId::GraetzParabolic).time.unwrap();
        assert!((t.dt() - 0.1).abs() < 1e-15);
        let nodes = t.nodes();
        assert_eq!(nodes.len(), 30);
        assert!((nodes[29] - 3.0).abs() < 1e-12);
    }
}
