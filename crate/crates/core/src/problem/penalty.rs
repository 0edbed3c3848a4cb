use std::sync::Arc;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::{OcpProblem, ScalarField};
use crate::error::{check_dim, Error, Result};

/// Penalty function `h`, with `h(z) = 0` for `z ≤ 0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PenaltyFn {
    /// `h(z) = z²` for `z > 0`.
    SquaredHinge,
}

impl PenaltyFn {
    pub fn value(self, z: f64) -> f64 {
        match self {
            PenaltyFn::SquaredHinge => {
                if z > 0.0 {
                    z * z
                } else {
                    0.0
                }
            }
        }
    }

    pub fn derivative(self, z: f64) -> f64 {
        match self {
            PenaltyFn::SquaredHinge => {
                if z > 0.0 {
                    2.0 * z
                } else {
                    0.0
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PenaltyConfig {
    pub weights: Vec<f64>,
    pub penalty_fn: PenaltyFn,
    pub omega_max: f64,
}

impl PenaltyConfig {
    pub fn validate(&self) -> Result<()> {
        for &w in &self.weights {
            if !(0.0..=self.omega_max).contains(&w) {
                return Err(Error::Config(format!(
                    "penalty weight {w} outside [0, {}]",
                    self.omega_max
                )));
            }
        }
        Ok(())
    }
}

/// `L⁰_ω(s,x) = L⁰(s,x) + Σ ωᵢ h(cᵢ(s,x))`.
struct PenalizedCost {
    base: Arc<dyn ScalarField>,
    constraints: Vec<Arc<dyn ScalarField>>,
    weights: Vec<f64>,
    penalty: PenaltyFn,
}

impl ScalarField for PenalizedCost {
    fn eval(&self, s: f64, x: &DVector<f64>) -> f64 {
        self.base.eval(s, x)
            + self
                .constraints
                .iter()
                .zip(&self.weights)
                .map(|(c, w)| w * self.penalty.value(c.eval(s, x)))
                .sum::<f64>()
    }

    fn gradient(&self, s: f64, x: &DVector<f64>) -> DVector<f64> {
        let mut g = self.base.gradient(s, x);
        for (c, w) in self.constraints.iter().zip(&self.weights) {
            let dh = self.penalty.derivative(c.eval(s, x));
            if dh != 0.0 {
                g += c.gradient(s, x) * (w * dh);
            }
        }
        g
    }

    fn is_analytic(&self) -> bool {
        self.base.is_analytic() && self.constraints.iter().all(|c| c.is_analytic())
    }
}

/// Fold state constraints `cᵢ(s,x) ≤ 0` into the running cost `L⁰`.
pub fn penalize_state_constraints(
    problem: &OcpProblem,
    constraints: Vec<Arc<dyn ScalarField>>,
    config: &PenaltyConfig,
) -> Result<OcpProblem> {
    config.validate()?;
    check_dim("penalty weights", constraints.len(), config.weights.len())?;
    let cost = PenalizedCost {
        base: problem.cost_l()[0].clone(),
        constraints,
        weights: config.weights.clone(),
        penalty: config.penalty_fn,
    };
    Ok(problem.clone().with_running_cost(Arc::new(cost)))
}
