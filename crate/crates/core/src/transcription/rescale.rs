//! Free-final-time reformulation on the normalized interval `s̃ ∈ [0, 1]`.
//!
//! The final time becomes an extra state `τ` with `τ̇ = 0` and free initial
//! value; every vector field is multiplied by `τ`. Inside the fields the
//! physical time argument is taken as `t_f^k · s̃`.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::trajectory::{interpolate_rows, DiscreteTrajectory};
use crate::error::{check_dim, Error, Result};
use crate::problem::{ConvexFunction, FinalTime, OcpProblem, ProblemParts, ScalarField, ScaledTime, VectorField, VectorMap};

/// How the running cost sees the final-time state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum TimeCostCoupling {
    /// Cost factor `τ` replaced by the frozen `t_f^k`; the cost carries no
    /// sensitivity to `τ` at all.
    Frozen,
    /// Cost factor frozen in front of `G` and `H`, plus the first-order
    /// correction `(τ − t_f^k)(G(u_k) + H(x))` and `τ·Lⁱ` for the
    /// linearized terms, so the subproblem sees `∂(τ f⁰)/∂τ` at the iterate.
    #[default]
    Linearized,
}

/// `τ · f(t_f^k s̃, x)` on the augmented state `(x, τ)`.
struct ScaledField {
    inner: Arc<dyn VectorField>,
    n: usize,
    reference: f64,
}

impl VectorField for ScaledField {
    fn eval(&self, s: f64, z: &DVector<f64>) -> DVector<f64> {
        let x = z.rows(0, self.n).into_owned();
        let f = self.inner.eval(self.reference * s, &x);
        let mut out = DVector::zeros(self.n + 1);
        out.rows_mut(0, self.n).copy_from(&(f * z[self.n]));
        out
    }

    fn jacobian(&self, s: f64, z: &DVector<f64>) -> DMatrix<f64> {
        let x = z.rows(0, self.n).into_owned();
        let s = self.reference * s;
        let mut j = DMatrix::zeros(self.n + 1, self.n + 1);
        j.view_mut((0, 0), (self.n, self.n))
            .copy_from(&(self.inner.jacobian(s, &x) * z[self.n]));
        j.view_mut((0, self.n), (self.n, 1)).copy_from(&self.inner.eval(s, &x));
        j
    }

    fn is_analytic(&self) -> bool {
        self.inner.is_analytic()
    }
}

/// `factor · G(t_f^k s̃, v)` or `factor · H(t_f^k s̃, x)`.
struct ScaledCost {
    inner: Arc<dyn ConvexFunction>,
    factor: f64,
    reference: f64,
    /// Leading components passed to `inner` (the rest is ignored).
    n: usize,
}

impl ConvexFunction for ScaledCost {
    fn eval(&self, s: f64, v: &DVector<f64>) -> f64 {
        self.factor * self.inner.eval(self.reference * s, &v.rows(0, self.n).into_owned())
    }

    fn gradient(&self, s: f64, v: &DVector<f64>) -> DVector<f64> {
        let g = self.inner.gradient(self.reference * s, &v.rows(0, self.n).into_owned());
        let mut out = DVector::zeros(v.len());
        out.rows_mut(0, self.n).copy_from(&(g * self.factor));
        out
    }

    fn hessian(&self, s: f64, v: &DVector<f64>) -> DMatrix<f64> {
        let h = self.inner.hessian(self.reference * s, &v.rows(0, self.n).into_owned());
        let mut out = DMatrix::zeros(v.len(), v.len());
        out.view_mut((0, 0), (self.n, self.n)).copy_from(&(h * self.factor));
        out
    }

    fn is_quadratic(&self) -> bool {
        self.inner.is_quadratic()
    }

    fn diagonal_quadratic(&self) -> Option<DVector<f64>> {
        let d = self.inner.diagonal_quadratic()? * self.factor;
        if d.len() == self.n {
            Some(d)
        } else {
            None
        }
    }
}

/// Augmented running-cost term `a(τ) · L(t_f^k s̃, x) + (τ − t_f^k) · c(s̃, x)`
/// with `a(τ) = τ` or the frozen `t_f^k`, and an optional correction
/// `c = G(u_k(s̃)) + H(x)` that turns the cost factor into its linearization.
struct ScaledScalar {
    inner: Arc<dyn ScalarField>,
    n: usize,
    reference: f64,
    linear_in_tau: bool,
    correction: Option<TimeCorrection>,
}

struct TimeCorrection {
    cost_g: Arc<dyn ConvexFunction>,
    cost_h: Arc<dyn ConvexFunction>,
    /// Iterate controls `u_k` on the normalized grid, `N × m`.
    controls: DMatrix<f64>,
}

impl TimeCorrection {
    fn eval(&self, s: f64, reference: f64, x: &DVector<f64>) -> f64 {
        let u = interpolate_rows(&self.controls, s);
        self.cost_g.eval(reference * s, &u) + self.cost_h.eval(reference * s, x)
    }
}

impl ScalarField for ScaledScalar {
    fn eval(&self, s: f64, z: &DVector<f64>) -> f64 {
        let x = z.rows(0, self.n).into_owned();
        let tau = z[self.n];
        let a = if self.linear_in_tau { tau } else { self.reference };
        let mut v = a * self.inner.eval(self.reference * s, &x);
        if let Some(c) = &self.correction {
            v += (tau - self.reference) * c.eval(s, self.reference, &x);
        }
        v
    }

    fn gradient(&self, s: f64, z: &DVector<f64>) -> DVector<f64> {
        let x = z.rows(0, self.n).into_owned();
        let tau = z[self.n];
        let t = self.reference * s;
        let a = if self.linear_in_tau { tau } else { self.reference };
        let mut out = DVector::zeros(self.n + 1);
        let mut gx = self.inner.gradient(t, &x) * a;
        if self.linear_in_tau {
            out[self.n] = self.inner.eval(t, &x);
        }
        if let Some(c) = &self.correction {
            out[self.n] += c.eval(s, self.reference, &x);
            gx += c.cost_h.gradient(t, &x) * (tau - self.reference);
        }
        out.rows_mut(0, self.n).copy_from(&gx);
        out
    }

    fn is_analytic(&self) -> bool {
        self.inner.is_analytic()
    }
}

/// `g(x)` evaluated on the leading `n` components.
struct LeadingMap {
    inner: Arc<dyn VectorMap>,
    n: usize,
}

impl VectorMap for LeadingMap {
    fn out_dim(&self) -> usize {
        self.inner.out_dim()
    }

    fn eval(&self, z: &DVector<f64>) -> DVector<f64> {
        self.inner.eval(&z.rows(0, self.n).into_owned())
    }

    fn jacobian(&self, z: &DVector<f64>) -> DMatrix<f64> {
        let j = self.inner.jacobian(&z.rows(0, self.n).into_owned());
        let mut out = DMatrix::zeros(j.nrows(), self.n + 1);
        out.view_mut((0, 0), (j.nrows(), self.n)).copy_from(&j);
        out
    }
}

/// Augmented fixed-time problem on `[0, 1]` linearized around `iterate`.
pub fn rescale_free_time(problem: &OcpProblem, iterate: &DiscreteTrajectory, coupling: TimeCostCoupling) -> Result<OcpProblem> {
    if problem.final_time() != FinalTime::Free {
        return Err(Error::Usage("time rescaling applies to free-final-time problems only".into()));
    }
    check_dim("iterate state dimension", problem.state_dim(), iterate.state_dim())?;
    check_dim("iterate control dimension", problem.control_dim(), iterate.control_dim())?;
    let n = problem.state_dim();
    let tf_k = iterate.final_time;
    let scale = |f: &Arc<dyn VectorField>| -> Arc<dyn VectorField> {
        Arc::new(ScaledField {
            inner: f.clone(),
            n,
            reference: tf_k,
        })
    };
    let linear = coupling == TimeCostCoupling::Linearized;
    let cost_l = problem
        .cost_l()
        .iter()
        .enumerate()
        .map(|(i, l)| {
            let correction = (linear && i == 0).then(|| TimeCorrection {
                cost_g: problem.cost_g().clone(),
                cost_h: problem.cost_h().clone(),
                controls: iterate.controls.clone(),
            });
            Arc::new(ScaledScalar {
                inner: l.clone(),
                n,
                reference: tf_k,
                linear_in_tau: linear,
                correction,
            }) as Arc<dyn ScalarField>
        })
        .collect();
    let mut initial_state = DVector::zeros(n + 1);
    initial_state.rows_mut(0, n).copy_from(problem.initial_state());
    initial_state[n] = tf_k;
    let mut initial_fixed = problem.initial_fixed().to_vec();
    initial_fixed.push(false);
    let augmented = OcpProblem::new(ProblemParts {
        name: format!("{}-scaled", problem.name()),
        state_dim: n + 1,
        control_dim: problem.control_dim(),
        drift: scale(problem.drift()),
        control_fields: problem.control_fields().iter().map(scale).collect(),
        cost_g: Arc::new(ScaledCost {
            inner: problem.cost_g().clone(),
            factor: tf_k,
            reference: tf_k,
            n: problem.control_dim(),
        }),
        cost_h: Arc::new(ScaledCost {
            inner: problem.cost_h().clone(),
            factor: tf_k,
            reference: tf_k,
            n,
        }),
        cost_l,
        boundary: Arc::new(LeadingMap {
            inner: problem.boundary().clone(),
            n,
        }),
        control_set: problem.control_set().clone(),
        horizon_cap: 1.0,
        initial_state,
        initial_fixed: Some(initial_fixed),
        final_time: FinalTime::Fixed(1.0),
        state_bound: problem.state_bound(),
    })?;
    Ok(augmented.with_scaled_time(ScaledTime {
        index: n,
        reference: tf_k,
        cap: problem.horizon_cap(),
    }))
}

/// Iterate of the augmented problem: `τ` column equal to `t_f^k`, unit horizon.
pub fn augment_iterate(iterate: &DiscreteTrajectory) -> DiscreteTrajectory {
    let (rows, n) = iterate.states.shape();
    let mut states = DMatrix::from_element(rows, n + 1, iterate.final_time);
    states.view_mut((0, 0), (rows, n)).copy_from(&iterate.states);
    DiscreteTrajectory {
        grid: iterate.grid.clone(),
        states,
        controls: iterate.controls.clone(),
        final_time: 1.0,
    }
}
