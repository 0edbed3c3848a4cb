//! Operator-splitting solver for the transcribed convex programs.
//!
//! Problems have the form
//!
//! ```text
//! min ½ zᵀPz + qᵀz   s.t.  A z = b,  lower ≤ z ≤ upper,  Σ wᵢ (z[kᵢ] − cᵢ)² ≤ Δ
//! ```
//!
//! and are solved by ADMM on the stacked constraint `Cz ∈ K`, with Ruiz
//! equilibration, residual-balanced step sizes and an active-set polishing
//! step. Duals follow the convention
//!
//! ```text
//! Pz + q + Aᵀy + y_box + 2μ W (z − c) = 0,
//! ```
//!
//! so a binding lower bound has `y_box ≤ 0`, a binding upper bound `≥ 0`,
//! and `μ ≥ 0`.

mod admm;
mod polish;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::linalg::CscMatrix;
use crate::transcription::{BallSet, ConvexSubproblem};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverSettings {
    pub eps_abs: f64,
    pub eps_rel: f64,
    pub max_iter: usize,
    pub rho: f64,
    pub sigma: f64,
    /// Over-relaxation factor in `(0, 2)`.
    pub alpha: f64,
    pub adaptive_rho: bool,
    pub polish: bool,
    pub scaling_iterations: usize,
    /// Residuals are evaluated every this many iterations (and at the first).
    pub check_interval: usize,
    pub eps_infeasible: f64,
}

impl Default for SolverSettings {
    fn default() -> Self {
        SolverSettings {
            eps_abs: 1e-8,
            eps_rel: 1e-8,
            max_iter: 20000,
            rho: 1.0,
            sigma: 1e-6,
            alpha: 1.6,
            adaptive_rho: true,
            polish: true,
            scaling_iterations: 10,
            check_interval: 5,
            eps_infeasible: 1e-8,
        }
    }
}

impl SolverSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.eps_abs >= 0.0 && self.eps_rel >= 0.0 && self.eps_abs + self.eps_rel > 0.0) {
            return Err(Error::Config("solver tolerances must be nonnegative and not both zero".into()));
        }
        if !(self.rho > 0.0 && self.sigma > 0.0) {
            return Err(Error::Config("rho and sigma must be positive".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 2.0) {
            return Err(Error::Config("relaxation alpha must lie in (0, 2)".into()));
        }
        if self.check_interval == 0 {
            return Err(Error::Config("check interval must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolverStatus {
    Optimal,
    MaxIter,
    Infeasible,
}

/// Solver output. Duals satisfy the stationarity convention of the module.
#[derive(Debug, Clone)]
pub struct SolverSolution {
    pub primal: DVector<f64>,
    pub duals_equality: DVector<f64>,
    /// Per-variable bound multipliers (zero for unbounded variables).
    pub duals_box: DVector<f64>,
    /// Ball multiplier `μ`.
    pub duals_ball: f64,
    pub objective: f64,
    pub status: SolverStatus,
    pub iterations: usize,
    /// `(primal_res, dual_res)` in the unscaled problem, infinity norms.
    pub residuals: (f64, f64),
    pub polished: bool,
    /// Stacked-constraint slack and dual, kept for warm starts.
    pub(crate) slack: DVector<f64>,
    pub(crate) dual_rows: DVector<f64>,
}

/// Borrowed view of a quadratic program in the module's form.
#[derive(Debug, Clone, Copy)]
pub struct QpProblem<'a> {
    /// Full symmetric `P`.
    pub p: &'a CscMatrix,
    pub q: &'a DVector<f64>,
    pub a_eq: &'a CscMatrix,
    pub b_eq: &'a DVector<f64>,
    pub lower: &'a DVector<f64>,
    pub upper: &'a DVector<f64>,
    pub ball: Option<&'a BallSet>,
}

impl<'a> QpProblem<'a> {
    pub fn from_subproblem(sub: &'a ConvexSubproblem) -> Self {
        QpProblem {
            p: &sub.p,
            q: &sub.q,
            a_eq: &sub.a_eq,
            b_eq: &sub.b_eq,
            lower: &sub.lower,
            upper: &sub.upper,
            ball: Some(&sub.ball),
        }
    }

    pub fn variable_count(&self) -> usize {
        self.q.len()
    }

    fn validate(&self) -> Result<()> {
        let n = self.q.len();
        check_dim("P rows", n, self.p.nrows)?;
        check_dim("P columns", n, self.p.ncols)?;
        check_dim("A columns", n, self.a_eq.ncols)?;
        check_dim("b length", self.a_eq.nrows, self.b_eq.len())?;
        check_dim("lower bounds", n, self.lower.len())?;
        check_dim("upper bounds", n, self.upper.len())?;
        if self.lower.iter().zip(self.upper.iter()).any(|(l, u)| l > u) {
            return Err(Error::Config("box bounds with lower > upper".into()));
        }
        if let Some(b) = self.ball {
            check_dim("ball weights", b.indices.len(), b.weights.len())?;
            check_dim("ball center", b.indices.len(), b.center.len())?;
            if !(b.radius > 0.0) {
                return Err(Error::Config("ball radius must be positive".into()));
            }
            if b.weights.iter().any(|&w| !(w > 0.0)) || b.indices.iter().any(|&i| i >= n) {
                return Err(Error::Config("ball weights must be positive with valid indices".into()));
            }
            let mut seen = vec![false; n];
            for &i in &b.indices {
                if std::mem::replace(&mut seen[i], true) {
                    return Err(Error::Config("ball indices must be distinct".into()));
                }
            }
        }
        Ok(())
    }

    /// `½ zᵀPz + qᵀz`.
    pub fn objective(&self, z: &DVector<f64>) -> f64 {
        0.5 * z.dot(&self.p.mul_vec(z)) + self.q.dot(z)
    }

    /// Stationarity residual `Pz + q + Aᵀy + y_box + 2μW(z − c)`.
    pub fn stationarity(&self, z: &DVector<f64>, y: &DVector<f64>, y_box: &DVector<f64>, mu: f64) -> DVector<f64> {
        let mut r = self.p.mul_vec(z) + self.q + self.a_eq.tr_mul_vec(y) + y_box;
        if let Some(b) = self.ball {
            for ((&i, &w), &c) in b.indices.iter().zip(&b.weights).zip(&b.center) {
                r[i] += 2.0 * mu * w * (z[i] - c);
            }
        }
        r
    }

    /// Largest violation of any constraint (ball measured in `√`-units).
    pub fn primal_violation(&self, z: &DVector<f64>) -> f64 {
        let mut v = (self.a_eq.mul_vec(z) - self.b_eq).amax();
        for i in 0..z.len() {
            v = v.max(self.lower[i] - z[i]).max(z[i] - self.upper[i]);
        }
        if let Some(b) = self.ball {
            v = v.max(b.value(z).sqrt() - b.radius.sqrt());
        }
        v
    }
}

/// Solve a transcribed subproblem.
pub fn solve(sub: &ConvexSubproblem, settings: &SolverSettings, warm_start: Option<&SolverSolution>) -> Result<SolverSolution> {
    let mut sol = solve_qp(&QpProblem::from_subproblem(sub), settings, warm_start)?;
    sol.objective += sub.cost_constant;
    Ok(sol)
}

/// Solve a quadratic program given as a [`QpProblem`].
pub fn solve_qp(qp: &QpProblem<'_>, settings: &SolverSettings, warm_start: Option<&SolverSolution>) -> Result<SolverSolution> {
    settings.validate()?;
    qp.validate()?;
    admm::run(qp, settings, warm_start)
}

/// Initial-condition multiplier `γ⁰ ≈ p(0)`.
///
/// Under the module's dual convention and defects written as
/// `x_{j+1} − x_j − …`, the multiplier of the rows `x₀ = x⁰` converges to the
/// PMP costate with `p⁰ = −1` (no sign flip, no scaling).
pub fn extract_initial_costate(solution: &SolverSolution, sub: &ConvexSubproblem) -> Result<DVector<f64>> {
    if solution.status != SolverStatus::Optimal {
        return Err(Error::NotOptimal(format!("solver status {:?}", solution.status)));
    }
    sub.initial_multiplier(&solution.duals_equality)
}
