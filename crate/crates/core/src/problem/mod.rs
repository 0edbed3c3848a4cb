//! Continuous-time optimal control problems in control-affine,
//! cost-decomposed form:
//!
//! ```text
//! min  ∫ G(s,u) + H(s,x) + L⁰(s,x) + Σ uⁱ Lⁱ(s,x) ds
//! s.t. ẋ = f₀(s,x) + Σ uⁱ fᵢ(s,x),  x(0) = x⁰,  g(x(t_f)) = 0,  u ∈ U
//! ```

pub mod config;
mod dubins;
pub mod fields;
mod lqr;
mod penalty;
mod sphere;

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

pub use dubins::{make_dubins, obstacle_gradient, obstacle_potential, DubinsParams, FinalAngle, ObstacleTerm};
pub use fields::{ConvexFunction, ScalarField, VectorField, VectorMap};
pub use lqr::{make_lqr, LqrSpec};
pub use penalty::{penalize_state_constraints, PenaltyConfig, PenaltyFn};
pub use sphere::{make_sphere_rotation, DirectionTarget, SphereSpec};

/// Axis-aligned control box `U = [lower, upper]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlSet {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl ControlSet {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        check_dim("control set bounds", lower.len(), upper.len())?;
        for (l, u) in lower.iter().zip(&upper) {
            if !(l.is_finite() && u.is_finite()) {
                return Err(Error::Config("control set must be bounded".into()));
            }
            if l > u {
                return Err(Error::Config(format!("empty control set: {l} > {u}")));
            }
        }
        Ok(ControlSet { lower, upper })
    }

    /// `[-bound, bound]^m`.
    pub fn symmetric(m: usize, bound: f64) -> Result<Self> {
        ControlSet::new(vec![-bound; m], vec![bound; m])
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn clamp(&self, i: usize, v: f64) -> f64 {
        v.clamp(self.lower[i], self.upper[i])
    }

    pub fn contains(&self, u: &DVector<f64>, tol: f64) -> bool {
        u.iter()
            .enumerate()
            .all(|(i, &v)| v >= self.lower[i] - tol && v <= self.upper[i] + tol)
    }
}

/// Circular obstacle of the planar examples.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObstacleSpec {
    pub center: [f64; 2],
    pub radius: f64,
}

impl ObstacleSpec {
    pub fn new(center: [f64; 2], radius: f64) -> Result<Self> {
        if !(radius > 0.0) {
            return Err(Error::Config(format!("obstacle radius must be positive, got {radius}")));
        }
        Ok(ObstacleSpec { center, radius })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum FinalTime {
    Fixed(f64),
    Free,
}

/// Marks the extra state carrying the final time in a time-scaled problem.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScaledTime {
    /// Index of the final-time state.
    pub index: usize,
    /// Frozen iterate value `t_f^k`.
    pub reference: f64,
    /// Horizon cap `T` of the original problem.
    pub cap: f64,
}

/// Raw ingredients of an [`OcpProblem`]; validated by [`OcpProblem::new`].
pub struct ProblemParts {
    pub name: String,
    pub state_dim: usize,
    pub control_dim: usize,
    pub drift: Arc<dyn VectorField>,
    pub control_fields: Vec<Arc<dyn VectorField>>,
    pub cost_g: Arc<dyn ConvexFunction>,
    pub cost_h: Arc<dyn ConvexFunction>,
    /// `L⁰, L¹, …, Lᵐ`.
    pub cost_l: Vec<Arc<dyn ScalarField>>,
    pub boundary: Arc<dyn VectorMap>,
    pub control_set: ControlSet,
    pub horizon_cap: f64,
    pub initial_state: DVector<f64>,
    /// Components of `x(0)` that are prescribed; `None` means all of them.
    pub initial_fixed: Option<Vec<bool>>,
    pub final_time: FinalTime,
    pub state_bound: f64,
}

/// A validated control-affine optimal control problem. Immutable and
/// shareable across threads.
#[derive(Clone)]
pub struct OcpProblem {
    name: String,
    state_dim: usize,
    control_dim: usize,
    drift: Arc<dyn VectorField>,
    control_fields: Vec<Arc<dyn VectorField>>,
    cost_g: Arc<dyn ConvexFunction>,
    cost_h: Arc<dyn ConvexFunction>,
    cost_l: Vec<Arc<dyn ScalarField>>,
    boundary: Arc<dyn VectorMap>,
    control_set: ControlSet,
    horizon_cap: f64,
    initial_state: DVector<f64>,
    initial_fixed: Vec<bool>,
    final_time: FinalTime,
    state_bound: f64,
    scaled_time: Option<ScaledTime>,
}

impl std::fmt::Debug for OcpProblem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("OcpProblem")
            .field("name", &self.name)
            .field("state_dim", &self.state_dim)
            .field("control_dim", &self.control_dim)
            .field("final_time", &self.final_time)
            .field("horizon_cap", &self.horizon_cap)
            .finish_non_exhaustive()
    }
}

impl OcpProblem {
    pub fn new(parts: ProblemParts) -> Result<Self> {
        let ProblemParts {
            name,
            state_dim: n,
            control_dim: m,
            drift,
            control_fields,
            cost_g,
            cost_h,
            cost_l,
            boundary,
            control_set,
            horizon_cap,
            initial_state,
            initial_fixed,
            final_time,
            state_bound,
        } = parts;
        if n == 0 || m == 0 {
            return Err(Error::Config("state and control dimensions must be positive".into()));
        }
        check_dim("control fields", m, control_fields.len())?;
        check_dim("running cost terms L⁰..Lᵐ", m + 1, cost_l.len())?;
        check_dim("control set", m, control_set.dim())?;
        check_dim("initial state", n, initial_state.len())?;
        let initial_fixed = initial_fixed.unwrap_or_else(|| vec![true; n]);
        check_dim("initial mask", n, initial_fixed.len())?;
        if !(horizon_cap > 0.0) {
            return Err(Error::Config("horizon cap must be positive".into()));
        }
        if let FinalTime::Fixed(tf) = final_time {
            if !(tf > 0.0 && tf <= horizon_cap) {
                return Err(Error::Config(format!("fixed final time {tf} outside (0, {horizon_cap}]")));
            }
        }
        if !(state_bound > 0.0) {
            return Err(Error::Config("state bound must be positive".into()));
        }
        let problem = OcpProblem {
            name,
            state_dim: n,
            control_dim: m,
            drift,
            control_fields,
            cost_g,
            cost_h,
            cost_l,
            boundary,
            control_set,
            horizon_cap,
            initial_state,
            initial_fixed,
            final_time,
            state_bound,
            scaled_time: None,
        };
        let g0 = problem.boundary.eval(&problem.initial_state);
        if problem.final_time == FinalTime::Free && g0.norm() == 0.0 {
            return Err(Error::Config(
                "boundary map vanishes at the initial state (trivial t_f = 0 solution)".into(),
            ));
        }
        problem.spot_check_convexity(31, 64)?;
        Ok(problem)
    }

    pub(crate) fn with_scaled_time(mut self, scaled: ScaledTime) -> Self {
        self.scaled_time = Some(scaled);
        self
    }

    /// Random convexity test of `G(s, ·)` on the control box.
    fn spot_check_convexity(&self, seed: u64, samples: usize) -> Result<()> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = self.control_dim;
        let sample_u = |rng: &mut ChaCha8Rng| {
            DVector::from_fn(m, |i, _| {
                let (l, u) = (self.control_set.lower[i], self.control_set.upper[i]);
                l + (u - l) * rng.random::<f64>()
            })
        };
        let cap = match self.final_time {
            FinalTime::Fixed(tf) => tf,
            FinalTime::Free => self.horizon_cap,
        };
        for _ in 0..samples {
            let s = cap * rng.random::<f64>();
            let u1 = sample_u(&mut rng);
            let u2 = sample_u(&mut rng);
            let theta = rng.random::<f64>();
            let mid = &u1 * theta + &u2 * (1.0 - theta);
            let lhs = self.cost_g.eval(s, &mid);
            let rhs = theta * self.cost_g.eval(s, &u1) + (1.0 - theta) * self.cost_g.eval(s, &u2);
            if lhs > rhs + 1e-10 {
                return Err(Error::Config(format!(
                    "control cost G fails the convexity spot check at s = {s}"
                )));
            }
        }
        Ok(())
    }

    pub fn name(&self) -> &str {
        &self.name
    }
    pub fn state_dim(&self) -> usize {
        self.state_dim
    }
    pub fn control_dim(&self) -> usize {
        self.control_dim
    }
    pub fn drift(&self) -> &Arc<dyn VectorField> {
        &self.drift
    }
    pub fn control_fields(&self) -> &[Arc<dyn VectorField>] {
        &self.control_fields
    }
    pub fn cost_g(&self) -> &Arc<dyn ConvexFunction> {
        &self.cost_g
    }
    pub fn cost_h(&self) -> &Arc<dyn ConvexFunction> {
        &self.cost_h
    }
    pub fn cost_l(&self) -> &[Arc<dyn ScalarField>] {
        &self.cost_l
    }
    pub fn boundary(&self) -> &Arc<dyn VectorMap> {
        &self.boundary
    }
    pub fn control_set(&self) -> &ControlSet {
        &self.control_set
    }
    pub fn horizon_cap(&self) -> f64 {
        self.horizon_cap
    }
    pub fn initial_state(&self) -> &DVector<f64> {
        &self.initial_state
    }
    pub fn initial_fixed(&self) -> &[bool] {
        &self.initial_fixed
    }
    pub fn final_time(&self) -> FinalTime {
        self.final_time
    }
    pub fn state_bound(&self) -> f64 {
        self.state_bound
    }
    pub fn scaled_time(&self) -> Option<ScaledTime> {
        self.scaled_time
    }

    /// Replace `L⁰` (used by the penalization builder).
    pub(crate) fn with_running_cost(mut self, l0: Arc<dyn ScalarField>) -> Self {
        self.cost_l[0] = l0;
        self
    }

    /// Whether `G` and `H` are both exactly quadratic.
    pub fn quadratic_costs(&self) -> bool {
        self.cost_g.is_quadratic() && self.cost_h.is_quadratic()
    }

    /// Whether every supplied evaluator has analytic derivatives.
    pub fn all_analytic(&self) -> bool {
        self.drift.is_analytic()
            && self.control_fields.iter().all(|f| f.is_analytic())
            && self.cost_l.iter().all(|l| l.is_analytic())
    }

    /// `f(s, x, u) = f₀(s,x) + Σ uⁱ fᵢ(s,x)`.
    pub fn dynamics(&self, s: f64, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        let mut out = self.drift.eval(s, x);
        for (i, f) in self.control_fields.iter().enumerate() {
            if u[i] != 0.0 {
                out += f.eval(s, x) * u[i];
            }
        }
        out
    }

    /// `∂f/∂x = ∂f₀/∂x + Σ uⁱ ∂fᵢ/∂x`.
    pub fn dynamics_jacobian(&self, s: f64, x: &DVector<f64>, u: &DVector<f64>) -> DMatrix<f64> {
        let mut out = self.drift.jacobian(s, x);
        for (i, f) in self.control_fields.iter().enumerate() {
            if u[i] != 0.0 {
                out += f.jacobian(s, x) * u[i];
            }
        }
        out
    }

    /// Matrix whose columns are the control fields `fᵢ(s, x)`.
    pub fn control_matrix(&self, s: f64, x: &DVector<f64>) -> DMatrix<f64> {
        let cols: Vec<_> = self.control_fields.iter().map(|f| f.eval(s, x)).collect();
        DMatrix::from_columns(&cols)
    }

    /// Running cost `f⁰(s, x, u)`.
    pub fn running_cost(&self, s: f64, x: &DVector<f64>, u: &DVector<f64>) -> f64 {
        let mut c = self.cost_g.eval(s, u) + self.cost_h.eval(s, x) + self.cost_l[0].eval(s, x);
        for i in 0..self.control_dim {
            if u[i] != 0.0 {
                c += u[i] * self.cost_l[i + 1].eval(s, x);
            }
        }
        c
    }

    /// `∂f⁰/∂x`.
    pub fn running_cost_gradient(&self, s: f64, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        let mut g = self.cost_h.gradient(s, x) + self.cost_l[0].gradient(s, x);
        for i in 0..self.control_dim {
            if u[i] != 0.0 {
                g += self.cost_l[i + 1].gradient(s, x) * u[i];
            }
        }
        g
    }

    /// Final time used to size the transcription grid for fixed-time
    /// problems, or `None` for free final time.
    pub fn fixed_final_time(&self) -> Option<f64> {
        match self.final_time {
            FinalTime::Fixed(tf) => Some(tf),
            FinalTime::Free => None,
        }
    }

    /// Components of the state covered by the trust region and the
    /// boundedness check (everything except a time-scaling state).
    pub fn physical_states(&self) -> impl Iterator<Item = usize> + Clone + '_ {
        let skip = self.scaled_time.map(|t| t.index);
        (0..self.state_dim).filter(move |&i| Some(i) != skip)
    }
}
