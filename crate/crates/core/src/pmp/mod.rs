//! Pontryagin conditions as computable residuals.
//!
//! Everything here uses the normal-or-abnormal Hamiltonian
//!
//! ```text
//! H(s, x, p, p⁰, u) = pᵀ f(s, x, u) + p⁰ f⁰(s, x, u),   p⁰ ≤ 0,
//! ```
//!
//! so that optimal controls maximize `H`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::ode::rk4_step;
use crate::problem::{FinalTime, OcpProblem};
use crate::scp::ScpRun;

/// Default re-integration density relative to the candidate grid.
pub const DEFAULT_REFINEMENT: usize = 4;

/// Candidate extremal sampled on a grid of physical times.
#[derive(Debug, Clone, PartialEq)]
pub struct Extremal {
    pub final_time: f64,
    /// Physical sample times, `times[0] = 0`, `times[N−1] = final_time`.
    pub times: Vec<f64>,
    pub states: DMatrix<f64>,
    pub costates: DMatrix<f64>,
    /// `p⁰ ≤ 0`.
    pub abnormal_multiplier: f64,
    pub controls: DMatrix<f64>,
    /// `𝔭` with `p(t_f) = ∂g/∂xᵀ 𝔭`.
    pub boundary_multiplier: DVector<f64>,
}

impl Extremal {
    pub fn new(
        times: Vec<f64>,
        states: DMatrix<f64>,
        costates: DMatrix<f64>,
        abnormal_multiplier: f64,
        controls: DMatrix<f64>,
        boundary_multiplier: DVector<f64>,
    ) -> Result<Self> {
        let n = times.len();
        if n < 2 {
            return Err(Error::Config("an extremal needs at least two samples".into()));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Config("sample times must increase strictly".into()));
        }
        check_dim("state samples", n, states.nrows())?;
        check_dim("costate samples", n, costates.nrows())?;
        check_dim("control samples", n, controls.nrows())?;
        check_dim("costate dimension", states.ncols(), costates.ncols())?;
        if !(abnormal_multiplier <= 0.0) {
            return Err(Error::Config(format!("p⁰ must be nonpositive, got {abnormal_multiplier}")));
        }
        if abnormal_multiplier == 0.0 && costates.iter().all(|&v| v == 0.0) {
            return Err(Error::Degenerate("trivial multiplier (p, p⁰) = 0".into()));
        }
        Ok(Extremal {
            final_time: times[n - 1],
            times,
            states,
            costates,
            abnormal_multiplier,
            controls,
            boundary_multiplier,
        })
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn state(&self, j: usize) -> DVector<f64> {
        self.states.row(j).transpose()
    }

    pub fn costate(&self, j: usize) -> DVector<f64> {
        self.costates.row(j).transpose()
    }

    pub fn control(&self, j: usize) -> DVector<f64> {
        self.controls.row(j).transpose()
    }

    /// All multipliers scaled by `factor > 0`.
    pub fn scaled(&self, factor: f64) -> Extremal {
        Extremal {
            costates: &self.costates * factor,
            abnormal_multiplier: self.abnormal_multiplier * factor,
            boundary_multiplier: &self.boundary_multiplier * factor,
            ..self.clone()
        }
    }

    /// Scaled so that `‖(𝔭, p⁰)‖ = 1`.
    pub fn normalized(&self) -> Result<Extremal> {
        let norm = (self.boundary_multiplier.norm_squared() + self.abnormal_multiplier.powi(2)).sqrt();
        if !(norm > 0.0) {
            return Err(Error::Degenerate("(𝔭, p⁰) = 0 cannot be normalized".into()));
        }
        Ok(self.scaled(1.0 / norm))
    }

    /// Piecewise-linear interpolation of the rows of `samples` at time `t`.
    fn interpolate(&self, samples: &DMatrix<f64>, t: f64) -> DVector<f64> {
        let last = self.len() - 1;
        let j = self.times.partition_point(|&s| s <= t).clamp(1, last) - 1;
        let a = ((t - self.times[j]) / (self.times[j + 1] - self.times[j])).clamp(0.0, 1.0);
        (samples.row(j) * (1.0 - a) + samples.row(j + 1) * a).transpose()
    }
}

/// Normal extremal candidate (`p⁰ = −1`) from the last subproblem of an SCP
/// run: states and controls of the final iterate, costates from the dual
/// multipliers.
pub fn scp_extremal(run: &ScpRun) -> Result<Extremal> {
    let last = run
        .last
        .as_ref()
        .ok_or_else(|| Error::Usage("the run has no solved subproblem".into()))?;
    let it = &run.final_iterate;
    let times = (0..it.node_count()).map(|j| it.time(j)).collect();
    Extremal::new(
        times,
        it.states.clone(),
        last.costates()?,
        -1.0,
        it.controls.clone(),
        last.boundary_multiplier()?,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PmpResidual {
    pub adjoint_defect: f64,
    pub maximality_gap: f64,
    pub transversality_endpoint: f64,
    pub transversality_time: f64,
    pub nontriviality_margin: f64,
    /// `‖g(x(t_f))‖∞`.
    pub boundary_residual: f64,
}

pub fn hamiltonian(problem: &OcpProblem, s: f64, x: &DVector<f64>, p: &DVector<f64>, p0: f64, u: &DVector<f64>) -> f64 {
    let mut h = p.dot(&problem.dynamics(s, x, u));
    if p0 != 0.0 {
        h += p0 * problem.running_cost(s, x, u);
    }
    h
}

/// `−∂H/∂x`.
pub fn adjoint_rhs(problem: &OcpProblem, s: f64, x: &DVector<f64>, p: &DVector<f64>, p0: f64, u: &DVector<f64>) -> DVector<f64> {
    let mut d = problem.dynamics_jacobian(s, x, u).transpose() * p;
    if p0 != 0.0 {
        d += problem.running_cost_gradient(s, x, u) * p0;
    }
    -d
}

const SEARCH_ITERATIONS: usize = 200;
const COORDINATE_SWEEPS: usize = 500;

/// A maximizer of `H(s, x, p, p⁰, ·)` over the control box.
///
/// Separable quadratic `G` gives a componentwise clamp. With `p⁰ = 0`, or a
/// zero curvature component, the component is bang-bang with ties resolved
/// to the smallest-norm point of the box. Other convex `G` use cyclic
/// coordinate search.
pub fn maximize_hamiltonian(problem: &OcpProblem, s: f64, x: &DVector<f64>, p: &DVector<f64>, p0: f64) -> Result<DVector<f64>> {
    check_dim("state", problem.state_dim(), x.len())?;
    check_dim("costate", problem.state_dim(), p.len())?;
    if p0 > 0.0 {
        return Err(Error::Config(format!("p⁰ must be nonpositive, got {p0}")));
    }
    let m = problem.control_dim();
    let set = problem.control_set();
    // Linear coefficient of u in H: Fᵀp + p⁰ (L¹, …, Lᵐ).
    let mut c = problem.control_matrix(s, x).transpose() * p;
    for i in 0..m {
        c[i] += p0 * problem.cost_l()[i + 1].eval(s, x);
    }
    let linear = |i: usize, ci: f64| -> f64 {
        let (lo, hi) = (set.lower[i], set.upper[i]);
        if ci > 0.0 {
            hi
        } else if ci < 0.0 {
            lo
        } else {
            0.0f64.clamp(lo, hi)
        }
    };
    if p0 == 0.0 {
        return Ok(DVector::from_fn(m, |i, _| linear(i, c[i])));
    }
    let w = -p0;
    if let Some(d) = problem.cost_g().diagonal_quadratic() {
        return Ok(DVector::from_fn(m, |i, _| {
            if d[i] > 0.0 {
                set.clamp(i, c[i] / (w * d[i]))
            } else {
                linear(i, c[i])
            }
        }));
    }
    // General convex G: cyclic coordinate ascent on cᵀu − w G(u). Each
    // coordinate derivative cᵢ − w ∂G/∂uᵢ is nonincreasing, so bisect on its sign.
    let g = problem.cost_g();
    let mut u = DVector::from_fn(m, |i, _| 0.0f64.clamp(set.lower[i], set.upper[i]));
    for _ in 0..COORDINATE_SWEEPS {
        let before = u.clone();
        for i in 0..m {
            let slope = |v: f64, u: &mut DVector<f64>| {
                u[i] = v;
                c[i] - w * g.gradient(s, u)[i]
            };
            let (mut a, mut b) = (set.lower[i], set.upper[i]);
            if slope(b, &mut u) >= 0.0 {
                u[i] = b;
                continue;
            }
            if slope(a, &mut u) <= 0.0 {
                u[i] = a;
                continue;
            }
            for _ in 0..SEARCH_ITERATIONS {
                let mid = 0.5 * (a + b);
                if mid <= a || mid >= b {
                    break;
                }
                if slope(mid, &mut u) > 0.0 {
                    a = mid;
                } else {
                    b = mid;
                }
            }
            u[i] = 0.5 * (a + b);
        }
        if (&u - &before).amax() <= 1e-15 {
            break;
        }
    }
    Ok(u)
}

/// Residuals of the Pontryagin conditions for `candidate`.
///
/// * `adjoint_defect`: max over intervals of `‖p_int(s_{j+1}) − p_{j+1}‖∞`,
///   where `p_int` integrates `ṗ = −∂H/∂x` jointly with the state from
///   `(x_j, p_j)` with RK4 at `refinement` substeps, controls interpolated
///   linearly.
/// * `maximality_gap`: max over samples of `max_v H − H(u_j)`.
/// * `transversality_endpoint`: least-squares residual of
///   `p(t_f) = ∂g/∂xᵀ 𝔭`.
/// * `transversality_time`: `|max_v H(t_f)|` for free final time with
///   `t_f < T`, else zero.
/// * `nontriviality_margin`: `‖(p(t_f), p⁰)‖` after normalization.
pub fn pmp_residual(problem: &OcpProblem, candidate: &Extremal, refinement: usize) -> Result<PmpResidual> {
    if refinement == 0 {
        return Err(Error::Config("grid refinement must be at least 1".into()));
    }
    let n = problem.state_dim();
    check_dim("extremal state dimension", n, candidate.states.ncols())?;
    check_dim("extremal control dimension", problem.control_dim(), candidate.controls.ncols())?;
    let p0 = candidate.abnormal_multiplier;
    let last = candidate.len() - 1;

    let mut adjoint_defect: f64 = 0.0;
    for j in 0..last {
        let (t0, t1) = (candidate.times[j], candidate.times[j + 1]);
        let h = (t1 - t0) / refinement as f64;
        // State and costate advance together under the interpolated control so
        // the costate sees the flow rather than chords between samples.
        let rhs = |t: f64, y: &DVector<f64>| {
            let x = y.rows(0, n).into_owned();
            let p = y.rows(n, n).into_owned();
            let u = candidate.interpolate(&candidate.controls, t);
            let mut dy = DVector::zeros(2 * n);
            dy.rows_mut(0, n).copy_from(&problem.dynamics(t, &x, &u));
            dy.rows_mut(n, n).copy_from(&adjoint_rhs(problem, t, &x, &p, p0, &u));
            dy
        };
        let mut y = DVector::zeros(2 * n);
        y.rows_mut(0, n).copy_from(&candidate.state(j));
        y.rows_mut(n, n).copy_from(&candidate.costate(j));
        for k in 0..refinement {
            y = rk4_step(&rhs, t0 + k as f64 * h, &y, h);
        }
        let p = y.rows(n, n).into_owned();
        adjoint_defect = adjoint_defect.max((p - candidate.costate(j + 1)).amax());
    }

    let mut maximality_gap: f64 = 0.0;
    for j in 0..=last {
        let (s, x, p, u) = (candidate.times[j], candidate.state(j), candidate.costate(j), candidate.control(j));
        let best = maximize_hamiltonian(problem, s, &x, &p, p0)?;
        let gap = hamiltonian(problem, s, &x, &p, p0, &best) - hamiltonian(problem, s, &x, &p, p0, &u);
        maximality_gap = maximality_gap.max(gap.max(0.0));
    }

    let x_f = candidate.state(last);
    let p_f = candidate.costate(last);
    let dg = problem.boundary().jacobian(&x_f);
    let transversality_endpoint = if dg.nrows() == 0 {
        p_f.amax()
    } else {
        let fit = dg.transpose().svd(true, true).solve(&p_f, 1e-12).map_err(|e| Error::Degenerate(e.to_string()))?;
        (dg.transpose() * fit - &p_f).amax()
    };

    let transversality_time = match problem.final_time() {
        FinalTime::Free if candidate.final_time < problem.horizon_cap() => {
            let s = candidate.final_time;
            let best = maximize_hamiltonian(problem, s, &x_f, &p_f, p0)?;
            hamiltonian(problem, s, &x_f, &p_f, p0, &best).abs()
        }
        _ => 0.0,
    };

    let nontriviality_margin = match candidate.normalized() {
        Ok(c) => (c.costate(last).norm_squared() + c.abnormal_multiplier.powi(2)).sqrt(),
        Err(_) => 0.0,
    };

    Ok(PmpResidual {
        adjoint_defect,
        maximality_gap,
        transversality_endpoint,
        transversality_time,
        nontriviality_margin,
        boundary_residual: problem.boundary().eval(&x_f).amax(),
    })
}
