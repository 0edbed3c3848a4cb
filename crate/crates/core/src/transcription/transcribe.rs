use std::io::Write;
use std::ops::Range;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::linearize::{linearize_cost_centered, linearize_dynamics, LinearizedCost, LinearizedDynamics};
use super::rescale::{augment_iterate, rescale_free_time, TimeCostCoupling};
use super::trajectory::{DiscreteTrajectory, Scheme};
use crate::error::{check_dim, Error, Result};
use crate::linalg::{CscMatrix, Triplets};
use crate::problem::{FinalTime, OcpProblem};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct TranscriptionOptions {
    pub scheme: Scheme,
    pub coupling: TimeCostCoupling,
}

/// Node-interleaved layout `z = (x₀, u₀, x₁, u₁, …)`. In free-time form the
/// state includes the final-time state `τ`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VariableLayout {
    pub node_count: usize,
    pub state_dim: usize,
    pub control_dim: usize,
    /// Index of `τ` within each node's state, if present.
    pub time_state: Option<usize>,
}

impl VariableLayout {
    pub fn len(&self) -> usize {
        self.node_count * self.stride()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn stride(&self) -> usize {
        self.state_dim + self.control_dim
    }

    pub fn state(&self, node: usize, i: usize) -> usize {
        node * self.stride() + i
    }

    pub fn control(&self, node: usize, i: usize) -> usize {
        node * self.stride() + self.state_dim + i
    }

    /// The decision variable carrying `t_f` (the time state at node 0).
    pub fn time_variable(&self) -> Option<usize> {
        self.time_state.map(|i| self.state(0, i))
    }
}

/// `Σ wᵢ (z[indexᵢ] − cᵢ)² ≤ radius`.
#[derive(Debug, Clone, PartialEq)]
pub struct BallSet {
    pub indices: Vec<usize>,
    pub weights: Vec<f64>,
    pub center: Vec<f64>,
    pub radius: f64,
}

impl BallSet {
    pub fn value(&self, z: &DVector<f64>) -> f64 {
        self.indices
            .iter()
            .zip(&self.weights)
            .zip(&self.center)
            .map(|((&i, &w), &c)| w * (z[i] - c).powi(2))
            .sum()
    }
}

/// Transcribed convex subproblem
///
/// `min ½ zᵀPz + qᵀz + c  s.t.  A z = b,  lower ≤ z ≤ upper,  z ∈ ball`.
#[derive(Debug, Clone)]
pub struct ConvexSubproblem {
    pub layout: VariableLayout,
    /// Full symmetric `P`.
    pub p: CscMatrix,
    pub q: DVector<f64>,
    pub cost_constant: f64,
    pub a_eq: CscMatrix,
    pub b_eq: DVector<f64>,
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
    pub ball: BallSet,
    /// `(row, state component)` of the initial-condition equalities.
    pub initial_rows: Vec<(usize, usize)>,
    pub dynamics_rows: Range<usize>,
    pub boundary_rows: Range<usize>,
    pub scheme: Scheme,
    /// Quadrature step of the transcribed problem.
    pub step: f64,
    /// Iterate in the caller's (unscaled) coordinates.
    pub linearization_point: DiscreteTrajectory,
    /// Problem actually transcribed (time-scaled when the original is free-time).
    pub transcribed: OcpProblem,
}

fn validate(problem: &OcpProblem, iterate: &DiscreteTrajectory, radius: f64) -> Result<()> {
    if !(radius > 0.0) || !radius.is_finite() {
        return Err(Error::Config(format!("trust-region radius must be positive, got {radius}")));
    }
    check_dim("iterate state dimension", problem.state_dim(), iterate.state_dim())?;
    check_dim("iterate control dimension", problem.control_dim(), iterate.control_dim())?;
    match problem.final_time() {
        FinalTime::Fixed(tf) if (iterate.final_time - tf).abs() > 1e-12 * tf => Err(Error::Config(format!(
            "iterate final time {} differs from the fixed final time {tf}",
            iterate.final_time
        ))),
        FinalTime::Free if iterate.final_time > problem.horizon_cap() => Err(Error::Config(format!(
            "iterate final time {} exceeds the horizon cap {}",
            iterate.final_time,
            problem.horizon_cap()
        ))),
        _ => Ok(()),
    }
}

/// Build `LOCP` around `iterate` with trust-region radius `radius`.
pub fn transcribe(
    problem: &OcpProblem,
    iterate: &DiscreteTrajectory,
    radius: f64,
    options: TranscriptionOptions,
) -> Result<ConvexSubproblem> {
    transcribe_centered(problem, iterate, radius, options, None)
}

/// As [`transcribe`], with the second-order models of `G` and `H` expanded
/// at `center` rather than at the iterate.
pub fn transcribe_centered(
    problem: &OcpProblem,
    iterate: &DiscreteTrajectory,
    radius: f64,
    options: TranscriptionOptions,
    center: Option<&DiscreteTrajectory>,
) -> Result<ConvexSubproblem> {
    validate(problem, iterate, radius)?;
    let (target, point) = match problem.final_time() {
        FinalTime::Free => (rescale_free_time(problem, iterate, options.coupling)?, augment_iterate(iterate)),
        FinalTime::Fixed(_) => (problem.clone(), iterate.clone()),
    };
    let center = match (center, problem.final_time()) {
        (Some(c), FinalTime::Free) => Some(augment_iterate(c)),
        (c, _) => c.cloned(),
    };
    let scheme = options.scheme;
    let nodes = point.node_count();
    let n = target.state_dim();
    let m = target.control_dim();
    let layout = VariableLayout {
        node_count: nodes,
        state_dim: n,
        control_dim: m,
        time_state: target.scaled_time().map(|t| t.index),
    };
    let nv = layout.len();
    let h = point.time_step();
    let weights = scheme.quadrature_weights(nodes);

    let dynamics: Vec<LinearizedDynamics> = (0..nodes)
        .map(|j| linearize_dynamics(&target, &point, j))
        .collect::<Result<_>>()?;
    let costs: Vec<LinearizedCost> = (0..nodes)
        .map(|j| linearize_cost_centered(&target, &point, j, center.as_ref()))
        .collect::<Result<_>>()?;

    // Objective.
    let mut p = Triplets::new(nv, nv);
    let mut q = DVector::zeros(nv);
    let mut cost_constant = 0.0;
    for (j, c) in costs.iter().enumerate() {
        let w = h * weights[j];
        if w == 0.0 {
            continue;
        }
        let blocks = [
            (&c.control_cost, (0..m).map(|i| layout.control(j, i)).collect::<Vec<_>>()),
            (&c.state_cost, (0..n).map(|i| layout.state(j, i)).collect::<Vec<_>>()),
        ];
        for (model, idx) in blocks {
            let wv = &model.hessian * &model.v_ref;
            for a in 0..idx.len() {
                for b in 0..idx.len() {
                    p.push(idx[a], idx[b], w * model.hessian[(a, b)]);
                }
                q[idx[a]] += w * (model.gradient[a] - wv[a]);
            }
            cost_constant += w * (model.value - model.gradient.dot(&model.v_ref) + 0.5 * model.v_ref.dot(&wv));
        }
        for i in 0..m {
            q[layout.control(j, i)] += w * c.control_weights[i];
        }
        for i in 0..n {
            q[layout.state(j, i)] += w * c.state_gradient[i];
        }
        cost_constant += w * (c.l0 - c.state_gradient.dot(&c.x_ref));
    }

    // Equalities: initial condition, dynamics defects, boundary.
    let x_last = point.final_state();
    let g = target.boundary().eval(&x_last);
    let dg = target.boundary().jacobian(&x_last);
    let euler_rows = if scheme == Scheme::ForwardEuler { m } else { 0 };
    let fixed0 = target.initial_fixed().iter().filter(|&&f| f).count();
    let mut a = Triplets::new(fixed0 + (nodes - 1) * n + euler_rows + g.len(), nv);
    let mut b = Vec::with_capacity(a.nrows);
    let mut initial_rows = Vec::new();
    for i in 0..n {
        if target.initial_fixed()[i] {
            initial_rows.push((b.len(), i));
            a.push(b.len(), layout.state(0, i), 1.0);
            b.push(target.initial_state()[i]);
        }
    }
    let dyn_start = b.len();
    for j in 0..nodes - 1 {
        // Contribution of node `k` with factor `f` to `−f · h · F_k`.
        let linear_part = |row: usize, k: usize, i: usize, f: f64, a: &mut Triplets| -> f64 {
            let d = &dynamics[k];
            for c in 0..n {
                a.push(row, layout.state(k, c), -f * h * d.jacobian[(i, c)]);
            }
            for c in 0..m {
                a.push(row, layout.control(k, c), -f * h * d.control_matrix[(i, c)]);
            }
            let affine = d.drift[i] - (d.jacobian.row(i) * &d.x_ref)[0];
            f * h * affine
        };
        for i in 0..n {
            let row = b.len();
            a.push(row, layout.state(j + 1, i), 1.0);
            a.push(row, layout.state(j, i), -1.0);
            let rhs = match scheme {
                Scheme::Trapezoidal => linear_part(row, j, i, 0.5, &mut a) + linear_part(row, j + 1, i, 0.5, &mut a),
                Scheme::ForwardEuler => linear_part(row, j, i, 1.0, &mut a),
            };
            b.push(rhs);
        }
    }
    if scheme == Scheme::ForwardEuler {
        // The last control does not enter the Euler scheme; tie it to its neighbour.
        for i in 0..m {
            let row = b.len();
            a.push(row, layout.control(nodes - 1, i), 1.0);
            a.push(row, layout.control(nodes - 2, i), -1.0);
            b.push(0.0);
        }
    }
    let dyn_end = b.len();
    for r in 0..g.len() {
        let row = b.len();
        for c in 0..n {
            a.push(row, layout.state(nodes - 1, c), dg[(r, c)]);
        }
        b.push((dg.row(r) * &x_last)[0] - g[r]);
    }
    let boundary_rows = dyn_end..b.len();
    debug_assert_eq!(a.nrows, b.len());

    // Box: control set, and the final-time interval in free-time form.
    let mut lower = DVector::from_element(nv, f64::NEG_INFINITY);
    let mut upper = DVector::from_element(nv, f64::INFINITY);
    for j in 0..nodes {
        for i in 0..m {
            lower[layout.control(j, i)] = target.control_set().lower[i];
            upper[layout.control(j, i)] = target.control_set().upper[i];
        }
    }
    if let (Some(tv), Some(st)) = (layout.time_variable(), target.scaled_time()) {
        lower[tv] = (st.reference - radius).max(1e-3 * st.cap);
        upper[tv] = (st.reference + radius).min(st.cap);
    }

    // State trust region on the physical components.
    let mut ball = BallSet {
        indices: Vec::new(),
        weights: Vec::new(),
        center: Vec::new(),
        radius,
    };
    let physical: Vec<usize> = target.physical_states().collect();
    for j in 0..nodes {
        let w = h * weights[j];
        if w == 0.0 {
            continue;
        }
        for &i in &physical {
            ball.indices.push(layout.state(j, i));
            ball.weights.push(w);
            ball.center.push(point.states[(j, i)]);
        }
    }

    let p = symmetrize(p.to_csc(), nv);
    Ok(ConvexSubproblem {
        layout,
        p,
        q,
        cost_constant,
        a_eq: a.to_csc(),
        b_eq: DVector::from_vec(b),
        lower,
        upper,
        ball,
        initial_rows,
        dynamics_rows: dyn_start..dyn_end,
        boundary_rows,
        scheme,
        step: h,
        linearization_point: iterate.clone(),
        transcribed: target,
    })
}

/// Symmetrize `P`; per-node blocks are already PSD-clamped at assembly.
fn symmetrize(p: CscMatrix, nv: usize) -> CscMatrix {
    let t: Vec<(usize, usize, f64)> = p
        .iter()
        .flat_map(|(i, j, v)| [(i, j, 0.5 * v), (j, i, 0.5 * v)])
        .collect();
    CscMatrix::from_triplets(nv, nv, &t)
}

impl ConvexSubproblem {
    pub fn variable_count(&self) -> usize {
        self.layout.len()
    }

    pub fn equality_count(&self) -> usize {
        self.b_eq.len()
    }

    /// Copy with the boundary rows moved into the objective as
    /// `weight·‖A_g z − b_g‖²`. The rows stay in place as `0 = 0`, so the row
    /// layout and dual indexing are unchanged.
    pub fn with_soft_boundary(&self, weight: f64) -> ConvexSubproblem {
        let nz = self.variable_count();
        let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); self.boundary_rows.len()];
        let mut kept = Vec::with_capacity(self.a_eq.nnz());
        for (i, j, v) in self.a_eq.iter() {
            if self.boundary_rows.contains(&i) {
                rows[i - self.boundary_rows.start].push((j, v));
            } else {
                kept.push((i, j, v));
            }
        }
        let mut entries: Vec<(usize, usize, f64)> = self.p.iter().collect();
        let mut q = self.q.clone();
        let mut constant = self.cost_constant;
        let mut b_eq = self.b_eq.clone();
        for (r, row) in rows.iter().enumerate() {
            let b = self.b_eq[self.boundary_rows.start + r];
            for &(j, vj) in row {
                q[j] -= 2.0 * weight * b * vj;
                for &(k, vk) in row {
                    entries.push((j, k, 2.0 * weight * vj * vk));
                }
            }
            constant += weight * b * b;
            b_eq[self.boundary_rows.start + r] = 0.0;
        }
        ConvexSubproblem {
            p: CscMatrix::from_triplets(nz, nz, &entries),
            q,
            cost_constant: constant,
            a_eq: CscMatrix::from_triplets(self.a_eq.nrows, nz, &kept),
            b_eq,
            ..self.clone()
        }
    }

    /// Whether the subproblem carries the final time as a decision variable.
    pub fn free_time(&self) -> bool {
        self.layout.time_state.is_some()
    }

    /// `½ zᵀPz + qᵀz + c`.
    pub fn objective(&self, z: &DVector<f64>) -> f64 {
        0.5 * z.dot(&self.p.mul_vec(z)) + self.q.dot(z) + self.cost_constant
    }

    /// Decision vector of a trajectory given in the caller's coordinates.
    pub fn embed(&self, traj: &DiscreteTrajectory) -> Result<DVector<f64>> {
        check_dim("trajectory nodes", self.layout.node_count, traj.node_count())?;
        let n_phys = self.layout.state_dim - usize::from(self.free_time());
        check_dim("trajectory state dimension", n_phys, traj.state_dim())?;
        check_dim("trajectory control dimension", self.layout.control_dim, traj.control_dim())?;
        let mut z = DVector::zeros(self.layout.len());
        for j in 0..self.layout.node_count {
            for i in 0..n_phys {
                z[self.layout.state(j, i)] = traj.states[(j, i)];
            }
            if let Some(t) = self.layout.time_state {
                z[self.layout.state(j, t)] = traj.final_time;
            }
            for i in 0..self.layout.control_dim {
                z[self.layout.control(j, i)] = traj.controls[(j, i)];
            }
        }
        Ok(z)
    }

    /// Trajectory in the caller's coordinates from a decision vector.
    pub fn extract(&self, z: &DVector<f64>) -> Result<DiscreteTrajectory> {
        check_dim("decision vector", self.layout.len(), z.len())?;
        let l = &self.layout;
        let n_phys = l.state_dim - usize::from(self.free_time());
        let states = DMatrix::from_fn(l.node_count, n_phys, |j, i| z[l.state(j, i)]);
        let controls = DMatrix::from_fn(l.node_count, l.control_dim, |j, i| z[l.control(j, i)]);
        let final_time = match l.time_variable() {
            Some(tv) => z[tv],
            None => self.linearization_point.final_time,
        };
        DiscreteTrajectory::new(self.linearization_point.grid.clone(), states, controls, final_time)
    }

    /// Equality residual `A z − b` restricted to the dynamics rows.
    pub fn dynamics_residual(&self, z: &DVector<f64>) -> DVector<f64> {
        let r = self.a_eq.mul_vec(z) - &self.b_eq;
        r.rows(self.dynamics_rows.start, self.dynamics_rows.len()).into_owned()
    }

    /// Nodal costate estimates `N × n` (physical states) from the equality
    /// duals.
    ///
    /// With stationarity `∇cost + Aᵀy + … = 0` and defects written as
    /// `x_{j+1} − x_j − …`, the defect duals approximate the costate at
    /// interval midpoints and the initial-condition duals approximate
    /// `p(0)`. Interior nodes average neighbouring intervals; the last node
    /// uses `p(t_f) = −Dgᵀ y_g`.
    pub fn nodal_costates(&self, y: &DVector<f64>) -> Result<DMatrix<f64>> {
        check_dim("equality duals", self.equality_count(), y.len())?;
        let l = &self.layout;
        let n = l.state_dim;
        let n_phys = n - usize::from(self.free_time());
        let nodes = l.node_count;
        let lambda = |j: usize, i: usize| y[self.dynamics_rows.start + j * n + i];
        let mut p = DMatrix::zeros(nodes, n_phys);
        for i in 0..n_phys {
            p[(0, i)] = lambda(0, i);
        }
        for &(row, i) in &self.initial_rows {
            if i < n_phys {
                p[(0, i)] = y[row];
            }
        }
        for j in 1..nodes - 1 {
            for i in 0..n_phys {
                p[(j, i)] = 0.5 * (lambda(j - 1, i) + lambda(j, i));
            }
        }
        let x_last = self.linearization_point.final_state();
        let mut x_full = DVector::zeros(n);
        x_full.rows_mut(0, n_phys).copy_from(&x_last);
        let dg = self.transcribed.boundary().jacobian(&x_full);
        let y_g = y.rows(self.boundary_rows.start, self.boundary_rows.len());
        let p_end = -(dg.transpose() * y_g);
        for i in 0..n_phys {
            p[(nodes - 1, i)] = p_end[i];
        }
        Ok(p)
    }

    /// Initial-condition multiplier in state order (zero for free components).
    pub fn initial_multiplier(&self, y: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim("equality duals", self.equality_count(), y.len())?;
        let n_phys = self.layout.state_dim - usize::from(self.free_time());
        let mut g = DVector::zeros(n_phys);
        for &(row, i) in &self.initial_rows {
            if i < n_phys {
                g[i] = y[row];
            }
        }
        Ok(g)
    }

    /// Boundary multiplier `𝔭 = −y_g`, so that `p(t_f) = Dgᵀ 𝔭`.
    pub fn boundary_multiplier(&self, y: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim("equality duals", self.equality_count(), y.len())?;
        Ok(-y.rows(self.boundary_rows.start, self.boundary_rows.len()).into_owned())
    }

    /// Plain-text dump: header, then `P`, `A` triplets and the vectors.
    pub fn write_dump<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "# convex subproblem: min 0.5 z'Pz + q'z + c  s.t. Az = b, lower <= z <= upper, ball")?;
        writeln!(w, "variables {}", self.variable_count())?;
        writeln!(w, "constant {:e}", self.cost_constant)?;
        writeln!(w, "P {} {}", self.p.nrows, self.p.nnz())?;
        for (i, j, v) in self.p.iter() {
            writeln!(w, "{i} {j} {v:e}")?;
        }
        writeln!(w, "q {}", self.q.len())?;
        for v in self.q.iter() {
            writeln!(w, "{v:e}")?;
        }
        writeln!(w, "A {} {}", self.a_eq.nrows, self.a_eq.nnz())?;
        for (i, j, v) in self.a_eq.iter() {
            writeln!(w, "{i} {j} {v:e}")?;
        }
        writeln!(w, "b {}", self.b_eq.len())?;
        for v in self.b_eq.iter() {
            writeln!(w, "{v:e}")?;
        }
        writeln!(w, "bounds {}", self.lower.len())?;
        for (l, u) in self.lower.iter().zip(self.upper.iter()) {
            writeln!(w, "{l:e} {u:e}")?;
        }
        writeln!(w, "ball {} {:e}", self.ball.indices.len(), self.ball.radius)?;
        for ((i, wt), c) in self.ball.indices.iter().zip(&self.ball.weights).zip(&self.ball.center) {
            writeln!(w, "{i} {wt:e} {c:e}")?;
        }
        Ok(())
    }
}

/// Max-norm defect of the TRUE dynamics under `scheme` on physical time.
pub fn dynamics_defect(problem: &OcpProblem, traj: &DiscreteTrajectory, scheme: Scheme) -> Result<f64> {
    check_dim("trajectory state dimension", problem.state_dim(), traj.state_dim())?;
    check_dim("trajectory control dimension", problem.control_dim(), traj.control_dim())?;
    let h = traj.time_step();
    let f: Vec<DVector<f64>> = (0..traj.node_count())
        .map(|j| problem.dynamics(traj.time(j), &traj.state(j), &traj.control(j)))
        .collect();
    let mut worst: f64 = 0.0;
    for j in 0..traj.node_count() - 1 {
        let step = match scheme {
            Scheme::Trapezoidal => (&f[j] + &f[j + 1]) * (0.5 * h),
            Scheme::ForwardEuler => &f[j] * h,
        };
        let d = traj.state(j + 1) - traj.state(j) - step;
        worst = worst.max(d.amax());
    }
    Ok(worst)
}

/// `Σⱼ h wⱼ ‖x_j − y_j‖²` over physical states, with the step of the
/// transcribed problem (normalized time for free-final-time problems).
pub fn trust_region_value(problem: &OcpProblem, a: &DiscreteTrajectory, b: &DiscreteTrajectory, scheme: Scheme) -> Result<f64> {
    check_dim("trajectory nodes", a.node_count(), b.node_count())?;
    check_dim("trajectory state dimension", a.state_dim(), b.state_dim())?;
    let h = match problem.final_time() {
        FinalTime::Fixed(tf) => tf * a.grid.step(),
        FinalTime::Free => a.grid.step(),
    };
    let w = scheme.quadrature_weights(a.node_count());
    Ok((0..a.node_count())
        .map(|j| h * w[j] * (a.states.row(j) - b.states.row(j)).norm_squared())
        .sum())
}
