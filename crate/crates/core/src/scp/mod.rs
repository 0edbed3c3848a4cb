//! The SCP loop: transcribe around the current iterate, solve, shrink the
//! trust region, repeat until the control updates stall and the true
//! boundary condition holds.

use std::io::Write;

use log::{debug, warn};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::problem::{FinalTime, OcpProblem};
use crate::solver::{self, SolverSettings, SolverSolution, SolverStatus};
use crate::transcription::{
    dynamics_defect, transcribe_centered, trust_region_value, ConvexSubproblem, DiscreteTrajectory, Scheme, TimeCostCoupling,
    TranscriptionOptions,
};

/// How controls of successive iterates are compared in the gap integral.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum GapMeasure {
    /// Controls as functions of physical time `s ∈ [0, max t_f]`, linearly
    /// interpolated and held constant past each iterate's own final time.
    #[default]
    PhysicalTime,
    /// Node-by-node differences weighted by the newer iterate's physical step.
    Nodal,
    /// Node-by-node differences on the normalized grid `s̃ ∈ [0, 1]`.
    Normalized,
}

/// Samples per unit interval used by [`GapMeasure::PhysicalTime`].
const GAP_SAMPLES: usize = 2000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScpConfig {
    pub delta0: f64,
    pub shrink: f64,
    pub conv_tol: f64,
    pub max_iterations: usize,
    pub scheme: Scheme,
    pub node_count: usize,
    /// Overrides the problem's state bound when set.
    pub state_bound: Option<f64>,
    pub boundary_tol: f64,
    pub coupling: TimeCostCoupling,
    pub gap_measure: GapMeasure,
    /// Margin for the strict trust-region test.
    pub strict_margin: f64,
    /// Maximum re-expansions of non-quadratic `G`, `H` per subproblem; zero
    /// keeps the single second-order model at the iterate.
    pub cost_refinements: usize,
    /// When the doubled-radius retry is still infeasible, solve once more
    /// with the boundary condition moved into the objective at this weight.
    pub elastic_weight: Option<f64>,
    pub solver: SolverSettings,
}

impl Default for ScpConfig {
    fn default() -> Self {
        ScpConfig {
            delta0: 3.0,
            shrink: 0.95,
            conv_tol: 1e-3,
            max_iterations: 100,
            scheme: Scheme::Trapezoidal,
            node_count: 51,
            state_bound: None,
            boundary_tol: 1e-5,
            coupling: TimeCostCoupling::Linearized,
            gap_measure: GapMeasure::PhysicalTime,
            strict_margin: 1e-9,
            cost_refinements: 20,
            elastic_weight: Some(1e3),
            solver: SolverSettings::default(),
        }
    }
}

impl ScpConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.delta0 > 0.0) {
            return Err(Error::Config("initial trust-region radius must be positive".into()));
        }
        if !(self.shrink > 0.0 && self.shrink < 1.0) {
            return Err(Error::Config(format!(
                "trust-region shrink factor must lie in (0, 1) so radii tend to zero, got {}",
                self.shrink
            )));
        }
        if !(self.conv_tol > 0.0) || !(self.boundary_tol > 0.0) {
            return Err(Error::Config("convergence tolerances must be positive".into()));
        }
        if self.node_count < 2 {
            return Err(Error::Config("at least two grid nodes are required".into()));
        }
        if let Some(b) = self.state_bound {
            if !(b > 0.0) {
                return Err(Error::Config("state bound must be positive".into()));
            }
        }
        self.solver.validate()
    }

    pub fn transcription(&self) -> TranscriptionOptions {
        TranscriptionOptions {
            scheme: self.scheme,
            coupling: self.coupling,
        }
    }
}

/// Trust-region radius policy.
pub trait UpdateRule {
    /// Radius for the next subproblem after iteration `k` produced `curr`
    /// from `prev` under radius `current`.
    fn next_radius(&self, current: f64, k: usize, prev: &DiscreteTrajectory, curr: &DiscreteTrajectory) -> f64;
}

/// `Δ_{k+1} = γ Δ_k`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeometricShrink {
    pub factor: f64,
}

impl UpdateRule for GeometricShrink {
    fn next_radius(&self, current: f64, _k: usize, _prev: &DiscreteTrajectory, _curr: &DiscreteTrajectory) -> f64 {
        self.factor * current
    }
}

/// Radius `Δ_{k+1} = Δ₀ γ^{k+1}` of the default rule.
pub fn update_radius(config: &ScpConfig, k: usize) -> f64 {
    config.delta0 * config.shrink.powi(k as i32 + 1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ScpStatus {
    Converged,
    MaxIter,
    SubproblemInfeasible,
    Unbounded,
    /// Stopped by an iteration observer (shooting success in accelerated SCP).
    Stopped,
}

/// Shooting attempt summary carried in the iteration log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShootingAttempt {
    pub success: bool,
    pub residual: f64,
    pub newton_iterations: usize,
}

/// One line of the structured iteration log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub k: usize,
    pub radius: f64,
    pub cost: f64,
    pub control_gap: f64,
    pub defect: f64,
    pub boundary_residual: f64,
    pub strict: bool,
    pub final_time: f64,
    pub solver_status: SolverStatus,
    pub solver_iterations: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub shooting: Option<ShootingAttempt>,
}

#[derive(Debug, Clone, Default)]
pub struct ScpHistory {
    /// `iterates[0]` is the initial guess; `iterates[k]` the result of solve `k`.
    pub iterates: Vec<DiscreteTrajectory>,
    /// Radius used by solve `k + 1`.
    pub radii: Vec<f64>,
    /// Initial-condition multipliers `γ⁰` of each solve.
    pub duals: Vec<DVector<f64>>,
    pub strict_flags: Vec<bool>,
    /// `∫‖u_{k+1} − u_k‖²` for each solve.
    pub control_gaps: Vec<f64>,
    pub records: Vec<IterationRecord>,
}

impl ScpHistory {
    /// Number of subproblem solves recorded.
    pub fn solves(&self) -> usize {
        self.radii.len()
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        for r in &self.records {
            serde_json::to_writer(&mut w, r)?;
            writeln!(w)?;
        }
        Ok(())
    }
}

/// Data of the last subproblem solve, for costate reconstruction.
#[derive(Debug, Clone)]
pub struct LastSolve {
    pub subproblem: ConvexSubproblem,
    pub solution: SolverSolution,
}

impl LastSolve {
    /// Nodal costates (`N × n`) recovered from the equality duals.
    pub fn costates(&self) -> Result<DMatrix<f64>> {
        self.subproblem.nodal_costates(&self.solution.duals_equality)
    }

    pub fn boundary_multiplier(&self) -> Result<DVector<f64>> {
        self.subproblem.boundary_multiplier(&self.solution.duals_equality)
    }
}

#[derive(Debug, Clone)]
pub struct ScpRun {
    pub history: ScpHistory,
    pub final_iterate: DiscreteTrajectory,
    pub status: ScpStatus,
    pub last: Option<LastSolve>,
    /// Iteration at which a failure status was raised.
    pub failed_at: Option<usize>,
}

impl ScpRun {
    pub fn iterations(&self) -> usize {
        self.history.solves()
    }
}

/// What an observer sees after each accepted solve.
pub struct IterationContext<'a> {
    pub k: usize,
    pub iterate: &'a DiscreteTrajectory,
    pub gamma: &'a DVector<f64>,
    /// Whether the solve strictly satisfied its trust region.
    pub strict: bool,
    pub subproblem: &'a ConvexSubproblem,
    pub solution: &'a SolverSolution,
}

/// Hook run after every SCP solve; returning `Some` stops the loop.
pub trait IterationObserver {
    fn after_solve(&mut self, ctx: &IterationContext<'_>) -> Option<ShootingAttempt>;
    fn should_stop(&self) -> bool;
}

struct NoObserver;

impl IterationObserver for NoObserver {
    fn after_solve(&mut self, _ctx: &IterationContext<'_>) -> Option<ShootingAttempt> {
        None
    }
    fn should_stop(&self) -> bool {
        false
    }
}

/// `∫‖u_a − u_b‖²` under `measure`.
pub fn control_gap(a: &DiscreteTrajectory, b: &DiscreteTrajectory, scheme: Scheme, measure: GapMeasure) -> f64 {
    let nodal = |h: f64| {
        let w = scheme.quadrature_weights(a.node_count());
        (0..a.node_count())
            .map(|j| h * w[j] * (a.controls.row(j) - b.controls.row(j)).norm_squared())
            .sum()
    };
    match measure {
        GapMeasure::Nodal => nodal(a.time_step()),
        GapMeasure::Normalized => nodal(a.grid.step()),
        GapMeasure::PhysicalTime => {
            let horizon = a.final_time.max(b.final_time);
            let h = horizon / GAP_SAMPLES as f64;
            (0..=GAP_SAMPLES)
                .map(|i| {
                    let t = i as f64 * h;
                    let w = if i == 0 || i == GAP_SAMPLES { 0.5 } else { 1.0 };
                    w * h * (a.control_at(t) - b.control_at(t)).norm_squared()
                })
                .sum()
        }
    }
}

/// `∫‖u_{k+1}−u_k‖² + ‖u_k−u_{k−1}‖² ≤ conv_tol` on the last three iterates.
pub fn check_convergence(history: &ScpHistory, conv_tol: f64) -> bool {
    let g = &history.control_gaps;
    history.iterates.len() >= 3 && g.len() >= 2 && g[g.len() - 1] + g[g.len() - 2] <= conv_tol
}

/// Strict trust-region satisfaction of `curr` relative to `prev`.
pub fn check_strict_trust(
    problem: &OcpProblem,
    prev: &DiscreteTrajectory,
    curr: &DiscreteTrajectory,
    radius: f64,
    scheme: Scheme,
    margin: f64,
) -> Result<bool> {
    let state_gap = trust_region_value(problem, curr, prev, scheme)?;
    let mut strict = state_gap < radius - margin;
    if problem.final_time() == FinalTime::Free {
        strict &= (curr.final_time - prev.final_time).abs() < radius - margin;
    }
    Ok(strict)
}

/// Cost `∫ f⁰ dt` of a trajectory by the scheme's quadrature.
pub fn trajectory_cost(problem: &OcpProblem, traj: &DiscreteTrajectory, scheme: Scheme) -> f64 {
    let w = scheme.quadrature_weights(traj.node_count());
    let h = traj.time_step();
    (0..traj.node_count())
        .map(|j| h * w[j] * problem.running_cost(traj.time(j), &traj.state(j), &traj.control(j)))
        .sum()
}

/// `‖g(x(t_f))‖∞` against the true boundary map.
pub fn boundary_residual(problem: &OcpProblem, traj: &DiscreteTrajectory) -> f64 {
    let g = problem.boundary().eval(&traj.final_state());
    if g.is_empty() {
        0.0
    } else {
        g.amax()
    }
}

/// Initial guess: straight line from `x⁰` to `x_f`, zero controls.
pub fn straight_line_guess(problem: &OcpProblem, xf: &DVector<f64>, node_count: usize, tf_guess: f64) -> Result<DiscreteTrajectory> {
    let grid = crate::transcription::TimeGrid::uniform(node_count)?;
    DiscreteTrajectory::straight_line(grid, problem.initial_state(), xf, problem.control_dim(), tf_guess)
}

pub fn run_scp(problem: &OcpProblem, initial_guess: &DiscreteTrajectory, config: &ScpConfig) -> Result<ScpRun> {
    run_scp_observed(problem, initial_guess, config, &GeometricShrink { factor: config.shrink }, &mut NoObserver)
}

pub fn run_scp_observed(
    problem: &OcpProblem,
    initial_guess: &DiscreteTrajectory,
    config: &ScpConfig,
    rule: &dyn UpdateRule,
    observer: &mut dyn IterationObserver,
) -> Result<ScpRun> {
    config.validate()?;
    check_dim("guess state dimension", problem.state_dim(), initial_guess.state_dim())?;
    check_dim("guess control dimension", problem.control_dim(), initial_guess.control_dim())?;
    check_dim("guess nodes", config.node_count, initial_guess.node_count())?;
    let bound = config.state_bound.unwrap_or(problem.state_bound());

    let mut history = ScpHistory {
        iterates: vec![initial_guess.clone()],
        ..Default::default()
    };
    let mut radius = config.delta0;
    let mut warm: Option<SolverSolution> = None;
    let mut last: Option<LastSolve> = None;
    let mut status = ScpStatus::MaxIter;
    let mut failed_at = None;

    for k in 0..config.max_iterations {
        let prev = history.iterates.last().expect("guess present").clone();
        let (sub, sol, used_radius) = match solve_with_retry(problem, &prev, radius, config, warm.as_ref())? {
            Some(v) => v,
            None => {
                status = ScpStatus::SubproblemInfeasible;
                failed_at = Some(k + 1);
                break;
            }
        };
        if sol.status != SolverStatus::Optimal {
            warn!("subproblem {} returned {:?} (residuals {:?})", k + 1, sol.status, sol.residuals);
        }
        let next = sub.extract(&sol.primal)?;
        let gamma = sub.initial_multiplier(&sol.duals_equality)?;
        let tr = trust_region_value(problem, &next, &prev, config.scheme)?;
        if tr > used_radius + 1e-6 {
            warn!("iterate {} violates its trust region: {tr:.3e} > {used_radius:.3e}", k + 1);
        }
        let strict = check_strict_trust(problem, &prev, &next, used_radius, config.scheme, config.strict_margin)?;
        let gap = control_gap(&next, &prev, config.scheme, config.gap_measure);
        let (j_max, norm) = next.max_state_norm(problem.physical_states());
        let defect = dynamics_defect(problem, &next, config.scheme)?;
        let boundary = boundary_residual(problem, &next);
        let shooting = observer.after_solve(&IterationContext {
            k: k + 1,
            iterate: &next,
            gamma: &gamma,
            strict,
            subproblem: &sub,
            solution: &sol,
        });
        history.records.push(IterationRecord {
            k: k + 1,
            radius: used_radius,
            cost: trajectory_cost(problem, &next, config.scheme),
            control_gap: gap,
            defect,
            boundary_residual: boundary,
            strict,
            final_time: next.final_time,
            solver_status: sol.status,
            solver_iterations: sol.iterations,
            shooting,
        });
        debug!(
            "scp k={} radius={used_radius:.4} gap={gap:.3e} defect={defect:.3e} boundary={boundary:.3e} tf={:.5}",
            k + 1,
            next.final_time
        );
        history.radii.push(used_radius);
        history.duals.push(gamma);
        history.strict_flags.push(strict);
        history.control_gaps.push(gap);
        history.iterates.push(next.clone());
        warm = Some(sol.clone());
        last = Some(LastSolve {
            subproblem: sub,
            solution: sol,
        });

        if norm > bound {
            status = ScpStatus::Unbounded;
            failed_at = Some(k + 1);
            warn!(
                "iterate {} leaves the state bound: |x| = {norm:.3e} > {bound:.3e} at t = {:.4}",
                k + 1,
                next.time(j_max)
            );
            break;
        }
        if observer.should_stop() {
            status = ScpStatus::Stopped;
            break;
        }
        if check_convergence(&history, config.conv_tol) && boundary <= config.boundary_tol {
            status = ScpStatus::Converged;
            break;
        }
        radius = rule.next_radius(radius, k, &prev, &next);
    }
    let final_iterate = history.iterates.last().expect("guess present").clone();
    Ok(ScpRun {
        history,
        final_iterate,
        status,
        last,
        failed_at,
    })
}

/// Transcribe and solve; on infeasibility retry once with the radius doubled.
fn solve_with_retry(
    problem: &OcpProblem,
    prev: &DiscreteTrajectory,
    radius: f64,
    config: &ScpConfig,
    warm: Option<&SolverSolution>,
) -> Result<Option<(ConvexSubproblem, SolverSolution, f64)>> {
    let options = config.transcription();
    let build = |center: Option<&DiscreteTrajectory>, r: f64, soft: Option<f64>| -> Result<ConvexSubproblem> {
        let sub = transcribe_centered(problem, prev, r, options, center)?;
        Ok(match soft {
            Some(w) => sub.with_soft_boundary(w),
            None => sub,
        })
    };
    let attempts = [(radius, None), (2.0 * radius, None), (radius, config.elastic_weight)];
    for (attempt, &(r, soft)) in attempts.iter().enumerate() {
        if attempt == 2 && soft.is_none() {
            break;
        }
        let sub = build(None, r, soft)?;
        let sol = solver::solve(&sub, &config.solver, warm)?;
        if sol.status != SolverStatus::Infeasible {
            if config.cost_refinements > 0 && !problem.quadratic_costs() {
                let (sub, sol) = refine_cost_models(&build, r, soft, config, sub, sol)?;
                return Ok(Some((sub, sol, r)));
            }
            return Ok(Some((sub, sol, r)));
        }
        match attempt {
            0 => warn!("subproblem infeasible at radius {r:.4e}; retrying with doubled radius"),
            1 if config.elastic_weight.is_some() => warn!("still infeasible; retrying with an elastic boundary condition"),
            _ => {}
        }
    }
    Ok(None)
}

type Builder<'a> = dyn Fn(Option<&DiscreteTrajectory>, f64, Option<f64>) -> Result<ConvexSubproblem> + 'a;

/// Subproblem objective with `G` and `H` evaluated exactly at `z`.
fn exact_objective(build: &Builder, radius: f64, soft: Option<f64>, template: &ConvexSubproblem, z: &DVector<f64>) -> Result<f64> {
    let center = template.extract(z)?;
    Ok(build(Some(&center), radius, soft)?.objective(z))
}

/// Solve the subproblem with `G` and `H` kept exact: re-expand their
/// second-order models at the current point, solve, and backtrack along
/// the step on the exact objective until the point stops moving.
fn refine_cost_models(
    build: &Builder,
    radius: f64,
    soft: Option<f64>,
    config: &ScpConfig,
    mut sub: ConvexSubproblem,
    mut sol: SolverSolution,
) -> Result<(ConvexSubproblem, SolverSolution)> {
    let mut z = sol.primal.clone();
    for pass in 0..config.cost_refinements {
        let center = sub.extract(&z)?;
        let sub_c = build(Some(&center), radius, soft)?;
        let sol_c = solver::solve(&sub_c, &config.solver, Some(&sol))?;
        if sol_c.status == SolverStatus::Infeasible {
            break;
        }
        let j0 = sub_c.objective(&z);
        let d = &sol_c.primal - &z;
        let decrease = j0 - sol_c.objective;
        let scale = 1.0 + j0.abs();
        sub = sub_c;
        sol = sol_c;
        if d.amax() <= 1e-9 * (1.0 + z.amax()) || decrease <= 1e-12 * scale {
            debug!("cost models settled after {pass} re-expansions");
            return Ok((sub, sol));
        }
        let mut alpha = 1.0;
        while alpha > 1e-4 {
            let trial = &z + &d * alpha;
            if exact_objective(build, radius, soft, &sub, &trial)? <= j0 - 1e-4 * alpha * decrease {
                break;
            }
            alpha *= 0.5;
        }
        if alpha <= 1e-4 {
            debug!("cost-model line search stalled at pass {pass}");
            return Ok((sub, sol));
        }
        z = &z + &d * alpha;
    }
    Ok((sub, sol))
}

#[cfg(test)]
mod tests;
