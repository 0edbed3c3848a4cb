//! Indirect shooting on `(p(0), t_f)` and the shooting-accelerated SCP loop.

use log::debug;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::ode::rk4_step;
use crate::pmp::{adjoint_rhs, hamiltonian, maximize_hamiltonian, Extremal};
use crate::problem::{FinalTime, OcpProblem};
use crate::scp::{run_scp_observed, GeometricShrink, IterationContext, IterationObserver, ScpConfig, ScpRun, ShootingAttempt};

pub const DEFAULT_STEPS: usize = 200;

/// Role of one final-state component in the shooting function.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum FinalComponent {
    /// Row `x_i(t_f) − value`.
    Fixed(f64),
    /// Row `p_i(t_f)`.
    Free,
}

#[derive(Debug, Clone)]
pub struct ShootingProblem {
    pub problem: OcpProblem,
    pub p0_guess: DVector<f64>,
    pub tf_guess: f64,
    pub steps: usize,
    pub final_state: Vec<FinalComponent>,
    pub final_time: FinalTime,
}

impl ShootingProblem {
    /// Final-state modes read off a coordinate-selection boundary map
    /// `gᵢ(x) = x_{k(i)} − cᵢ`.
    pub fn new(problem: &OcpProblem, p0_guess: DVector<f64>, tf_guess: f64) -> Result<Self> {
        let n = problem.state_dim();
        check_dim("shooting costate guess", n, p0_guess.len())?;
        let x0 = problem.initial_state();
        let dg = problem.boundary().jacobian(x0);
        let g = problem.boundary().eval(x0);
        let mut final_state = vec![FinalComponent::Free; n];
        for i in 0..dg.nrows() {
            let row = dg.row(i);
            let k = (0..n).find(|&k| row[k] == 1.0).filter(|&k| (0..n).all(|j| j == k || row[j] == 0.0));
            let k = k.ok_or_else(|| Error::Config("shooting needs a boundary map that selects final-state components".into()))?;
            if final_state[k] != FinalComponent::Free {
                return Err(Error::Config(format!("final-state component {k} is prescribed twice")));
            }
            final_state[k] = FinalComponent::Fixed(x0[k] - g[i]);
        }
        let final_time = problem.final_time();
        let tf_guess = match final_time {
            FinalTime::Fixed(tf) => tf,
            FinalTime::Free => tf_guess,
        };
        let sp = ShootingProblem {
            problem: problem.clone(),
            p0_guess,
            tf_guess,
            steps: DEFAULT_STEPS,
            final_state,
            final_time,
        };
        sp.validate()?;
        Ok(sp)
    }

    pub fn with_steps(mut self, steps: usize) -> Self {
        self.steps = steps;
        self
    }

    fn validate(&self) -> Result<()> {
        check_dim("final-state modes", self.problem.state_dim(), self.final_state.len())?;
        if self.steps < 2 {
            return Err(Error::Config("shooting needs at least two integration steps".into()));
        }
        if !(self.tf_guess > 0.0) {
            return Err(Error::Config(format!("final time guess must be positive, got {}", self.tf_guess)));
        }
        Ok(())
    }

    /// Number of root-finding unknowns: `n`, plus one for free final time.
    pub fn unknown_count(&self) -> usize {
        self.problem.state_dim() + usize::from(self.final_time == FinalTime::Free)
    }

    fn split(&self, z: &DVector<f64>) -> (DVector<f64>, f64) {
        let n = self.problem.state_dim();
        let tf = match self.final_time {
            FinalTime::Free => z[n],
            FinalTime::Fixed(tf) => tf,
        };
        (z.rows(0, n).into_owned(), tf)
    }

    fn initial_unknowns(&self) -> DVector<f64> {
        let n = self.problem.state_dim();
        let mut z = DVector::zeros(self.unknown_count());
        z.rows_mut(0, n).copy_from(&self.p0_guess);
        if self.final_time == FinalTime::Free {
            z[n] = self.tf_guess;
        }
        z
    }
}

/// Joint right-hand side `(f(x, φ), −∂H/∂x(x, p, φ))` with `p⁰ = −1`.
fn flow_rhs(problem: &OcpProblem, t: f64, y: &DVector<f64>) -> DVector<f64> {
    let n = problem.state_dim();
    let x = y.rows(0, n).into_owned();
    let p = y.rows(n, n).into_owned();
    let u = maximize_hamiltonian(problem, t, &x, &p, -1.0).expect("dimensions checked by the caller");
    let mut dy = DVector::zeros(2 * n);
    dy.rows_mut(0, n).copy_from(&problem.dynamics(t, &x, &u));
    dy.rows_mut(n, n).copy_from(&adjoint_rhs(problem, t, &x, &p, -1.0, &u));
    dy
}

/// Integrate state and costate from `(x⁰, p0)` over `[0, tf]` with `steps`
/// RK4 steps, controls from the maximality map. The returned extremal has
/// `steps + 1` samples; fails once the state leaves the problem's bound.
pub fn integrate_state_costate(problem: &OcpProblem, p0: &DVector<f64>, tf: f64, steps: usize) -> Result<Extremal> {
    let n = problem.state_dim();
    check_dim("initial costate", n, p0.len())?;
    if !(tf > 0.0) || steps < 2 {
        return Err(Error::Config(format!("need tf > 0 and at least two steps, got tf = {tf}, steps = {steps}")));
    }
    let bound = problem.state_bound();
    let phys: Vec<usize> = problem.physical_states().collect();
    let h = tf / steps as f64;
    let mut y = DVector::zeros(2 * n);
    y.rows_mut(0, n).copy_from(problem.initial_state());
    y.rows_mut(n, n).copy_from(p0);
    let mut states = DMatrix::zeros(steps + 1, n);
    let mut costates = DMatrix::zeros(steps + 1, n);
    let mut controls = DMatrix::zeros(steps + 1, problem.control_dim());
    let rhs = |t: f64, y: &DVector<f64>| flow_rhs(problem, t, y);
    for k in 0..=steps {
        let t = k as f64 * h;
        if k > 0 {
            y = rk4_step(&rhs, t - h, &y, h);
        }
        let norm = phys.iter().map(|&i| y[i].abs()).fold(0.0, f64::max);
        if !(norm <= bound) {
            return Err(Error::Divergence { at: t, norm, bound });
        }
        let x = y.rows(0, n).into_owned();
        let p = y.rows(n, n).into_owned();
        controls.row_mut(k).copy_from(&maximize_hamiltonian(problem, t, &x, &p, -1.0)?.transpose());
        states.row_mut(k).copy_from(&x.transpose());
        costates.row_mut(k).copy_from(&p.transpose());
    }
    let times = (0..=steps).map(|k| if k == steps { tf } else { k as f64 * h }).collect();
    let x_f = states.row(steps).transpose();
    let p_f = costates.row(steps).transpose();
    let dg = problem.boundary().jacobian(&x_f);
    let multiplier = if dg.nrows() == 0 {
        DVector::zeros(0)
    } else {
        dg.transpose().svd(true, true).solve(&p_f, 1e-12).map_err(|e| Error::Degenerate(e.to_string()))?
    };
    Extremal::new(times, states, costates, -1.0, controls, multiplier)
}

/// `F(p0, tf)` with `n + 1` rows: per final-state component either
/// `x_i(t_f) − x_{i,f}` or `p_i(t_f)`, then `max_v H(t_f)` for free final
/// time (zero when the final time is fixed).
pub fn shooting_function(sp: &ShootingProblem, p0: &DVector<f64>, tf: f64) -> Result<DVector<f64>> {
    let ext = integrate_state_costate(&sp.problem, p0, tf, sp.steps)?;
    Ok(residual_rows(sp, &ext))
}

fn residual_rows(sp: &ShootingProblem, ext: &Extremal) -> DVector<f64> {
    let n = sp.problem.state_dim();
    let last = ext.len() - 1;
    let (x, p) = (ext.state(last), ext.costate(last));
    let mut f = DVector::zeros(n + 1);
    for (i, mode) in sp.final_state.iter().enumerate() {
        f[i] = match *mode {
            FinalComponent::Fixed(v) => x[i] - v,
            FinalComponent::Free => p[i],
        };
    }
    if sp.final_time == FinalTime::Free {
        f[n] = hamiltonian(&sp.problem, ext.final_time, &x, &p, -1.0, &ext.control(last));
    }
    f
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ShootingSettings {
    pub tol: f64,
    pub max_iter: usize,
    /// Relative forward-difference step.
    pub jacobian_fd_step: f64,
}

impl Default for ShootingSettings {
    fn default() -> Self {
        ShootingSettings {
            tol: 1e-10,
            max_iter: 50,
            jacobian_fd_step: 1e-7,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ShootingResult {
    pub converged: bool,
    pub p0: DVector<f64>,
    pub tf: f64,
    /// `‖F‖∞` at the returned point.
    pub residual_norm: f64,
    /// Newton steps taken (one Jacobian each).
    pub iterations: usize,
    pub trajectory: Option<Extremal>,
    /// Reason for a failure.
    pub message: Option<String>,
}

impl ShootingResult {
    pub fn attempt(&self) -> ShootingAttempt {
        ShootingAttempt {
            success: self.converged,
            residual: self.residual_norm,
            newton_iterations: self.iterations,
        }
    }
}

struct Evaluation {
    f: DVector<f64>,
    ext: Extremal,
}

fn evaluate(sp: &ShootingProblem, z: &DVector<f64>) -> Result<Evaluation> {
    let (p0, tf) = sp.split(z);
    if !(tf > 0.0) {
        return Err(Error::Config(format!("final time left the positive axis: {tf}")));
    }
    if sp.final_time == FinalTime::Free && tf > sp.problem.horizon_cap() {
        return Err(Error::Config(format!("final time {tf} exceeds the horizon cap")));
    }
    let ext = integrate_state_costate(&sp.problem, &p0, tf, sp.steps)?;
    let mut f = residual_rows(sp, &ext);
    if sp.final_time != FinalTime::Free {
        f = f.rows(0, sp.problem.state_dim()).into_owned();
    }
    Ok(Evaluation { f, ext })
}

fn jacobian(sp: &ShootingProblem, z: &DVector<f64>, f: &DVector<f64>, step: f64) -> Result<DMatrix<f64>> {
    let m = z.len();
    let mut jac = DMatrix::zeros(f.len(), m);
    for j in 0..m {
        let h = step * z[j].abs().max(1.0);
        let mut zh = z.clone();
        zh[j] += h;
        let fh = evaluate(sp, &zh)?.f;
        jac.set_column(j, &((fh - f) / h));
    }
    Ok(jac)
}

/// Powell dogleg step inside radius `delta`.
fn dogleg(jac: &DMatrix<f64>, f: &DVector<f64>, newton: &DVector<f64>, delta: f64) -> DVector<f64> {
    if newton.norm() <= delta {
        return newton.clone();
    }
    let g = jac.transpose() * f;
    let jg = jac * &g;
    let jg2 = jg.norm_squared();
    if jg2 == 0.0 || g.norm() == 0.0 {
        return newton * (delta / newton.norm());
    }
    let cauchy = &g * (-g.norm_squared() / jg2);
    if cauchy.norm() >= delta {
        let scale = delta / cauchy.norm();
        return cauchy * scale;
    }
    // Point on the segment cauchy → newton at distance delta.
    let d = newton - &cauchy;
    let (a, b, c) = (d.norm_squared(), 2.0 * cauchy.dot(&d), cauchy.norm_squared() - delta * delta);
    let tau = (-b + (b * b - 4.0 * a * c).sqrt()) / (2.0 * a);
    cauchy + d * tau
}

fn failure(z: &DVector<f64>, sp: &ShootingProblem, residual_norm: f64, iterations: usize, message: String) -> ShootingResult {
    debug!("shooting failed after {iterations} steps: {message}");
    let (p0, tf) = sp.split(z);
    ShootingResult {
        converged: false,
        p0,
        tf,
        residual_norm,
        iterations,
        trajectory: None,
        message: Some(message),
    }
}

/// Damped Newton with a forward-difference Jacobian and a dogleg trust
/// region. Converged iff `‖F‖∞ ≤ tol` within `max_iter` steps.
pub fn solve_shooting(sp: &ShootingProblem, settings: &ShootingSettings) -> Result<ShootingResult> {
    sp.validate()?;
    if !(settings.tol > 0.0 && settings.jacobian_fd_step > 0.0) {
        return Err(Error::Config("shooting tolerance and difference step must be positive".into()));
    }
    let mut z = sp.initial_unknowns();
    let mut current = match evaluate(sp, &z) {
        Ok(e) => e,
        Err(e) => return Ok(failure(&z, sp, f64::INFINITY, 0, format!("initial integration failed: {e}"))),
    };
    let mut delta = 10.0 * z.norm().max(1.0);
    let mut iterations = 0;
    loop {
        let norm = current.f.amax();
        if norm <= settings.tol {
            let (p0, tf) = sp.split(&z);
            return Ok(ShootingResult {
                converged: true,
                p0,
                tf,
                residual_norm: norm,
                iterations,
                trajectory: Some(current.ext),
                message: None,
            });
        }
        if iterations >= settings.max_iter {
            return Ok(failure(&z, sp, norm, iterations, "iteration limit reached".into()));
        }
        iterations += 1;
        let jac = match jacobian(sp, &z, &current.f, settings.jacobian_fd_step) {
            Ok(j) => j,
            Err(e) => return Ok(failure(&z, sp, norm, iterations, format!("jacobian integration failed: {e}"))),
        };
        let newton = match jac.clone().lu().solve(&(-&current.f)) {
            Some(s) if s.iter().all(|v| v.is_finite()) => s,
            _ => return Ok(failure(&z, sp, norm, iterations, "singular shooting jacobian".into())),
        };
        // Inner loop: shrink until a step decreases ‖F‖².
        loop {
            let step = dogleg(&jac, &current.f, &newton, delta);
            let predicted = current.f.norm_squared() - (&current.f + &jac * &step).norm_squared();
            let trial = evaluate(sp, &(&z + &step));
            let rho = match &trial {
                Ok(t) if predicted > 0.0 => (current.f.norm_squared() - t.f.norm_squared()) / predicted,
                _ => -1.0,
            };
            let length = step.norm();
            if rho < 0.25 {
                delta = 0.25 * length;
            } else if rho > 0.75 && length >= 0.99 * delta {
                delta *= 2.0;
            }
            if rho > 1e-4 {
                z += step;
                current = trial.expect("accepted trial evaluated");
                break;
            }
            if delta <= 1e-14 * z.norm().max(1.0) {
                return Ok(failure(&z, sp, norm, iterations, "trust region collapsed".into()));
            }
        }
    }
}

/// Outcome of the shooting-accelerated loop.
#[derive(Debug, Clone)]
pub struct AcceleratedRun {
    pub run: ScpRun,
    /// The successful shooting solve, if any.
    pub shooting: Option<ShootingResult>,
}

impl AcceleratedRun {
    /// SCP iterations executed.
    pub fn iterations(&self) -> usize {
        self.run.iterations()
    }
}

struct ShootingObserver<'a> {
    problem: &'a OcpProblem,
    settings: &'a ShootingSettings,
    steps: usize,
    success: Option<ShootingResult>,
}

impl IterationObserver for ShootingObserver<'_> {
    fn after_solve(&mut self, ctx: &IterationContext<'_>) -> Option<ShootingAttempt> {
        if self.settings.max_iter == 0 || !ctx.strict {
            return None;
        }
        let attempt = ShootingProblem::new(self.problem, ctx.gamma.clone(), ctx.iterate.final_time)
            .map(|sp| sp.with_steps(self.steps))
            .and_then(|sp| solve_shooting(&sp, self.settings));
        match attempt {
            Ok(result) => {
                debug!(
                    "shooting after solve {}: success={} residual={:.3e} steps={}",
                    ctx.k, result.converged, result.residual_norm, result.iterations
                );
                let log = result.attempt();
                if result.converged {
                    self.success = Some(result);
                }
                Some(log)
            }
            Err(e) => {
                debug!("shooting after solve {} not attempted: {e}", ctx.k);
                Some(ShootingAttempt {
                    success: false,
                    residual: f64::INFINITY,
                    newton_iterations: 0,
                })
            }
        }
    }

    fn should_stop(&self) -> bool {
        self.success.is_some()
    }
}

/// SCP with a shooting attempt after every solve that strictly satisfies its
/// trust region, warm-started from the initial-condition multiplier `γ⁰` and
/// the iterate's final time. Stops at
/// the first shooting success or at SCP termination.
pub fn run_accelerated_scp(
    problem: &OcpProblem,
    guess: &crate::transcription::DiscreteTrajectory,
    config: &ScpConfig,
    settings: &ShootingSettings,
    steps: usize,
) -> Result<AcceleratedRun> {
    let mut observer = ShootingObserver {
        problem,
        settings,
        steps,
        success: None,
    };
    let run = run_scp_observed(problem, guess, config, &GeometricShrink { factor: config.shrink }, &mut observer)?;
    Ok(AcceleratedRun {
        run,
        shooting: observer.success,
    })
}
