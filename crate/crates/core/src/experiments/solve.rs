use nalgebra::DMatrix;
use serde::Serialize;

use super::output::{extremal_table, trajectory_table, Table};
use crate::error::{Error, Result};
use crate::manifold::{geometric_extremal_residual, GeometricResidual};
use crate::pmp::{pmp_residual, scp_extremal, Extremal, PmpResidual, DEFAULT_REFINEMENT};
use crate::problem::config::{BuiltProblem, ProblemFile};
use crate::scp::{boundary_residual, run_scp, straight_line_guess, ScpRun, ScpStatus};
use crate::shooting::{run_accelerated_scp, ShootingResult};
use crate::transcription::{dynamics_defect, DiscreteTrajectory, TimeGrid};

#[derive(Debug, Clone, Serialize)]
pub struct ShootingReport {
    pub converged: bool,
    pub iterations: usize,
    pub residual_norm: f64,
    pub final_time: f64,
    pub p0: Vec<f64>,
}

impl From<&ShootingResult> for ShootingReport {
    fn from(r: &ShootingResult) -> Self {
        ShootingReport {
            converged: r.converged,
            iterations: r.iterations,
            residual_norm: r.residual_norm,
            final_time: r.tf,
            p0: r.p0.as_slice().to_vec(),
        }
    }
}

/// Outcome of solving a problem file.
#[derive(Debug, Clone, Serialize)]
pub struct SolveReport {
    pub status: ScpStatus,
    pub iterations: usize,
    pub strict: bool,
    pub final_time: f64,
    pub cost: f64,
    pub boundary_residual: f64,
    pub dynamics_defect: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pmp: Option<PmpResidual>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub geometric: Option<GeometricResidual>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub shooting: Option<ShootingReport>,
}

pub struct SolveOutput {
    pub built: BuiltProblem,
    pub run: ScpRun,
    /// Shooting solution when accelerated SCP finished by shooting.
    pub shooting: Option<ShootingResult>,
    pub extremal: Option<Extremal>,
    pub report: SolveReport,
}

impl SolveOutput {
    /// Trajectory table; costate columns are included whenever an extremal exists.
    pub fn table(&self) -> Table {
        match &self.extremal {
            Some(e) => extremal_table(e, &self.built.state_names, &self.built.control_names),
            None => trajectory_table(&self.run.final_iterate, &self.built.state_names, &self.built.control_names),
        }
    }
}

pub fn solve_file(file: &ProblemFile) -> Result<SolveOutput> {
    file.scp.validate()?;
    let built = file.build()?;
    let problem = &built.problem;
    let guess = straight_line_guess(problem, &built.guess_target, file.scp.node_count, built.tf_guess)?;
    let (run, shooting) = if file.shooting.accelerate {
        let fast = run_accelerated_scp(problem, &guess, &file.scp, &file.shooting.settings, file.shooting.steps)?;
        (fast.run, fast.shooting)
    } else {
        (run_scp(problem, &guess, &file.scp)?, None)
    };
    let extremal = match &shooting {
        Some(s) => s.trajectory.clone(),
        None if run.last.is_some() => Some(scp_extremal(&run)?),
        None => None,
    };
    let converged = run.status == ScpStatus::Converged || shooting.is_some();
    let pmp = match (&extremal, converged) {
        (Some(e), true) => Some(pmp_residual(problem, e, DEFAULT_REFINEMENT)?),
        _ => None,
    };
    let geometric = match (&extremal, &built.manifold, converged) {
        (Some(e), Some(m), true) => Some(geometric_extremal_residual(problem, m, e)?),
        _ => None,
    };
    let last = run.history.records.last();
    let report = SolveReport {
        status: run.status,
        iterations: run.iterations(),
        strict: run.history.strict_flags.last().copied().unwrap_or(false),
        final_time: shooting.as_ref().map_or(run.final_iterate.final_time, |s| s.tf),
        cost: last.map_or(f64::NAN, |r| r.cost),
        boundary_residual: match &shooting {
            Some(s) => s.trajectory.as_ref().map_or(f64::NAN, |e| {
                let g = problem.boundary().eval(&e.state(e.len() - 1));
                if g.is_empty() { 0.0 } else { g.amax() }
            }),
            None => boundary_residual(problem, &run.final_iterate),
        },
        dynamics_defect: dynamics_defect(problem, &run.final_iterate, file.scp.scheme)?,
        pmp,
        geometric,
        shooting: shooting.as_ref().map(ShootingReport::from),
    };
    Ok(SolveOutput {
        built,
        run,
        shooting,
        extremal,
        report,
    })
}

/// Residuals of a trajectory table against a problem file.
#[derive(Debug, Clone, Serialize)]
pub struct CheckReport {
    pub samples: usize,
    pub final_time: f64,
    pub boundary_residual: f64,
    /// Trapezoidal/Euler defect; present for uniformly spaced samples.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dynamics_defect: Option<f64>,
    /// Present when the table carries `p_<state>` columns.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pmp: Option<PmpResidual>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub geometric: Option<GeometricResidual>,
}

fn columns(table: &Table, names: &[String]) -> Option<DMatrix<f64>> {
    let idx: Option<Vec<usize>> = names.iter().map(|n| table.column(n)).collect();
    idx.map(|idx| DMatrix::from_fn(table.values.nrows(), idx.len(), |r, c| table.values[(r, idx[c])]))
}

pub fn check_table(file: &ProblemFile, table: &Table) -> Result<CheckReport> {
    let built = file.build()?;
    let problem = &built.problem;
    let missing = |what: &str| Error::Parse(format!("table lacks {what} columns (have {:?})", table.columns));
    let t_col = table.column("t").ok_or_else(|| missing("'t'"))?;
    let times: Vec<f64> = table.values.column(t_col).iter().copied().collect();
    let states = columns(table, &built.state_names).ok_or_else(|| missing("state"))?;
    let controls = columns(table, &built.control_names).ok_or_else(|| missing("control"))?;
    let n = times.len();
    if n < 2 || times[0] != 0.0 {
        return Err(Error::Parse("times must start at 0 and have at least two samples".into()));
    }
    let tf = times[n - 1];
    let g = problem.boundary().eval(&states.row(n - 1).transpose());
    let boundary = if g.is_empty() { 0.0 } else { g.amax() };

    let grid = TimeGrid::uniform(n)?;
    let uniform = times.iter().zip(grid.nodes()).all(|(t, s)| (t - s * tf).abs() <= 1e-9 * tf.max(1.0));
    let dynamics_defect = if uniform {
        let traj = DiscreteTrajectory::new(grid, states.clone(), controls.clone(), tf)?;
        Some(dynamics_defect(problem, &traj, file.scp.scheme)?)
    } else {
        None
    };

    let costate_names: Vec<String> = built.state_names.iter().map(|s| format!("p_{s}")).collect();
    let (pmp, geometric) = match columns(table, &costate_names) {
        Some(costates) => {
            let p_final = costates.row(n - 1).transpose();
            let jac = problem.boundary().jacobian(&states.row(n - 1).transpose());
            let multiplier = jac
                .transpose()
                .svd(true, true)
                .solve(&p_final, 1e-12)
                .map_err(|e| Error::Degenerate(e.to_string()))?;
            let ext = Extremal::new(times, states, costates, -1.0, controls, multiplier)?;
            let pmp = pmp_residual(problem, &ext, DEFAULT_REFINEMENT)?;
            let geo = built.manifold.as_ref().map(|m| geometric_extremal_residual(problem, m, &ext)).transpose()?;
            (Some(pmp), geo)
        }
        None => (None, None),
    };
    Ok(CheckReport {
        samples: n,
        final_time: tf,
        boundary_residual: boundary,
        dynamics_defect,
        pmp,
        geometric,
    })
}
