use std::str::FromStr;

use log::{info, warn};
use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::scenario::{sample_scenario, scenario_seeds, Scenario};
use crate::error::{Error, Result};
use crate::pmp::{pmp_residual, scp_extremal, PmpResidual, DEFAULT_REFINEMENT};
use crate::problem::{make_dubins, DubinsParams, FinalAngle, OcpProblem};
use crate::scp::{run_scp, straight_line_guess, IterationRecord, ScpConfig, ScpRun, ScpStatus};
use crate::shooting::{run_accelerated_scp, ShootingSettings, DEFAULT_STEPS};
use crate::transcription::DiscreteTrajectory;

/// Histogram bins cover iteration counts `1..=HIST_BINS`; longer runs land in the last bin.
pub const HIST_BINS: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ThetaMode {
    Free,
    Fixed,
}

impl FromStr for ThetaMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "free" => Ok(ThetaMode::Free),
            "fixed" => Ok(ThetaMode::Fixed),
            other => Err(Error::Parse(format!("theta mode must be 'free' or 'fixed', got '{other}'"))),
        }
    }
}

impl std::fmt::Display for ThetaMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ThetaMode::Free => "free",
            ThetaMode::Fixed => "fixed",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Plain,
    Accelerated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyConfig {
    pub n_scenarios: usize,
    pub theta_mode: ThetaMode,
    /// Also run shooting-accelerated SCP on every scenario.
    pub accelerate: bool,
    pub master_seed: u64,
    pub params: DubinsParams,
    pub scp: ScpConfig,
    pub shooting: ShootingSettings,
    pub shooting_steps: usize,
}

impl Default for StudyConfig {
    fn default() -> Self {
        StudyConfig {
            n_scenarios: 100,
            theta_mode: ThetaMode::Free,
            accelerate: false,
            master_seed: 0,
            params: DubinsParams::default(),
            scp: ScpConfig::default(),
            shooting: ShootingSettings::default(),
            shooting_steps: DEFAULT_STEPS,
        }
    }
}

/// One row of `records.csv`: a scenario run under one method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyRecord {
    pub index: usize,
    pub seed: u64,
    pub theta_mode: ThetaMode,
    pub method: Method,
    pub status: ScpStatus,
    pub converged: bool,
    pub iterations: usize,
    /// Strict trust-region satisfaction of the last solve.
    pub strict: bool,
    pub cost: f64,
    pub final_time: f64,
    pub boundary_residual: f64,
    /// Largest state norm over all iterates of the run.
    pub max_state_norm: f64,
    pub state_bound: f64,
    pub shooting_success: bool,
    pub adjoint_defect: f64,
    pub maximality_gap: f64,
    pub transversality_endpoint: f64,
    pub transversality_time: f64,
    pub nontriviality_margin: f64,
    pub pmp_boundary_residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: Method,
    pub runs: usize,
    pub converged: usize,
    pub convergence_rate: f64,
    /// Over converged runs.
    pub mean_iterations: f64,
    pub median_iterations: f64,
    /// Fraction of converged runs whose last solve was strictly inside its trust region.
    pub strict_rate: f64,
    /// `histogram[i]` counts converged runs with `i + 1` iterations.
    pub histogram: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudySummary {
    pub n_scenarios: usize,
    pub theta_mode: ThetaMode,
    pub master_seed: u64,
    pub methods: Vec<MethodSummary>,
    /// Accelerated over plain mean iterations, when both ran.
    pub acceleration_ratio: Option<f64>,
    /// Seeds whose scenario could not be generated.
    pub skipped_seeds: Vec<u64>,
}

/// Iteration log line tagged with its run.
#[derive(Debug, Clone, Serialize)]
pub struct HistoryLine<'a> {
    pub seed: u64,
    pub method: Method,
    #[serde(flatten)]
    pub record: &'a IterationRecord,
}

/// Everything one scenario produced.
#[derive(Debug, Clone)]
pub struct ScenarioOutcome {
    pub scenario: Scenario,
    pub records: Vec<StudyRecord>,
    pub plain_trajectory: DiscreteTrajectory,
    pub histories: Vec<(Method, Vec<IterationRecord>)>,
}

#[derive(Debug, Clone)]
pub struct StudyResult {
    pub summary: StudySummary,
    pub outcomes: Vec<ScenarioOutcome>,
}

impl StudyResult {
    pub fn records(&self) -> Vec<StudyRecord> {
        self.outcomes.iter().flat_map(|o| o.records.iter().cloned()).collect()
    }
}

/// Dubins problem of a scenario; the sampled final angle is used only in fixed mode.
pub fn scenario_problem(scenario: &Scenario, params: &DubinsParams, mode: ThetaMode) -> Result<OcpProblem> {
    let params = DubinsParams {
        obstacles: scenario.obstacles.clone(),
        ..params.clone()
    };
    let angle = match mode {
        ThetaMode::Free => FinalAngle::Free,
        ThetaMode::Fixed => FinalAngle::Fixed(scenario.xf[2]),
    };
    make_dubins(&params, scenario.x0, scenario.target(), angle)
}

/// Straight line from `x⁰` to the sampled `x_f`, zero controls.
pub fn scenario_guess(problem: &OcpProblem, scenario: &Scenario, nodes: usize) -> Result<DiscreteTrajectory> {
    straight_line_guess(problem, &DVector::from_column_slice(&scenario.xf), nodes, scenario.tf_guess)
}

fn max_norm(problem: &OcpProblem, run: &ScpRun) -> f64 {
    run.history
        .iterates
        .iter()
        .map(|it| it.max_state_norm(problem.physical_states()).1)
        .fold(0.0, f64::max)
}

fn blank_residual() -> PmpResidual {
    PmpResidual {
        adjoint_defect: f64::NAN,
        maximality_gap: f64::NAN,
        transversality_endpoint: f64::NAN,
        transversality_time: f64::NAN,
        nontriviality_margin: f64::NAN,
        boundary_residual: f64::NAN,
    }
}

#[allow(clippy::too_many_arguments)]
fn record(
    index: usize,
    scenario: &Scenario,
    mode: ThetaMode,
    method: Method,
    problem: &OcpProblem,
    run: &ScpRun,
    converged: bool,
    shooting_success: bool,
    residual: PmpResidual,
    bound: f64,
) -> StudyRecord {
    let last = run.history.records.last();
    StudyRecord {
        index,
        seed: scenario.seed,
        theta_mode: mode,
        method,
        status: run.status,
        converged,
        iterations: run.iterations(),
        strict: run.history.strict_flags.last().copied().unwrap_or(false),
        cost: last.map_or(f64::NAN, |r| r.cost),
        final_time: run.final_iterate.final_time,
        boundary_residual: last.map_or(f64::NAN, |r| r.boundary_residual),
        max_state_norm: max_norm(problem, run),
        state_bound: bound,
        shooting_success,
        adjoint_defect: residual.adjoint_defect,
        maximality_gap: residual.maximality_gap,
        transversality_endpoint: residual.transversality_endpoint,
        transversality_time: residual.transversality_time,
        nontriviality_margin: residual.nontriviality_margin,
        pmp_boundary_residual: residual.boundary_residual,
    }
}

/// Run one scenario under the configured methods.
pub fn run_scenario(index: usize, scenario: &Scenario, config: &StudyConfig) -> Result<ScenarioOutcome> {
    let problem = scenario_problem(scenario, &config.params, config.theta_mode)?;
    let guess = scenario_guess(&problem, scenario, config.scp.node_count)?;
    let bound = config.scp.state_bound.unwrap_or(problem.state_bound());

    let plain = run_scp(&problem, &guess, &config.scp)?;
    let converged = plain.status == ScpStatus::Converged;
    let residual = if converged {
        scp_extremal(&plain).and_then(|e| pmp_residual(&problem, &e, DEFAULT_REFINEMENT))?
    } else {
        blank_residual()
    };
    let mut records = vec![record(index, scenario, config.theta_mode, Method::Plain, &problem, &plain, converged, false, residual, bound)];
    let mut histories = vec![(Method::Plain, plain.history.records.clone())];

    if config.accelerate {
        let fast = run_accelerated_scp(&problem, &guess, &config.scp, &config.shooting, config.shooting_steps)?;
        let (converged, residual) = match (&fast.shooting, fast.run.status) {
            (Some(shot), _) => {
                let ext = shot.trajectory.as_ref().ok_or_else(|| Error::Degenerate("converged shooting without trajectory".into()))?;
                (true, pmp_residual(&problem, ext, DEFAULT_REFINEMENT)?)
            }
            (None, ScpStatus::Converged) => (true, scp_extremal(&fast.run).and_then(|e| pmp_residual(&problem, &e, DEFAULT_REFINEMENT))?),
            _ => (false, blank_residual()),
        };
        let mut rec = record(index, scenario, config.theta_mode, Method::Accelerated, &problem, &fast.run, converged, fast.shooting.is_some(), residual, bound);
        if let Some(shot) = &fast.shooting {
            rec.final_time = shot.tf;
            rec.boundary_residual = residual.boundary_residual;
        }
        records.push(rec);
        histories.push((Method::Accelerated, fast.run.history.records.clone()));
    }
    Ok(ScenarioOutcome {
        scenario: scenario.clone(),
        records,
        plain_trajectory: plain.final_iterate,
        histories,
    })
}

fn median(mut xs: Vec<f64>) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

/// Aggregate statistics from records alone.
pub fn aggregate(records: &[StudyRecord], method: Method) -> MethodSummary {
    let runs: Vec<&StudyRecord> = records.iter().filter(|r| r.method == method).collect();
    let done: Vec<&StudyRecord> = runs.iter().copied().filter(|r| r.converged).collect();
    let iters: Vec<f64> = done.iter().map(|r| r.iterations as f64).collect();
    let mut histogram = vec![0; HIST_BINS];
    for r in &done {
        histogram[r.iterations.clamp(1, HIST_BINS) - 1] += 1;
    }
    let share = |k: usize, of: usize| if of == 0 { f64::NAN } else { k as f64 / of as f64 };
    MethodSummary {
        method,
        runs: runs.len(),
        converged: done.len(),
        convergence_rate: share(done.len(), runs.len()),
        mean_iterations: if iters.is_empty() { f64::NAN } else { iters.iter().sum::<f64>() / iters.len() as f64 },
        median_iterations: median(iters),
        strict_rate: share(done.iter().filter(|r| r.strict).count(), done.len()),
        histogram,
    }
}

pub fn summarize(records: &[StudyRecord], config: &StudyConfig, skipped_seeds: Vec<u64>) -> StudySummary {
    let mut methods = vec![aggregate(records, Method::Plain)];
    if config.accelerate {
        methods.push(aggregate(records, Method::Accelerated));
    }
    let acceleration_ratio = (methods.len() == 2).then(|| methods[1].mean_iterations / methods[0].mean_iterations);
    StudySummary {
        n_scenarios: config.n_scenarios,
        theta_mode: config.theta_mode,
        master_seed: config.master_seed,
        methods,
        acceleration_ratio,
        skipped_seeds,
    }
}

/// Run the randomized study on a worker pool. Scenario failures are logged
/// and skipped; they never abort the study.
pub fn run_study(config: &StudyConfig) -> Result<StudyResult> {
    if config.n_scenarios == 0 {
        return Err(Error::Config("the study needs at least one scenario".into()));
    }
    config.scp.validate()?;
    let seeds = scenario_seeds(config.master_seed, config.n_scenarios);
    let results: Vec<(u64, Result<ScenarioOutcome>)> = seeds
        .par_iter()
        .enumerate()
        .map(|(index, &seed)| (seed, sample_scenario(seed).and_then(|sc| run_scenario(index, &sc, config))))
        .collect();
    let mut outcomes = Vec::with_capacity(results.len());
    let mut skipped = Vec::new();
    for (seed, r) in results {
        match r {
            Ok(o) => outcomes.push(o),
            Err(e) => {
                warn!("scenario {seed} skipped: {e}");
                skipped.push(seed);
            }
        }
    }
    let records: Vec<StudyRecord> = outcomes.iter().flat_map(|o| o.records.iter().cloned()).collect();
    let summary = summarize(&records, config, skipped);
    for m in &summary.methods {
        info!(
            "{:?}: converged {}/{}, mean iterations {:.3}",
            m.method, m.converged, m.runs, m.mean_iterations
        );
    }
    Ok(StudyResult { summary, outcomes })
}
