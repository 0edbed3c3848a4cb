//! The randomized Dubins study.

mod output;
mod scenario;
mod solve;
mod study;

pub use output::{
    dubins_names, extremal_table, read_records, trajectory_table, write_histogram, write_records, write_study, Table, DUBINS_COLUMNS,
};
pub use scenario::{sample_scenario, scenario_seeds, Scenario, OBSTACLE_COUNT, OBSTACLE_RADIUS};
pub use solve::{check_table, solve_file, CheckReport, ShootingReport, SolveOutput, SolveReport};
pub use study::{
    aggregate, run_scenario, run_study, scenario_guess, scenario_problem, summarize, HistoryLine, Method, MethodSummary, ScenarioOutcome,
    StudyConfig, StudyRecord, StudyResult, StudySummary, ThetaMode, HIST_BINS,
};

#[cfg(test)]
mod tests;
