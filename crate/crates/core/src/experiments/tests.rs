use std::io::Cursor;

use super::*;
use crate::scp::ScpStatus;

fn small(n: usize, mode: ThetaMode, accelerate: bool) -> StudyConfig {
    StudyConfig {
        n_scenarios: n,
        theta_mode: mode,
        accelerate,
        master_seed: 0,
        ..StudyConfig::default()
    }
}

fn fake(method: Method, iterations: usize, converged: bool, strict: bool) -> StudyRecord {
    StudyRecord {
        index: 0,
        seed: 1,
        theta_mode: ThetaMode::Free,
        method,
        status: if converged { ScpStatus::Converged } else { ScpStatus::MaxIter },
        converged,
        iterations,
        strict,
        cost: 1.0,
        final_time: 5.0,
        boundary_residual: 0.0,
        max_state_norm: 5.0,
        state_bound: 100.0,
        shooting_success: false,
        adjoint_defect: f64::NAN,
        maximality_gap: 0.0,
        transversality_endpoint: 0.0,
        transversality_time: 0.0,
        nontriviality_margin: 1.0,
        pmp_boundary_residual: 0.0,
    }
}

#[test]
fn aggregate_counts_only_converged_runs() {
    let records = vec![
        fake(Method::Plain, 3, true, true),
        fake(Method::Plain, 6, true, false),
        fake(Method::Plain, 40, false, false),
        fake(Method::Plain, 25, true, true),
        fake(Method::Accelerated, 2, true, true),
    ];
    let s = aggregate(&records, Method::Plain);
    assert_eq!((s.runs, s.converged), (4, 3));
    assert_eq!(s.convergence_rate, 0.75);
    assert_eq!(s.mean_iterations, 34.0 / 3.0);
    assert_eq!(s.median_iterations, 6.0);
    assert_eq!(s.strict_rate, 2.0 / 3.0);
    assert_eq!(s.histogram.len(), HIST_BINS);
    assert_eq!((s.histogram[2], s.histogram[5], s.histogram[HIST_BINS - 1]), (1, 1, 1));
    assert_eq!(s.histogram.iter().sum::<usize>(), 3);
    let empty = aggregate(&[], Method::Accelerated);
    assert!(empty.mean_iterations.is_nan() && empty.convergence_rate.is_nan());
}

#[test]
fn records_round_trip_through_csv() {
    let records = vec![fake(Method::Plain, 4, true, true), fake(Method::Accelerated, 2, false, false)];
    let mut buf = Vec::new();
    write_records(&mut buf, &records).unwrap();
    let text = String::from_utf8(buf.clone()).unwrap();
    assert!(text.starts_with("index,seed,theta_mode,method,status,converged,iterations"), "{text}");
    let back = read_records(Cursor::new(buf)).unwrap();
    assert_eq!(back.len(), 2);
    assert!(back[0].adjoint_defect.is_nan());
    assert_eq!(back[1].method, Method::Accelerated);
    assert_eq!(back[1].status, ScpStatus::MaxIter);
}

#[test]
fn tables_keep_full_precision() {
    let values = nalgebra::DMatrix::from_row_slice(2, 2, &[0.1 + 0.2, std::f64::consts::PI, -1e-300, 12345.678901234567]);
    let table = Table {
        columns: vec!["a".into(), "b".into()],
        values,
    };
    let mut buf = Vec::new();
    table.write_csv(&mut buf).unwrap();
    assert_eq!(Table::read_csv(Cursor::new(buf)).unwrap(), table);
    assert!(Table::read_csv(Cursor::new("a,b\n")).is_err());
    assert!(Table::read_csv(Cursor::new("a,b\n1,x\n")).is_err());
}

#[test]
fn theta_mode_parses() {
    assert_eq!("free".parse::<ThetaMode>().unwrap(), ThetaMode::Free);
    assert_eq!("fixed".parse::<ThetaMode>().unwrap(), ThetaMode::Fixed);
    assert!("loose".parse::<ThetaMode>().is_err());
    assert_eq!(ThetaMode::Fixed.to_string(), "fixed");
}

#[test]
fn small_study_summary_is_recomputable_and_files_are_written() {
    let config = small(3, ThetaMode::Free, true);
    let result = run_study(&config).unwrap();
    let records = result.records();
    assert_eq!(records.len(), 6);
    assert_eq!(result.summary, summarize(&records, &config, result.summary.skipped_seeds.clone()));

    for o in &result.outcomes {
        let [plain, fast] = &o.records[..] else { panic!("two records per scenario") };
        if plain.converged && fast.converged {
            assert!(fast.iterations <= plain.iterations, "seed {}", o.scenario.seed);
        }
        assert!(plain.max_state_norm <= plain.state_bound);
    }

    let dir = tempfile::tempdir().unwrap();
    write_study(dir.path(), &result).unwrap();
    let read = read_records(std::fs::File::open(dir.path().join("records.csv")).unwrap()).unwrap();
    assert_eq!(read.len(), records.len());
    let summary: StudySummary = serde_json::from_reader(std::fs::File::open(dir.path().join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary.methods.len(), 2);
    assert_eq!(summary.methods[0], aggregate(&read, Method::Plain));
    let hist = std::fs::read_to_string(dir.path().join("hist_iters.csv")).unwrap();
    assert_eq!(hist.lines().count(), HIST_BINS + 1);
    assert_eq!(hist.lines().next().unwrap(), "iterations,plain,accelerated");
    let seed = result.outcomes[0].scenario.seed;
    let traj = Table::read_csv(std::fs::File::open(dir.path().join(format!("traj_{seed}.csv"))).unwrap()).unwrap();
    assert_eq!(traj.columns, ["s_tilde", "t", "r_x", "r_y", "theta", "u"]);
    assert_eq!(traj.values.nrows(), config.scp.node_count);
    let history = std::fs::read_to_string(dir.path().join("history.jsonl")).unwrap();
    let lines: usize = result.outcomes.iter().flat_map(|o| o.histories.iter()).map(|(_, h)| h.len()).sum();
    assert_eq!(history.lines().count(), lines);
    for line in history.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert!(v["seed"].is_u64() && v["method"].is_string());
    }
}

#[test]
fn study_is_deterministic_in_the_seed() {
    let config = small(2, ThetaMode::Fixed, false);
    let a = run_study(&config).unwrap().records();
    let b = run_study(&config).unwrap().records();
    let same = |x: f64, y: f64| x == y || (x.is_nan() && y.is_nan());
    for (x, y) in a.iter().zip(&b) {
        assert_eq!((x.seed, x.iterations, x.status), (y.seed, y.iterations, y.status));
        assert!(same(x.cost, y.cost) && same(x.adjoint_defect, y.adjoint_defect));
    }
}

#[test]
fn zero_scenarios_is_a_configuration_error() {
    assert!(run_study(&small(0, ThetaMode::Free, false)).is_err());
}

/// Regression against a stored single-scenario run.
#[test]
fn single_scenario_matches_golden_records() {
    let golden = read_records(&include_bytes!("../../tests/golden/study_n1_free.csv")[..]).unwrap();
    let records = run_study(&small(1, ThetaMode::Free, true)).unwrap().records();
    assert_eq!(records.len(), golden.len());
    let close = |x: f64, y: f64| (x.is_nan() && y.is_nan()) || (x - y).abs() <= 1e-6 * (1.0 + y.abs());
    for (r, g) in records.iter().zip(&golden) {
        assert_eq!((r.seed, r.method, r.status, r.iterations, r.converged, r.strict), (g.seed, g.method, g.status, g.iterations, g.converged, g.strict));
        assert!(close(r.cost, g.cost), "cost {} vs {}", r.cost, g.cost);
        assert!(close(r.final_time, g.final_time), "t_f {} vs {}", r.final_time, g.final_time);
        assert!(close(r.max_state_norm, g.max_state_norm));
    }
}
