use nalgebra::{DMatrix, DVector};

use super::*;
use crate::problem::{make_dubins, make_lqr, DubinsParams, FinalAngle, LqrSpec, ObstacleSpec};
use crate::transcription::TimeGrid;

fn constant_controls(c: f64, nodes: usize) -> DiscreteTrajectory {
    let grid = TimeGrid::uniform(nodes).unwrap();
    DiscreteTrajectory::new(grid, DMatrix::zeros(nodes, 1), DMatrix::from_element(nodes, 1, c), 1.0).unwrap()
}

#[test]
fn radius_schedule() {
    let c = ScpConfig::default();
    assert!((update_radius(&c, 0) - 2.85).abs() < 1e-12);
    let d60 = update_radius(&c, 59);
    assert!((d60 - 3.0 * 0.95f64.powi(60)).abs() < 1e-12);
    assert!((d60 - 0.138).abs() < 1e-3);
    let bad = ScpConfig { shrink: 1.0, ..c };
    assert!(bad.validate().is_err());
}

#[test]
fn convergence_needs_three_iterates_and_small_gaps() {
    let a = constant_controls(0.0, 11);
    let b = constant_controls(0.02, 11);
    let gap = control_gap(&b, &a, Scheme::Trapezoidal, GapMeasure::PhysicalTime);
    assert!((gap - 0.0004).abs() < 1e-15);
    let mut h = ScpHistory {
        iterates: vec![a.clone(), b.clone()],
        control_gaps: vec![gap],
        ..Default::default()
    };
    assert!(!check_convergence(&h, 1e-3));
    h.iterates.push(a.clone());
    h.control_gaps.push(gap);
    // 2c² with c = 0.02
    assert!(check_convergence(&h, 1e-3));
    assert!(!check_convergence(&h, 7.9e-4));
}

#[test]
fn strict_trust_is_strict() {
    let lqr = make_lqr(&LqrSpec::double_integrator(1.0, 1.0)).unwrap();
    let grid = TimeGrid::uniform(11).unwrap();
    let a = DiscreteTrajectory::new(grid.clone(), DMatrix::zeros(11, 2), DMatrix::zeros(11, 1), 1.0).unwrap();
    assert!(check_strict_trust(&lqr, &a, &a, 0.5, Scheme::Trapezoidal, 1e-9).unwrap());
    let b = DiscreteTrajectory::new(grid, DMatrix::from_element(11, 2, 0.5), DMatrix::zeros(11, 1), 1.0).unwrap();
    let value = trust_region_value(&lqr, &b, &a, Scheme::Trapezoidal).unwrap();
    assert!(!check_strict_trust(&lqr, &a, &b, value, Scheme::Trapezoidal, 1e-9).unwrap());
    assert!(check_strict_trust(&lqr, &a, &b, value * 1.01, Scheme::Trapezoidal, 1e-9).unwrap());
}

#[test]
fn lqr_converges_after_one_meaningful_iteration() {
    let problem = make_lqr(&LqrSpec::double_integrator(1.0, 1.0)).unwrap();
    let config = ScpConfig::default();
    let guess = straight_line_guess(&problem, &DVector::from_vec(vec![1.0, 0.0]), config.node_count, 1.0).unwrap();
    let run = run_scp(&problem, &guess, &config).unwrap();
    assert_eq!(run.status, ScpStatus::Converged);
    assert!(run.history.control_gaps[1] <= config.conv_tol);
    assert_eq!(run.iterations(), 3);
    // u*(t) = 6 − 12t, p(0) = (24, 12)
    let u = &run.final_iterate.controls;
    // Nodal controls under the trapezoid rule carry an endpoint layer.
    for j in 2..config.node_count - 2 {
        let t = run.final_iterate.time(j);
        assert!((u[(j, 0)] - (6.0 - 12.0 * t)).abs() < 1e-2, "node {j}: {} vs {}", u[(j, 0)], 6.0 - 12.0 * t);
    }
    let gamma = run.history.duals.last().unwrap();
    assert!((gamma[0] - 24.0).abs() < 0.1 && (gamma[1] - 12.0).abs() < 0.1, "{gamma}");
    let mut log = Vec::new();
    run.history.write_jsonl(&mut log).unwrap();
    let text = String::from_utf8(log).unwrap();
    assert_eq!(text.lines().count(), 3);
    let first: IterationRecord = serde_json::from_str(text.lines().next().unwrap()).unwrap();
    assert_eq!(first.k, 1);
    assert_eq!(first.radius, 3.0);
}

#[test]
fn dubins_converges_around_an_obstacle() {
    let params = DubinsParams {
        obstacles: vec![ObstacleSpec::new([2.5, 0.3], 0.4).unwrap()],
        ..DubinsParams::default()
    };
    let problem = make_dubins(&params, [0.0, 0.0, 0.0], [5.0, 0.0], FinalAngle::Free).unwrap();
    let config = ScpConfig::default();
    let guess = straight_line_guess(&problem, &DVector::from_vec(vec![5.0, 0.0, 0.0]), config.node_count, 5.0).unwrap();
    let run = run_scp(&problem, &guess, &config).unwrap();
    assert_eq!(run.status, ScpStatus::Converged, "{:?}", run.history.records);
    assert!(run.history.strict_flags.last().copied().unwrap());
    let rec = run.history.records.last().unwrap();
    assert!(rec.defect < 1e-4 && rec.boundary_residual <= 1e-5, "{rec:?}");
    assert!(run.final_iterate.final_time > 5.0);
}

#[test]
fn unstable_instance_reports_unbounded() {
    // The optimum x = e⁸ᵗ, u = 0 is admissible but leaves |x| ≤ 50.
    let spec = LqrSpec {
        a: DMatrix::from_element(1, 1, 8.0),
        b: DMatrix::from_element(1, 1, 1.0),
        q: DMatrix::zeros(1, 1),
        r: DMatrix::identity(1, 1),
        x0: DVector::from_element(1, 1.0),
        xf: DVector::from_element(1, 8.0f64.exp()),
        tf: 1.0,
        control_bound: 1e5,
    };
    let problem = make_lqr(&spec).unwrap();
    let config = ScpConfig {
        state_bound: Some(50.0),
        delta0: 1e8,
        ..ScpConfig::default()
    };
    let guess = straight_line_guess(&problem, &spec.xf, config.node_count, 1.0).unwrap();
    let run = run_scp(&problem, &guess, &config).unwrap();
    assert_eq!(run.status, ScpStatus::Unbounded, "{:?}", run.history.records);
    assert_eq!(run.failed_at, Some(1));
}
