use nalgebra::{DMatrix, DVector};

use super::trajectory::DiscreteTrajectory;
use crate::error::{check_dim, Error, Result};
use crate::problem::OcpProblem;

/// Affine dynamics `ẋ = c + J (x − x_k) + B u` frozen at an iterate node.
#[derive(Debug, Clone)]
pub struct LinearizedDynamics {
    pub x_ref: DVector<f64>,
    /// `f₀(s, x_k)`.
    pub drift: DVector<f64>,
    /// `∂f₀/∂x + Σ u_kⁱ ∂fᵢ/∂x` at `x_k`.
    pub jacobian: DMatrix<f64>,
    /// Columns `fᵢ(s, x_k)`.
    pub control_matrix: DMatrix<f64>,
}

impl LinearizedDynamics {
    pub fn eval(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        &self.drift + &self.jacobian * (x - &self.x_ref) + &self.control_matrix * u
    }
}

fn check_node(iterate: &DiscreteTrajectory, node: usize) -> Result<()> {
    if node >= iterate.node_count() {
        return Err(Error::Usage(format!(
            "node {node} outside grid of {} nodes",
            iterate.node_count()
        )));
    }
    Ok(())
}

fn check_iterate(problem: &OcpProblem, iterate: &DiscreteTrajectory) -> Result<()> {
    check_dim("iterate state dimension", problem.state_dim(), iterate.state_dim())?;
    check_dim("iterate control dimension", problem.control_dim(), iterate.control_dim())
}

/// Node time used when evaluating problem data: the iterate's physical time.
fn node_time(problem: &OcpProblem, iterate: &DiscreteTrajectory, node: usize) -> f64 {
    match problem.fixed_final_time() {
        Some(tf) => tf * iterate.grid.nodes()[node],
        None => iterate.time(node),
    }
}

pub fn linearize_dynamics(problem: &OcpProblem, iterate: &DiscreteTrajectory, node: usize) -> Result<LinearizedDynamics> {
    check_iterate(problem, iterate)?;
    check_node(iterate, node)?;
    let s = node_time(problem, iterate, node);
    let x_k = iterate.state(node);
    let u_k = iterate.control(node);
    Ok(LinearizedDynamics {
        drift: problem.drift().eval(s, &x_k),
        jacobian: problem.dynamics_jacobian(s, &x_k, &u_k),
        control_matrix: problem.control_matrix(s, &x_k),
        x_ref: x_k,
    })
}

/// Quadratic model `c + gᵀ(v − v_ref) + ½ (v − v_ref)ᵀ W (v − v_ref)`.
#[derive(Debug, Clone)]
pub struct QuadraticModel {
    pub v_ref: DVector<f64>,
    pub value: f64,
    pub gradient: DVector<f64>,
    pub hessian: DMatrix<f64>,
}

impl QuadraticModel {
    pub fn eval(&self, v: &DVector<f64>) -> f64 {
        let d = v - &self.v_ref;
        self.value + self.gradient.dot(&d) + 0.5 * d.dot(&(&self.hessian * &d))
    }
}

/// Convexified running cost at one node:
///
/// `G(u) + H(x) + L⁰(x_k) + Σ uⁱ Lⁱ(x_k) + (∂L⁰/∂x + Σ u_kⁱ ∂Lⁱ/∂x)(x_k) · (x − x_k)`
///
/// `G` and `H` enter through second-order models at the iterate, which are
/// exact for quadratic costs.
#[derive(Debug, Clone)]
pub struct LinearizedCost {
    pub x_ref: DVector<f64>,
    pub control_cost: QuadraticModel,
    pub state_cost: QuadraticModel,
    /// `L⁰(s, x_k)`.
    pub l0: f64,
    /// `Lⁱ(s, x_k)` for `i = 1..m`.
    pub control_weights: DVector<f64>,
    /// `∂L⁰/∂x + Σ u_kⁱ ∂Lⁱ/∂x` at `x_k`.
    pub state_gradient: DVector<f64>,
}

impl LinearizedCost {
    pub fn eval(&self, x: &DVector<f64>, u: &DVector<f64>) -> f64 {
        self.control_cost.eval(u)
            + self.state_cost.eval(x)
            + self.l0
            + self.control_weights.dot(u)
            + self.state_gradient.dot(&(x - &self.x_ref))
    }
}

/// Symmetrize and clamp eigenvalues below zero (round-off from user Hessians).
pub(crate) fn psd_part(h: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = (h + h.transpose()) * 0.5;
    if sym.nrows() == 0 {
        return sym;
    }
    let eig = sym.clone().symmetric_eigen();
    if eig.eigenvalues.min() >= 0.0 {
        return sym;
    }
    let clamped = eig.eigenvalues.map(|v| v.max(0.0));
    &eig.eigenvectors * DMatrix::from_diagonal(&clamped) * eig.eigenvectors.transpose()
}

pub fn linearize_cost(problem: &OcpProblem, iterate: &DiscreteTrajectory, node: usize) -> Result<LinearizedCost> {
    linearize_cost_centered(problem, iterate, node, None)
}

/// As [`linearize_cost`], with the models of `G` and `H` taken at `center`
/// instead of the iterate (the `L` terms stay linearized at the iterate).
pub fn linearize_cost_centered(
    problem: &OcpProblem,
    iterate: &DiscreteTrajectory,
    node: usize,
    center: Option<&DiscreteTrajectory>,
) -> Result<LinearizedCost> {
    check_iterate(problem, iterate)?;
    check_node(iterate, node)?;
    let s = node_time(problem, iterate, node);
    let x_k = iterate.state(node);
    let u_k = iterate.control(node);
    let (x_c, u_c) = match center {
        Some(c) => {
            check_iterate(problem, c)?;
            check_dim("center nodes", iterate.node_count(), c.node_count())?;
            (c.state(node), c.control(node))
        }
        None => (x_k.clone(), u_k.clone()),
    };
    let m = problem.control_dim();
    let l = problem.cost_l();
    let mut state_gradient = l[0].gradient(s, &x_k);
    for i in 0..m {
        if u_k[i] != 0.0 {
            state_gradient += l[i + 1].gradient(s, &x_k) * u_k[i];
        }
    }
    Ok(LinearizedCost {
        control_cost: QuadraticModel {
            value: problem.cost_g().eval(s, &u_c),
            gradient: problem.cost_g().gradient(s, &u_c),
            hessian: psd_part(&problem.cost_g().hessian(s, &u_c)),
            v_ref: u_c,
        },
        state_cost: QuadraticModel {
            value: problem.cost_h().eval(s, &x_c),
            gradient: problem.cost_h().gradient(s, &x_c),
            hessian: psd_part(&problem.cost_h().hessian(s, &x_c)),
            v_ref: x_c,
        },
        l0: l[0].eval(s, &x_k),
        control_weights: DVector::from_fn(m, |i, _| l[i + 1].eval(s, &x_k)),
        state_gradient,
        x_ref: x_k,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{make_dubins, make_lqr, DubinsParams, FinalAngle, LqrSpec, ObstacleSpec, ObstacleTerm};
    use crate::transcription::TimeGrid;

    fn dubins_iterate(x: [f64; 3], u: f64) -> (OcpProblem, DiscreteTrajectory) {
        dubins_iterate_with(x, u, ObstacleTerm::Drift)
    }

    fn dubins_iterate_with(x: [f64; 3], u: f64, term: ObstacleTerm) -> (OcpProblem, DiscreteTrajectory) {
        let params = DubinsParams {
            obstacles: vec![ObstacleSpec::new([0.1, 0.1], 0.4).unwrap()],
            obstacle_term: term,
            ..DubinsParams::default()
        };
        let p = make_dubins(&params, [0.0; 3], [5.0, 0.0], FinalAngle::Free).unwrap();
        let grid = TimeGrid::uniform(3).unwrap();
        let states = DMatrix::from_fn(3, 3, |_, i| x[i]);
        let controls = DMatrix::from_element(3, 1, u);
        (p, DiscreteTrajectory::new(grid, states, controls, 5.0).unwrap())
    }

    #[test]
    fn dubins_jacobian_at_heading_zero() {
        let (p, it) = dubins_iterate([0.0, 0.0, 0.0], 0.0);
        let lin = linearize_dynamics(&p, &it, 1).unwrap();
        assert_eq!(lin.drift.as_slice(), &[1.0, 0.0, 0.0]);
        assert_eq!(lin.jacobian[(0, 2)], 0.0);
        assert_eq!(lin.jacobian[(1, 2)], 1.0);
        assert_eq!(lin.control_matrix.as_slice(), &[0.0, 0.0, 2.0]);
    }

    #[test]
    fn tangent_at_base_point() {
        let (p, it) = dubins_iterate([0.3, -0.2, 0.8], 0.1);
        let lin = linearize_dynamics(&p, &it, 2).unwrap();
        let cost = linearize_cost(&p, &it, 2).unwrap();
        let x = it.state(2);
        for &u in &[-0.25, 0.0, 0.17] {
            let u = DVector::from_element(1, u);
            assert!((lin.eval(&x, &u) - p.dynamics(0.0, &x, &u)).amax() < 1e-15);
        }
        let u = it.control(2);
        assert!((cost.eval(&x, &u) - p.running_cost(0.0, &x, &u)).abs() < 1e-12);
    }

    #[test]
    fn dubins_cost_linearizes_obstacle_term() {
        let (p, it) = dubins_iterate([0.2, 0.0, 0.0], 0.0);
        let cost = linearize_cost(&p, &it, 0).unwrap();
        let r = [0.2, 0.0];
        let o = ObstacleSpec::new([0.1, 0.1], 0.4).unwrap();
        assert!((cost.l0 - 5000.0 * crate::problem::obstacle_potential(&o, r)).abs() < 1e-12);
        let g = crate::problem::obstacle_gradient(&o, r);
        assert!((cost.state_gradient[0] - 5000.0 * g[0]).abs() < 1e-9);
        let x = DVector::from_vec(vec![0.25, 0.05, 0.0]);
        let u = DVector::from_element(1, 0.1);
        let expected = 0.01 + cost.l0 + cost.state_gradient.dot(&(&x - &it.state(0)));
        assert!((cost.eval(&x, &u) - expected).abs() < 1e-12);
    }

    #[test]
    fn obstacle_as_state_cost_gets_a_convex_second_order_model() {
        let (p, it) = dubins_iterate_with([0.3, 0.0, 0.0], 0.0, ObstacleTerm::StateCost);
        let cost = linearize_cost(&p, &it, 0).unwrap();
        assert_eq!(cost.l0, 0.0);
        let o = ObstacleSpec::new([0.1, 0.1], 0.4).unwrap();
        let model = &cost.state_cost;
        assert!((model.value - 5000.0 * crate::problem::obstacle_potential(&o, [0.3, 0.0])).abs() < 1e-12);
        assert!((model.gradient[1] - 5000.0 * crate::problem::obstacle_gradient(&o, [0.3, 0.0])[1]).abs() < 1e-9);
        assert!(model.hessian.clone().symmetric_eigen().eigenvalues.min() >= -1e-9);
    }

    #[test]
    fn linear_dynamics_are_reproduced_exactly() {
        let p = make_lqr(&LqrSpec::double_integrator(1.0, 1.0)).unwrap();
        let grid = TimeGrid::uniform(4).unwrap();
        let it = DiscreteTrajectory::new(grid, DMatrix::from_element(4, 2, 0.7), DMatrix::from_element(4, 1, -0.3), 1.0).unwrap();
        let lin = linearize_dynamics(&p, &it, 3).unwrap();
        let x = DVector::from_vec(vec![-2.0, 5.0]);
        let u = DVector::from_element(1, 4.0);
        assert!((lin.eval(&x, &u) - p.dynamics(1.0, &x, &u)).amax() < 1e-14);
    }

    #[test]
    fn node_out_of_range_is_usage_error() {
        let (p, it) = dubins_iterate([0.0; 3], 0.0);
        assert!(matches!(linearize_dynamics(&p, &it, 3), Err(Error::Usage(_))));
    }
}
