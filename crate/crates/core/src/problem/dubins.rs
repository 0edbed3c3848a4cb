use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::fields::{AffineMap, ConstantField, QuadraticForm, ZeroScalar};
use super::{ConvexFunction, ControlSet, FinalTime, ObstacleSpec, OcpProblem, ProblemParts, ScalarField, VectorField};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DubinsParams {
    pub speed: f64,
    pub curvature: f64,
    pub u_bar: f64,
    pub obstacles: Vec<ObstacleSpec>,
    pub omega: f64,
    pub horizon_cap: f64,
    pub state_bound: f64,
    pub obstacle_term: ObstacleTerm,
}

/// Where the obstacle penalty enters the cost decomposition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum ObstacleTerm {
    /// As the state cost `H`, re-expanded to second order inside each subproblem.
    #[default]
    StateCost,
    /// As the drift cost `L⁰`, linearized once per iteration.
    Drift,
}

impl Default for DubinsParams {
    fn default() -> Self {
        DubinsParams {
            speed: 1.0,
            curvature: 2.0,
            u_bar: 0.25,
            obstacles: Vec::new(),
            omega: 5000.0,
            horizon_cap: 20.0,
            state_bound: 100.0,
            obstacle_term: ObstacleTerm::StateCost,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum FinalAngle {
    Fixed(f64),
    Free,
}

/// `cᵢ(r) = (‖r − rᵢ‖² − εᵢ²)²` inside the obstacle, zero outside.
pub fn obstacle_potential(obstacle: &ObstacleSpec, r: [f64; 2]) -> f64 {
    let dx = r[0] - obstacle.center[0];
    let dy = r[1] - obstacle.center[1];
    let d2 = dx * dx + dy * dy;
    let e2 = obstacle.radius * obstacle.radius;
    if d2 < e2 {
        (d2 - e2) * (d2 - e2)
    } else {
        0.0
    }
}

/// Gradient `4(‖r − rᵢ‖² − εᵢ²)(r − rᵢ)` of [`obstacle_potential`].
pub fn obstacle_gradient(obstacle: &ObstacleSpec, r: [f64; 2]) -> [f64; 2] {
    let dx = r[0] - obstacle.center[0];
    let dy = r[1] - obstacle.center[1];
    let d2 = dx * dx + dy * dy;
    let e2 = obstacle.radius * obstacle.radius;
    if d2 < e2 {
        let a = 4.0 * (d2 - e2);
        [a * dx, a * dy]
    } else {
        [0.0, 0.0]
    }
}

struct DubinsDrift {
    speed: f64,
}

impl VectorField for DubinsDrift {
    fn eval(&self, _s: f64, x: &DVector<f64>) -> DVector<f64> {
        let th = x[2];
        DVector::from_vec(vec![self.speed * th.cos(), self.speed * th.sin(), 0.0])
    }

    fn jacobian(&self, _s: f64, x: &DVector<f64>) -> DMatrix<f64> {
        let th = x[2];
        let mut j = DMatrix::zeros(3, 3);
        j[(0, 2)] = -self.speed * th.sin();
        j[(1, 2)] = self.speed * th.cos();
        j
    }
}

/// `ω Σᵢ cᵢ(r)`.
struct ObstacleCost {
    obstacles: Vec<ObstacleSpec>,
    omega: f64,
}

impl ScalarField for ObstacleCost {
    fn eval(&self, _s: f64, x: &DVector<f64>) -> f64 {
        let r = [x[0], x[1]];
        self.omega * self.obstacles.iter().map(|o| obstacle_potential(o, r)).sum::<f64>()
    }

    fn gradient(&self, _s: f64, x: &DVector<f64>) -> DVector<f64> {
        let r = [x[0], x[1]];
        let mut g = DVector::zeros(x.len());
        for o in &self.obstacles {
            let d = obstacle_gradient(o, r);
            g[0] += self.omega * d[0];
            g[1] += self.omega * d[1];
        }
        g
    }
}

impl ConvexFunction for ObstacleCost {
    fn eval(&self, s: f64, x: &DVector<f64>) -> f64 {
        ScalarField::eval(self, s, x)
    }

    fn gradient(&self, s: f64, x: &DVector<f64>) -> DVector<f64> {
        ScalarField::gradient(self, s, x)
    }

    /// Indefinite near the centers; the transcription keeps its PSD part.
    fn hessian(&self, _s: f64, x: &DVector<f64>) -> DMatrix<f64> {
        let mut h = DMatrix::zeros(3, 3);
        for o in &self.obstacles {
            let d = [x[0] - o.center[0], x[1] - o.center[1]];
            let d2 = d[0] * d[0] + d[1] * d[1];
            let e2 = o.radius * o.radius;
            if d2 < e2 {
                for a in 0..2 {
                    for b in 0..2 {
                        h[(a, b)] += self.omega * (8.0 * d[a] * d[b] + if a == b { 4.0 * (d2 - e2) } else { 0.0 });
                    }
                }
            }
        }
        h
    }
}

/// Dubins car `ẋ = (v cos θ, v sin θ, k u)` with minimum-effort cost and
/// penalized circular obstacles, free final time.
pub fn make_dubins(
    params: &DubinsParams,
    x0: [f64; 3],
    target: [f64; 2],
    final_angle: FinalAngle,
) -> Result<OcpProblem> {
    if !(params.speed > 0.0 && params.curvature > 0.0 && params.u_bar > 0.0) {
        return Err(Error::Config("speed, curvature and control bound must be positive".into()));
    }
    if !(params.omega >= 0.0) {
        return Err(Error::Config("penalty weight must be nonnegative".into()));
    }
    let boundary = match final_angle {
        FinalAngle::Fixed(theta) => AffineMap::select(3, &[0, 1, 2], &[target[0], target[1], theta]),
        FinalAngle::Free => AffineMap::select(3, &[0, 1], &target),
    };
    let obstacles = Arc::new(ObstacleCost {
        obstacles: params.obstacles.clone(),
        omega: params.omega,
    });
    OcpProblem::new(ProblemParts {
        name: "dubins".into(),
        state_dim: 3,
        control_dim: 1,
        drift: Arc::new(DubinsDrift { speed: params.speed }),
        control_fields: vec![Arc::new(ConstantField {
            value: DVector::from_vec(vec![0.0, 0.0, params.curvature]),
        })],
        cost_g: Arc::new(QuadraticForm::identity(1)),
        cost_h: match params.obstacle_term {
            ObstacleTerm::StateCost => obstacles.clone() as Arc<dyn ConvexFunction>,
            ObstacleTerm::Drift => Arc::new(QuadraticForm::zero(3)),
        },
        cost_l: vec![
            match params.obstacle_term {
                ObstacleTerm::StateCost => Arc::new(ZeroScalar { dim: 3 }) as Arc<dyn ScalarField>,
                ObstacleTerm::Drift => obstacles,
            },
            Arc::new(ZeroScalar { dim: 3 }),
        ],
        boundary: Arc::new(boundary),
        control_set: ControlSet::symmetric(1, params.u_bar)?,
        horizon_cap: params.horizon_cap,
        initial_state: DVector::from_column_slice(&x0),
        initial_fixed: None,
        final_time: FinalTime::Free,
        state_bound: params.state_bound,
    })
}
