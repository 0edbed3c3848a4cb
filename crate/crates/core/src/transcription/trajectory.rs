use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

/// Uniform grid on normalized time `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    nodes: Vec<f64>,
}

impl TimeGrid {
    pub fn uniform(node_count: usize) -> Result<Self> {
        if node_count < 2 {
            return Err(Error::Config(format!("time grid needs at least 2 nodes, got {node_count}")));
        }
        let last = (node_count - 1) as f64;
        let mut nodes: Vec<f64> = (0..node_count).map(|j| j as f64 / last).collect();
        nodes[node_count - 1] = 1.0;
        Ok(TimeGrid { nodes })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    /// Normalized step `1 / (N − 1)`.
    pub fn step(&self) -> f64 {
        1.0 / (self.nodes.len() - 1) as f64
    }
}

/// Transcription scheme; also fixes the quadrature rule used for costs and
/// trust regions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum Scheme {
    #[default]
    Trapezoidal,
    ForwardEuler,
}

impl Scheme {
    /// Quadrature weights (before multiplying by the step) on `nodes` points.
    pub fn quadrature_weights(self, nodes: usize) -> Vec<f64> {
        let mut w = vec![1.0; nodes];
        match self {
            Scheme::Trapezoidal => {
                w[0] = 0.5;
                w[nodes - 1] = 0.5;
            }
            Scheme::ForwardEuler => w[nodes - 1] = 0.0,
        }
        w
    }
}

/// Sampled trajectory `(t_f, x, u)` on a normalized grid: node `j` sits at
/// physical time `t_f · s̃ⱼ`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteTrajectory {
    pub grid: TimeGrid,
    /// `N × n`.
    pub states: DMatrix<f64>,
    /// `N × m`.
    pub controls: DMatrix<f64>,
    pub final_time: f64,
}

impl DiscreteTrajectory {
    pub fn new(grid: TimeGrid, states: DMatrix<f64>, controls: DMatrix<f64>, final_time: f64) -> Result<Self> {
        check_dim("state samples", grid.len(), states.nrows())?;
        check_dim("control samples", grid.len(), controls.nrows())?;
        if !(final_time > 0.0) || !final_time.is_finite() {
            return Err(Error::Config(format!("final time must be positive, got {final_time}")));
        }
        Ok(DiscreteTrajectory {
            grid,
            states,
            controls,
            final_time,
        })
    }

    /// Straight-line state interpolation from `x0` to `xf`, zero controls.
    pub fn straight_line(
        grid: TimeGrid,
        x0: &DVector<f64>,
        xf: &DVector<f64>,
        control_dim: usize,
        final_time: f64,
    ) -> Result<Self> {
        check_dim("straight-line endpoint", x0.len(), xf.len())?;
        let n = x0.len();
        let states = DMatrix::from_fn(grid.len(), n, |j, i| {
            let s = grid.nodes()[j];
            (1.0 - s) * x0[i] + s * xf[i]
        });
        let controls = DMatrix::zeros(grid.len(), control_dim);
        DiscreteTrajectory::new(grid, states, controls, final_time)
    }

    pub fn node_count(&self) -> usize {
        self.grid.len()
    }

    pub fn state_dim(&self) -> usize {
        self.states.ncols()
    }

    pub fn control_dim(&self) -> usize {
        self.controls.ncols()
    }

    pub fn state(&self, j: usize) -> DVector<f64> {
        self.states.row(j).transpose()
    }

    pub fn control(&self, j: usize) -> DVector<f64> {
        self.controls.row(j).transpose()
    }

    pub fn final_state(&self) -> DVector<f64> {
        self.state(self.node_count() - 1)
    }

    /// Physical time of node `j`.
    pub fn time(&self, j: usize) -> f64 {
        self.final_time * self.grid.nodes()[j]
    }

    /// Physical step between consecutive nodes.
    pub fn time_step(&self) -> f64 {
        self.final_time * self.grid.step()
    }

    /// Piecewise-linear interpolation of the controls at physical time `t`.
    pub fn control_at(&self, t: f64) -> DVector<f64> {
        interpolate_rows(&self.controls, t / self.final_time)
    }

    /// Piecewise-linear interpolation of the states at physical time `t`.
    pub fn state_at(&self, t: f64) -> DVector<f64> {
        interpolate_rows(&self.states, t / self.final_time)
    }

    /// Largest Euclidean state norm over the nodes, restricted to `components`.
    pub fn max_state_norm(&self, components: impl Iterator<Item = usize> + Clone) -> (usize, f64) {
        (0..self.node_count())
            .map(|j| {
                let n2: f64 = components.clone().map(|i| self.states[(j, i)].powi(2)).sum();
                (j, n2.sqrt())
            })
            .fold((0, 0.0), |acc, v| if v.1 > acc.1 { v } else { acc })
    }
}

/// Linear interpolation of matrix rows sampled uniformly on `[0, 1]`.
pub fn interpolate_rows(samples: &DMatrix<f64>, s: f64) -> DVector<f64> {
    let n = samples.nrows();
    let pos = (s.clamp(0.0, 1.0)) * (n - 1) as f64;
    let j = (pos.floor() as usize).min(n - 2);
    let theta = pos - j as f64;
    (samples.row(j) * (1.0 - theta) + samples.row(j + 1) * theta).transpose()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_endpoints_are_exact() {
        let g = TimeGrid::uniform(51).unwrap();
        assert_eq!(g.nodes()[0], 0.0);
        assert_eq!(g.nodes()[50], 1.0);
        assert!(g.nodes().windows(2).all(|w| w[1] > w[0]));
        assert!(TimeGrid::uniform(1).is_err());
    }

    #[test]
    fn trapezoid_weights_integrate_linear_exactly() {
        let w = Scheme::Trapezoidal.quadrature_weights(11);
        let h = 0.1;
        let integral: f64 = w.iter().enumerate().map(|(j, wj)| h * wj * (j as f64 * h)).sum();
        assert!((integral - 0.5).abs() < 1e-15);
    }

    #[test]
    fn straight_line_and_interpolation() {
        let g = TimeGrid::uniform(5).unwrap();
        let x0 = DVector::from_vec(vec![0.0, 1.0]);
        let xf = DVector::from_vec(vec![4.0, -1.0]);
        let t = DiscreteTrajectory::straight_line(g, &x0, &xf, 1, 2.0).unwrap();
        assert_eq!(t.state(2), DVector::from_vec(vec![2.0, 0.0]));
        let mid = t.state_at(0.75);
        assert!((mid[0] - 1.5).abs() < 1e-15);
        assert!(t.controls.iter().all(|&u| u == 0.0));
        assert!(DiscreteTrajectory::straight_line(TimeGrid::uniform(5).unwrap(), &x0, &xf, 1, 0.0).is_err());
    }
}
