//! Declarative problem files for the built-in families.
//!
//! ```toml
//! family = "dubins"
//!
//! [dubins]
//! x0 = [0.0, 0.0, 0.0]
//! target = [5.0, 0.0]
//! tf_guess = 5.0
//! obstacles = [{ center = [2.5, 0.3], radius = 0.4 }]
//!
//! [scp]
//! max_iterations = 60
//! ```

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{make_dubins, make_lqr, make_sphere_rotation, DirectionTarget, DubinsParams, FinalAngle, LqrSpec, OcpProblem, SphereSpec};
use crate::error::{Error, Result};
use crate::manifold::ManifoldSpec;
use crate::scp::ScpConfig;
use crate::shooting::{ShootingSettings, DEFAULT_STEPS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Dubins,
    Lqr,
    Sphere,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DubinsConfig {
    pub x0: [f64; 3],
    pub target: [f64; 2],
    /// Prescribed final heading; free when absent.
    #[serde(default)]
    pub final_angle: Option<f64>,
    pub tf_guess: f64,
    #[serde(flatten)]
    pub params: DubinsParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LqrConfig {
    /// Row-major matrices.
    pub a: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
    #[serde(default)]
    pub q: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub r: Option<Vec<Vec<f64>>>,
    pub x0: Vec<f64>,
    pub xf: Vec<f64>,
    pub tf: f64,
    #[serde(default = "default_control_bound")]
    pub control_bound: f64,
}

fn default_control_bound() -> f64 {
    1e3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SphereConfig {
    pub x0: [f64; 3],
    /// Target direction `x_f`; the boundary condition is `x(t_f) ∥ x_f`.
    pub target: [f64; 3],
    pub axes: Vec<[f64; 3]>,
    pub tf: f64,
    pub u_bar: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ShootingConfig {
    /// Run shooting-accelerated SCP instead of plain SCP.
    pub accelerate: bool,
    pub steps: usize,
    #[serde(flatten)]
    pub settings: ShootingSettings,
}

impl Default for ShootingConfig {
    fn default() -> Self {
        ShootingConfig {
            accelerate: false,
            steps: DEFAULT_STEPS,
            settings: ShootingSettings::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemFile {
    pub family: Family,
    #[serde(default)]
    pub dubins: Option<DubinsConfig>,
    #[serde(default)]
    pub lqr: Option<LqrConfig>,
    #[serde(default)]
    pub sphere: Option<SphereConfig>,
    #[serde(default)]
    pub scp: ScpConfig,
    #[serde(default)]
    pub shooting: ShootingConfig,
}

/// A problem built from a file together with what the driver needs.
pub struct BuiltProblem {
    pub problem: OcpProblem,
    /// End point of the straight-line guess.
    pub guess_target: DVector<f64>,
    pub tf_guess: f64,
    pub state_names: Vec<String>,
    pub control_names: Vec<String>,
    pub manifold: Option<ManifoldSpec>,
}

fn matrix(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>> {
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if r == 0 || c == 0 || rows.iter().any(|row| row.len() != c) {
        return Err(Error::Config(format!("{what} must be a non-empty rectangular array of rows")));
    }
    Ok(DMatrix::from_fn(r, c, |i, j| rows[i][j]))
}

fn numbered(prefix: &str, k: usize) -> Vec<String> {
    if k == 1 {
        vec![prefix.to_string()]
    } else {
        (1..=k).map(|i| format!("{prefix}{i}")).collect()
    }
}

impl ProblemFile {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn build(&self) -> Result<BuiltProblem> {
        let missing = |name: &str| Error::Config(format!("family '{name}' needs a [{name}] table"));
        match self.family {
            Family::Dubins => {
                let c = self.dubins.as_ref().ok_or_else(|| missing("dubins"))?;
                let angle = c.final_angle.map_or(FinalAngle::Free, FinalAngle::Fixed);
                let problem = make_dubins(&c.params, c.x0, c.target, angle)?;
                Ok(BuiltProblem {
                    problem,
                    guess_target: DVector::from_vec(vec![c.target[0], c.target[1], c.final_angle.unwrap_or(c.x0[2])]),
                    tf_guess: c.tf_guess,
                    state_names: vec!["r_x".into(), "r_y".into(), "theta".into()],
                    control_names: vec!["u".into()],
                    manifold: None,
                })
            }
            Family::Lqr => {
                let c = self.lqr.as_ref().ok_or_else(|| missing("lqr"))?;
                let a = matrix(&c.a, "a")?;
                let b = matrix(&c.b, "b")?;
                let (n, m) = (a.nrows(), b.ncols());
                let q = c.q.as_ref().map(|q| matrix(q, "q")).transpose()?.unwrap_or_else(|| DMatrix::zeros(n, n));
                let r = c.r.as_ref().map(|r| matrix(r, "r")).transpose()?.unwrap_or_else(|| DMatrix::identity(m, m));
                let spec = LqrSpec {
                    a,
                    b,
                    q,
                    r,
                    x0: DVector::from_vec(c.x0.clone()),
                    xf: DVector::from_vec(c.xf.clone()),
                    tf: c.tf,
                    control_bound: c.control_bound,
                };
                Ok(BuiltProblem {
                    problem: make_lqr(&spec)?,
                    guess_target: spec.xf.clone(),
                    tf_guess: c.tf,
                    state_names: numbered("x", n),
                    control_names: numbered("u", m),
                    manifold: None,
                })
            }
            Family::Sphere => {
                let c = self.sphere.as_ref().ok_or_else(|| missing("sphere"))?;
                let spec = SphereSpec {
                    x0: c.x0,
                    axes: c.axes.clone(),
                    boundary: Arc::new(DirectionTarget::new(c.target)?),
                    tf: c.tf,
                    u_bar: c.u_bar,
                };
                let m = c.axes.len();
                let (problem, manifold) = make_sphere_rotation(&spec)?;
                Ok(BuiltProblem {
                    problem,
                    guess_target: DVector::from_column_slice(&c.target),
                    tf_guess: c.tf,
                    state_names: numbered("x", 3),
                    control_names: numbered("u", m),
                    manifold: Some(manifold),
                })
            }
        }
    }
}
