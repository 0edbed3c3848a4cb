use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use super::fields::{AffineMap, ConstantField, LinearField, QuadraticForm, ZeroScalar};
use super::{ControlSet, FinalTime, OcpProblem, ProblemParts, ScalarField, VectorField};
use crate::error::{check_dim, Error, Result};

/// Linear-quadratic instance: `ẋ = A x + B u`, cost `uᵀRu + xᵀQx`,
/// `x(t_f) = x_f` at fixed `t_f`. Every linearization of it is exact.
#[derive(Debug, Clone)]
pub struct LqrSpec {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub x0: DVector<f64>,
    pub xf: DVector<f64>,
    pub tf: f64,
    /// Half-width of the control box; pick it large enough to stay inactive
    /// for an unconstrained instance.
    pub control_bound: f64,
}

impl LqrSpec {
    /// Rest-to-rest double integrator `ẍ = u`, moving from 0 to `distance` in time `tf`.
    pub fn double_integrator(distance: f64, tf: f64) -> Self {
        LqrSpec {
            a: DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]),
            b: DMatrix::from_row_slice(2, 1, &[0.0, 1.0]),
            q: DMatrix::zeros(2, 2),
            r: DMatrix::identity(1, 1),
            x0: DVector::zeros(2),
            xf: DVector::from_vec(vec![distance, 0.0]),
            tf,
            control_bound: 1e3,
        }
    }
}

pub fn make_lqr(spec: &LqrSpec) -> Result<OcpProblem> {
    let n = spec.a.nrows();
    check_dim("A columns", n, spec.a.ncols())?;
    check_dim("B rows", n, spec.b.nrows())?;
    let m = spec.b.ncols();
    check_dim("Q rows", n, spec.q.nrows())?;
    check_dim("Q columns", n, spec.q.ncols())?;
    check_dim("R rows", m, spec.r.nrows())?;
    check_dim("R columns", m, spec.r.ncols())?;
    check_dim("x0", n, spec.x0.len())?;
    check_dim("xf", n, spec.xf.len())?;
    let q_sym = (&spec.q + spec.q.transpose()) * 0.5;
    if q_sym.symmetric_eigenvalues().min() < -1e-12 {
        return Err(Error::Config("Q must be positive semidefinite".into()));
    }
    let r_sym = (&spec.r + spec.r.transpose()) * 0.5;
    if !(r_sym.symmetric_eigenvalues().min() > 0.0) {
        return Err(Error::Config("R must be positive definite".into()));
    }
    let control_fields = (0..m)
        .map(|i| {
            Arc::new(ConstantField {
                value: spec.b.column(i).into_owned(),
            }) as Arc<dyn VectorField>
        })
        .collect();
    let cost_l = (0..=m)
        .map(|_| Arc::new(ZeroScalar { dim: n }) as Arc<dyn ScalarField>)
        .collect();
    let all: Vec<usize> = (0..n).collect();
    OcpProblem::new(ProblemParts {
        name: "lqr".into(),
        state_dim: n,
        control_dim: m,
        drift: Arc::new(LinearField { matrix: spec.a.clone() }),
        control_fields,
        cost_g: Arc::new(QuadraticForm { weight: r_sym }),
        cost_h: Arc::new(QuadraticForm { weight: q_sym }),
        cost_l,
        boundary: Arc::new(AffineMap::select(n, &all, spec.xf.as_slice())),
        control_set: ControlSet::symmetric(m, spec.control_bound)?,
        horizon_cap: spec.tf,
        initial_state: spec.x0.clone(),
        initial_fixed: None,
        final_time: FinalTime::Fixed(spec.tf),
        state_bound: 1e6,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trivial_instance_builds() {
        let spec = LqrSpec {
            a: DMatrix::zeros(2, 2),
            b: DMatrix::identity(2, 2),
            q: DMatrix::zeros(2, 2),
            r: DMatrix::identity(2, 2),
            x0: DVector::zeros(2),
            xf: DVector::zeros(2),
            tf: 1.0,
            control_bound: 10.0,
        };
        let p = make_lqr(&spec).unwrap();
        let x = DVector::from_vec(vec![1.0, 2.0]);
        assert_eq!(p.dynamics(0.0, &x, &DVector::zeros(2)), DVector::zeros(2));
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let mut spec = LqrSpec::double_integrator(1.0, 1.0);
        spec.b = DMatrix::zeros(3, 1);
        assert!(matches!(make_lqr(&spec), Err(Error::Dimension { .. })));
    }

    #[test]
    fn indefinite_weights_are_rejected() {
        let mut spec = LqrSpec::double_integrator(1.0, 1.0);
        spec.r = DMatrix::zeros(1, 1);
        assert!(make_lqr(&spec).is_err());
        let mut spec = LqrSpec::double_integrator(1.0, 1.0);
        spec.q = -DMatrix::identity(2, 2);
        assert!(make_lqr(&spec).is_err());
    }
}
