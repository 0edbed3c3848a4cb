use std::sync::Arc;

use nalgebra::{DMatrix, DVector, Vector3};

use super::fields::{QuadraticForm, ZeroField, ZeroScalar};
use super::{ControlSet, FinalTime, OcpProblem, ProblemParts, ScalarField, VectorField, VectorMap};
use crate::error::{Error, Result};
use crate::manifold::{ManifoldSpec, UnitSphere};

/// Rotation of a unit vector by controlled angular rates about fixed axes.
pub struct SphereSpec {
    pub x0: [f64; 3],
    pub axes: Vec<[f64; 3]>,
    pub boundary: Arc<dyn VectorMap>,
    pub tf: f64,
    pub u_bar: f64,
}

/// `fᵢ(x) = aᵢ × x`.
struct AxisRotation {
    axis: Vector3<f64>,
}

impl VectorField for AxisRotation {
    fn eval(&self, _s: f64, x: &DVector<f64>) -> DVector<f64> {
        let v = self.axis.cross(&Vector3::new(x[0], x[1], x[2]));
        DVector::from_column_slice(v.as_slice())
    }

    fn jacobian(&self, _s: f64, _x: &DVector<f64>) -> DMatrix<f64> {
        let a = &self.axis;
        DMatrix::from_row_slice(3, 3, &[0.0, -a[2], a[1], a[2], 0.0, -a[0], -a[1], a[0], 0.0])
    }
}

/// `g(x) = Eᵀx` with `E` an orthonormal basis of `x_f^⊥`; on the sphere its
/// zero set is `{±x_f}`.
pub struct DirectionTarget {
    basis: DMatrix<f64>,
}

impl DirectionTarget {
    pub fn new(xf: [f64; 3]) -> Result<Self> {
        let d = Vector3::from(xf);
        if (d.norm() - 1.0).abs() > 1e-12 {
            return Err(Error::Config("target direction must be a unit vector".into()));
        }
        let helper = if d[0].abs() < 0.9 { Vector3::x() } else { Vector3::y() };
        let e1 = (helper - d * d.dot(&helper)).normalize();
        let e2 = d.cross(&e1);
        // Prefer coordinate axes when they are already orthogonal to the target.
        let axes: Vec<Vector3<f64>> = [Vector3::x(), Vector3::y(), Vector3::z()]
            .into_iter()
            .filter(|a| a.dot(&d).abs() < 1e-15)
            .collect();
        let (e1, e2) = if axes.len() == 2 { (axes[0], axes[1]) } else { (e1, e2) };
        let basis = DMatrix::from_row_slice(2, 3, &[e1[0], e1[1], e1[2], e2[0], e2[1], e2[2]]);
        Ok(DirectionTarget { basis })
    }
}

impl VectorMap for DirectionTarget {
    fn out_dim(&self) -> usize {
        2
    }

    fn eval(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.basis * x
    }

    fn jacobian(&self, _x: &DVector<f64>) -> DMatrix<f64> {
        self.basis.clone()
    }
}

/// Problem on `S²` with tangent control fields; the manifold constraint
/// is returned alongside and is not imposed by the problem itself.
pub fn make_sphere_rotation(spec: &SphereSpec) -> Result<(OcpProblem, ManifoldSpec)> {
    let x0 = Vector3::from(spec.x0);
    if (x0.norm() - 1.0).abs() > 1e-12 {
        return Err(Error::Config(format!("initial state must be a unit vector, |x0| = {}", x0.norm())));
    }
    if spec.axes.is_empty() || spec.axes.len() > 3 {
        return Err(Error::Config("between one and three rotation axes are required".into()));
    }
    let m = spec.axes.len();
    let control_fields = spec
        .axes
        .iter()
        .map(|a| Arc::new(AxisRotation { axis: Vector3::from(*a) }) as Arc<dyn VectorField>)
        .collect();
    let cost_l = (0..=m)
        .map(|_| Arc::new(ZeroScalar { dim: 3 }) as Arc<dyn ScalarField>)
        .collect();
    let problem = OcpProblem::new(ProblemParts {
        name: "sphere".into(),
        state_dim: 3,
        control_dim: m,
        drift: Arc::new(ZeroField { dim: 3 }),
        control_fields,
        cost_g: Arc::new(QuadraticForm::identity(m)),
        cost_h: Arc::new(QuadraticForm::zero(3)),
        cost_l,
        boundary: spec.boundary.clone(),
        control_set: ControlSet::symmetric(m, spec.u_bar)?,
        horizon_cap: spec.tf,
        initial_state: DVector::from_column_slice(&spec.x0),
        initial_fixed: None,
        final_time: FinalTime::Fixed(spec.tf),
        state_bound: 10.0,
    })?;
    Ok((problem, ManifoldSpec::new(Arc::new(UnitSphere { dim: 3 }), 2)))
}
