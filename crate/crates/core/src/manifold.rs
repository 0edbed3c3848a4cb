//! Manifold-type state constraints `M = m⁻¹(0)`: tangency of the dynamics,
//! projected costates and geometric extremal residuals.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::pmp::{pmp_residual, Extremal, PmpResidual, DEFAULT_REFINEMENT};
use crate::problem::{OcpProblem, VectorMap};

/// Tangency tolerance `‖Dm(x) fᵢ(s, x)‖`.
pub const TANGENCY_TOL: f64 = 1e-8;
/// Largest `‖m(x)‖` accepted as a point of `M`.
pub const ON_MANIFOLD_TOL: f64 = 1e-8;
/// Smallest singular value of `Dm` accepted as regular.
pub const REGULARITY_TOL: f64 = 1e-8;

/// `m(x) = ‖x‖² − 1`.
pub struct UnitSphere {
    pub dim: usize,
}

impl VectorMap for UnitSphere {
    fn out_dim(&self) -> usize {
        1
    }

    fn eval(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_element(1, x.norm_squared() - 1.0)
    }

    fn jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(1, self.dim, |_, j| 2.0 * x[j])
    }
}

/// The whole space, as an empty defining map.
pub struct Ambient {
    pub dim: usize,
}

impl VectorMap for Ambient {
    fn out_dim(&self) -> usize {
        0
    }

    fn eval(&self, _x: &DVector<f64>) -> DVector<f64> {
        DVector::zeros(0)
    }

    fn jacobian(&self, _x: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::zeros(0, self.dim)
    }
}

/// `d`-dimensional submanifold of `ℝⁿ` given by a submersion `m : ℝⁿ → ℝ^{n−d}`.
pub struct ManifoldSpec {
    pub defining_map: Arc<dyn VectorMap>,
    pub dim: usize,
}

impl ManifoldSpec {
    pub fn new(defining_map: Arc<dyn VectorMap>, dim: usize) -> Self {
        ManifoldSpec { defining_map, dim }
    }

    pub fn ambient(n: usize) -> Self {
        ManifoldSpec::new(Arc::new(Ambient { dim: n }), n)
    }

    pub fn codim(&self) -> usize {
        self.defining_map.out_dim()
    }

    fn ambient_dim(&self) -> usize {
        self.dim + self.codim()
    }

    pub fn distance(&self, x: &DVector<f64>) -> f64 {
        self.defining_map.eval(x).amax()
    }

    /// Orthonormal basis (columns) of `T_xM = ker Dm(x)`, from the right
    /// singular vectors of `Dm` followed by Gram–Schmidt.
    pub fn tangent_basis(&self, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        let n = self.ambient_dim();
        check_dim("manifold point", n, x.len())?;
        let r = self.codim();
        if r == 0 {
            return Ok(DMatrix::identity(n, n));
        }
        let dm = self.defining_map.jacobian(x);
        // Pad to square so the SVD returns the full right basis.
        let mut square = DMatrix::zeros(n, n);
        square.rows_mut(0, r).copy_from(&dm);
        let svd = square.svd(false, true);
        let v_t = svd.v_t.expect("requested");
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
        let smallest_range = svd.singular_values[order[r - 1]];
        if smallest_range < REGULARITY_TOL {
            return Err(Error::Degenerate(format!("Dm is rank deficient at x (σ_min = {smallest_range:.3e})")));
        }
        let null: Vec<DVector<f64>> = order[r..].iter().map(|&i| v_t.row(i).transpose()).collect();
        Ok(gram_schmidt(&null))
    }

    /// Newton projection of `x` onto `M` along the range of `Dmᵀ`.
    pub fn retract(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        let mut y = x.clone();
        for _ in 0..50 {
            let m = self.defining_map.eval(&y);
            if m.amax() <= 1e-14 {
                return Ok(y);
            }
            let dm = self.defining_map.jacobian(&y);
            let step = (&dm * dm.transpose())
                .cholesky()
                .ok_or_else(|| Error::Degenerate("Dm Dmᵀ is singular during retraction".into()))?
                .solve(&m);
            y -= dm.transpose() * step;
        }
        let d = self.distance(&y);
        if d <= ON_MANIFOLD_TOL {
            Ok(y)
        } else {
            Err(Error::OffManifold(d))
        }
    }
}

/// Modified Gram–Schmidt with a sign convention (largest-magnitude entry
/// positive) so that the basis is reproducible.
pub fn gram_schmidt(vectors: &[DVector<f64>]) -> DMatrix<f64> {
    let n = vectors.first().map_or(0, |v| v.len());
    let mut basis: Vec<DVector<f64>> = Vec::with_capacity(vectors.len());
    for v in vectors {
        let mut w = v.clone();
        for e in &basis {
            w -= e * e.dot(&w);
        }
        let norm = w.norm();
        if norm > 1e-12 {
            w /= norm;
            let lead = w.iamax();
            if w[lead] < 0.0 {
                w = -w;
            }
            basis.push(w);
        }
    }
    let mut out = DMatrix::zeros(n, basis.len());
    for (j, e) in basis.iter().enumerate() {
        out.set_column(j, e);
    }
    out
}

/// Ambient representative `Σⱼ (p·eⱼ) eⱼ` of the projected covector.
pub fn project_costate(manifold: &ManifoldSpec, x: &DVector<f64>, p: &DVector<f64>) -> Result<DVector<f64>> {
    let d = manifold.distance(x);
    if d > ON_MANIFOLD_TOL {
        return Err(Error::OffManifold(d));
    }
    let basis = manifold.tangent_basis(x)?;
    check_dim("costate", basis.nrows(), p.len())?;
    Ok(project_onto(&basis, p))
}

/// Orthogonal projection onto the span of the orthonormal columns of `basis`.
pub fn project_onto(basis: &DMatrix<f64>, p: &DVector<f64>) -> DVector<f64> {
    basis * (basis.transpose() * p)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TangencyReport {
    pub samples: usize,
    /// Largest `‖Dm(x) fᵢ(s, x)‖∞` seen.
    pub worst: f64,
    /// Field index of the worst case: 0 is the drift, `i ≥ 1` the control fields.
    pub worst_field: usize,
}

/// Check `Dm(x) fᵢ(s, x) = 0` for the drift and every control field at
/// random `(s, x)` with `x ∈ M`, sampled by retracting perturbations of `x⁰`.
pub fn check_tangency(problem: &OcpProblem, manifold: &ManifoldSpec, samples: usize, seed: u64) -> Result<TangencyReport> {
    let n = problem.state_dim();
    check_dim("manifold ambient dimension", n, manifold.ambient_dim())?;
    let mut report = TangencyReport {
        samples,
        worst: 0.0,
        worst_field: 0,
    };
    if manifold.codim() == 0 {
        return Ok(report);
    }
    let x0 = problem.initial_state();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = x0.amax().max(1.0);
    for _ in 0..samples {
        let s = rng.random::<f64>() * problem.horizon_cap();
        let jitter = DVector::from_fn(n, |_, _| scale * (2.0 * rng.random::<f64>() - 1.0));
        let x = manifold.retract(&(x0 + jitter))?;
        let dm = manifold.defining_map.jacobian(&x);
        let fields = std::iter::once(problem.drift()).chain(problem.control_fields().iter());
        for (i, f) in fields.enumerate() {
            let v = (&dm * f.eval(s, &x)).amax();
            if v > report.worst {
                report.worst = v;
                report.worst_field = i;
            }
            if v > TANGENCY_TOL {
                return Err(Error::Tangency {
                    field: i,
                    s,
                    x: x.as_slice().to_vec(),
                    violation: v,
                });
            }
        }
    }
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeometricResidual {
    /// `max ‖m(x(s))‖∞` over the samples.
    pub manifold_drift: f64,
    /// `max_j |λ(t_f)·v_j − p(t_f)·v_j|` over a basis of `T_{x(t_f)}M`.
    pub pairing: f64,
    /// `max |λ(t_f)·v|` over an orthonormal basis of `T_{x(t_f)}M ∩ ker ∂g/∂x`.
    pub projected_transversality: f64,
    /// `‖(λ(t_f), p⁰)‖` after normalization.
    pub nontriviality_margin: f64,
    pub maximality_gap: f64,
    pub ambient: PmpResidual,
}

/// Geometric extremal checks for a candidate computed with the manifold
/// constraint dropped.
pub fn geometric_extremal_residual(problem: &OcpProblem, manifold: &ManifoldSpec, candidate: &Extremal) -> Result<GeometricResidual> {
    let ambient = pmp_residual(problem, candidate, DEFAULT_REFINEMENT)?;
    let manifold_drift = (0..candidate.len())
        .map(|j| manifold.distance(&candidate.state(j)))
        .fold(0.0, f64::max);
    let last = candidate.len() - 1;
    // The candidate may sit slightly off M; evaluate the frame at its retraction.
    let x_f = manifold.retract(&candidate.state(last))?;
    let normalized = candidate.normalized()?;
    let p_f = normalized.costate(last);
    let basis = manifold.tangent_basis(&x_f)?;
    let lambda = project_onto(&basis, &p_f);
    let pairing = basis
        .column_iter()
        .map(|v| (lambda.dot(&v) - p_f.dot(&v)).abs())
        .fold(0.0, f64::max);
    let dg = problem.boundary().jacobian(&x_f);
    let restricted = &dg * &basis;
    let projected_transversality = if restricted.nrows() == 0 {
        lambda.amax()
    } else {
        let w = right_null_space(&restricted);
        (&basis * w).column_iter().map(|v| lambda.dot(&v).abs()).fold(0.0, f64::max)
    };
    let nontriviality_margin = (lambda.norm_squared() + normalized.abnormal_multiplier.powi(2)).sqrt();
    Ok(GeometricResidual {
        manifold_drift,
        pairing,
        projected_transversality,
        nontriviality_margin,
        maximality_gap: ambient.maximality_gap,
        ambient,
    })
}

/// Orthonormal basis of `ker a` for an `r × d` matrix.
fn right_null_space(a: &DMatrix<f64>) -> DMatrix<f64> {
    let (r, d) = a.shape();
    let mut square = DMatrix::zeros(d.max(r), d);
    square.rows_mut(0, r).copy_from(a);
    let svd = square.svd(false, true);
    let v_t = svd.v_t.expect("requested");
    let tol = 1e-10 * svd.singular_values.max().max(1.0);
    let null: Vec<DVector<f64>> = (0..svd.singular_values.len())
        .filter(|&i| svd.singular_values[i] <= tol)
        .map(|i| v_t.row(i).transpose())
        .collect();
    if null.is_empty() {
        DMatrix::zeros(d, 0)
    } else {
        gram_schmidt(&null)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{make_dubins, make_sphere_rotation, DirectionTarget, DubinsParams, FinalAngle, SphereSpec};

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(xs)
    }

    fn sphere() -> ManifoldSpec {
        ManifoldSpec::new(Arc::new(UnitSphere { dim: 3 }), 2)
    }

    fn sphere_problem() -> OcpProblem {
        let spec = SphereSpec {
            x0: [1.0, 0.0, 0.0],
            axes: vec![[0.0, 0.0, 1.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]],
            boundary: Arc::new(DirectionTarget::new([0.0, 1.0, 0.0]).unwrap()),
            tf: 1.0,
            u_bar: 5.0,
        };
        make_sphere_rotation(&spec).unwrap().0
    }

    #[test]
    fn rotations_are_tangent_to_the_sphere() {
        let report = check_tangency(&sphere_problem(), &sphere(), 200, 3).unwrap();
        assert!(report.worst <= 1e-12, "{report:?}");
    }

    #[test]
    fn radial_drift_is_rejected() {
        use crate::problem::fields::{ConstantField, LinearField, QuadraticForm, ZeroScalar};
        use crate::problem::{ControlSet, FinalTime, ProblemParts};
        let parts = ProblemParts {
            name: "radial".into(),
            state_dim: 3,
            control_dim: 1,
            drift: Arc::new(LinearField {
                matrix: DMatrix::identity(3, 3),
            }),
            control_fields: vec![Arc::new(ConstantField { value: DVector::zeros(3) })],
            cost_g: Arc::new(QuadraticForm::identity(1)),
            cost_h: Arc::new(QuadraticForm::zero(3)),
            cost_l: vec![Arc::new(ZeroScalar { dim: 3 }), Arc::new(ZeroScalar { dim: 3 })],
            boundary: Arc::new(DirectionTarget::new([0.0, 1.0, 0.0]).unwrap()),
            control_set: ControlSet::symmetric(1, 1.0).unwrap(),
            horizon_cap: 1.0,
            initial_state: v(&[1.0, 0.0, 0.0]),
            initial_fixed: None,
            final_time: FinalTime::Fixed(1.0),
            state_bound: 10.0,
        };
        let problem = OcpProblem::new(parts).unwrap();
        match check_tangency(&problem, &sphere(), 10, 0) {
            Err(Error::Tangency { field, violation, .. }) => {
                assert_eq!(field, 0);
                assert!((violation - 2.0).abs() < 1e-9, "{violation}");
            }
            other => panic!("expected a tangency error, got {other:?}"),
        }
    }

    #[test]
    fn trivial_manifold_is_vacuous() {
        let problem = make_dubins(&DubinsParams::default(), [0.0; 3], [5.0, 0.0], FinalAngle::Free).unwrap();
        let report = check_tangency(&problem, &ManifoldSpec::ambient(3), 5, 0).unwrap();
        assert_eq!(report.worst, 0.0);
        let p = v(&[1.0, -2.0, 0.5]);
        assert_eq!(project_costate(&ManifoldSpec::ambient(3), &v(&[9.0, 9.0, 9.0]), &p).unwrap(), p);
    }

    #[test]
    fn projection_at_the_pole_drops_the_normal_component() {
        let m = sphere();
        let x = v(&[0.0, 0.0, 1.0]);
        let lambda = project_costate(&m, &x, &v(&[1.0, 2.0, 5.0])).unwrap();
        assert!((lambda - v(&[1.0, 2.0, 0.0])).amax() < 1e-15);
        assert!(project_costate(&m, &x, &v(&[0.0, 0.0, 3.0])).unwrap().amax() < 1e-15);
        let tangent = v(&[0.3, -0.7, 0.0]);
        assert!((project_costate(&m, &x, &tangent).unwrap() - &tangent).amax() < 1e-15);
        assert!(matches!(project_costate(&m, &v(&[0.0, 0.0, 1.1]), &tangent), Err(Error::OffManifold(_))));
    }

    #[test]
    fn projection_is_idempotent_and_frame_independent() {
        let m = sphere();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let x = m.retract(&DVector::from_fn(3, |_, _| rng.random::<f64>() - 0.5)).unwrap();
            let p = DVector::from_fn(3, |_, _| 4.0 * rng.random::<f64>() - 2.0);
            let lambda = project_costate(&m, &x, &p).unwrap();
            assert!((project_costate(&m, &x, &lambda).unwrap() - &lambda).amax() < 1e-12);
            let basis = m.tangent_basis(&x).unwrap();
            let (a, b) = (basis.column(0).into_owned(), basis.column(1).into_owned());
            let other = gram_schmidt(&[&a * 0.6 + &b * 0.8, &b - &a * 2.0]);
            assert!((project_onto(&other, &p) - &lambda).amax() < 1e-12);
            assert!((x.dot(&lambda)).abs() < 1e-12);
        }
    }

    #[test]
    fn normal_costate_components_do_not_change_the_pairing() {
        let m = sphere();
        let x = m.retract(&v(&[0.3, 0.4, 0.5])).unwrap();
        let p = v(&[0.2, -1.0, 0.7]);
        let shifted = &p + &x * 3.0;
        assert!((project_costate(&m, &x, &p).unwrap() - project_costate(&m, &x, &shifted).unwrap()).amax() < 1e-12);
    }

    #[test]
    fn retraction_lands_on_the_sphere() {
        let m = sphere();
        let x = m.retract(&v(&[2.0, -1.0, 0.5])).unwrap();
        assert!(m.distance(&x) < 1e-14);
        assert!((x.normalize() - v(&[2.0, -1.0, 0.5]).normalize()).amax() < 1e-12);
    }

    /// Arc length `Σ ∠(x_j, x_{j+1})` of a sampled curve on the unit sphere.
    fn arc_length(states: &DMatrix<f64>) -> f64 {
        (0..states.nrows() - 1)
            .map(|j| {
                let (a, b) = (states.row(j), states.row(j + 1));
                a.cross(&b).norm().atan2(a.dot(&b))
            })
            .sum()
    }

    #[test]
    fn scp_on_the_sphere_yields_a_geometric_extremal() {
        use crate::pmp::scp_extremal;
        use crate::scp::{run_scp, straight_line_guess, ScpConfig, ScpStatus};
        let spec = SphereSpec {
            x0: [1.0, 0.0, 0.0],
            axes: vec![[0.0, 0.0, 1.0]],
            boundary: Arc::new(DirectionTarget::new([0.0, 1.0, 0.0]).unwrap()),
            tf: 1.0,
            u_bar: 5.0,
        };
        let (problem, m) = make_sphere_rotation(&spec).unwrap();
        let config = ScpConfig::default();
        let guess = straight_line_guess(&problem, &v(&[0.0, 1.0, 0.0]), config.node_count, 1.0).unwrap();
        let run = run_scp(&problem, &guess, &config).unwrap();
        assert_eq!(run.status, ScpStatus::Converged, "{:?}", run.history.records);
        let ext = scp_extremal(&run).unwrap();
        let res = geometric_extremal_residual(&problem, &m, &ext).unwrap();
        assert!(res.manifold_drift <= 1e-6, "{res:?}");
        assert!(res.pairing <= 1e-12, "{res:?}");
        assert!(res.projected_transversality <= 1e-6, "{res:?}");
        assert!(res.nontriviality_margin > 0.5, "{res:?}");
        let length = arc_length(&ext.states);
        assert!((length / std::f64::consts::FRAC_PI_2 - 1.0).abs() <= 1e-4, "{length}");
    }
}
