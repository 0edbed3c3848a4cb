//! Evaluator traits for the pieces of an optimal control problem, plus
//! closure-backed and finite-difference implementations.

use nalgebra::{DMatrix, DVector};

/// Central-difference step used by the finite-difference fallbacks.
pub const FD_STEP: f64 = 1e-6;

/// A time-dependent vector field `f(s, x)` with its state Jacobian.
pub trait VectorField: Send + Sync {
    fn eval(&self, s: f64, x: &DVector<f64>) -> DVector<f64>;
    fn jacobian(&self, s: f64, x: &DVector<f64>) -> DMatrix<f64>;

    /// `false` when the Jacobian is approximated numerically.
    fn is_analytic(&self) -> bool {
        true
    }
}

/// A time-dependent scalar field `L(s, x)` with its gradient.
pub trait ScalarField: Send + Sync {
    fn eval(&self, s: f64, x: &DVector<f64>) -> f64;
    fn gradient(&self, s: f64, x: &DVector<f64>) -> DVector<f64>;

    fn is_analytic(&self) -> bool {
        true
    }
}

/// A scalar function convex in its vector argument, with gradient and
/// Hessian. Used for both the control cost `G(s, u)` and the state cost
/// `H(s, x)`.
pub trait ConvexFunction: Send + Sync {
    fn eval(&self, s: f64, v: &DVector<f64>) -> f64;
    fn gradient(&self, s: f64, v: &DVector<f64>) -> DVector<f64>;
    fn hessian(&self, s: f64, v: &DVector<f64>) -> DMatrix<f64>;

    /// Constant diagonal Hessian, when the function is a separable quadratic.
    /// Enables closed-form Hamiltonian maximization.
    fn diagonal_quadratic(&self) -> Option<DVector<f64>> {
        None
    }

    /// Whether the function is exactly quadratic, so its second-order model is exact.
    fn is_quadratic(&self) -> bool {
        false
    }
}

/// A time-independent map `g(x)` with Jacobian (boundary and manifold maps).
pub trait VectorMap: Send + Sync {
    fn out_dim(&self) -> usize;
    fn eval(&self, x: &DVector<f64>) -> DVector<f64>;
    fn jacobian(&self, x: &DVector<f64>) -> DMatrix<f64>;
}

type FieldFn = dyn Fn(f64, &DVector<f64>) -> DVector<f64> + Send + Sync;
type JacFn = dyn Fn(f64, &DVector<f64>) -> DMatrix<f64> + Send + Sync;
type ScalarFn = dyn Fn(f64, &DVector<f64>) -> f64 + Send + Sync;

/// Vector field given by closures.
pub struct FnField {
    f: Box<FieldFn>,
    jac: Option<Box<JacFn>>,
}

impl FnField {
    pub fn new<F, J>(f: F, jac: J) -> Self
    where
        F: Fn(f64, &DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
        J: Fn(f64, &DVector<f64>) -> DMatrix<f64> + Send + Sync + 'static,
    {
        FnField {
            f: Box::new(f),
            jac: Some(Box::new(jac)),
        }
    }

    /// Field without an analytic Jacobian; the Jacobian is approximated by
    /// central differences and the field reports itself as non-analytic.
    pub fn finite_difference<F>(f: F) -> Self
    where
        F: Fn(f64, &DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
    {
        FnField {
            f: Box::new(f),
            jac: None,
        }
    }
}

impl VectorField for FnField {
    fn eval(&self, s: f64, x: &DVector<f64>) -> DVector<f64> {
        (self.f)(s, x)
    }

    fn jacobian(&self, s: f64, x: &DVector<f64>) -> DMatrix<f64> {
        match &self.jac {
            Some(j) => j(s, x),
            None => central_jacobian(|y| (self.f)(s, y), x),
        }
    }

    fn is_analytic(&self) -> bool {
        self.jac.is_some()
    }
}

/// Scalar field given by closures.
pub struct FnScalar {
    f: Box<ScalarFn>,
    grad: Option<Box<FieldFn>>,
}

impl FnScalar {
    pub fn new<F, G>(f: F, grad: G) -> Self
    where
        F: Fn(f64, &DVector<f64>) -> f64 + Send + Sync + 'static,
        G: Fn(f64, &DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
    {
        FnScalar {
            f: Box::new(f),
            grad: Some(Box::new(grad)),
        }
    }

    pub fn finite_difference<F>(f: F) -> Self
    where
        F: Fn(f64, &DVector<f64>) -> f64 + Send + Sync + 'static,
    {
        FnScalar {
            f: Box::new(f),
            grad: None,
        }
    }
}

impl ScalarField for FnScalar {
    fn eval(&self, s: f64, x: &DVector<f64>) -> f64 {
        (self.f)(s, x)
    }

    fn gradient(&self, s: f64, x: &DVector<f64>) -> DVector<f64> {
        match &self.grad {
            Some(g) => g(s, x),
            None => central_gradient(|y| (self.f)(s, y), x),
        }
    }

    fn is_analytic(&self) -> bool {
        self.grad.is_some()
    }
}

/// The zero scalar field.
#[derive(Debug, Clone, Copy)]
pub struct ZeroScalar {
    pub dim: usize,
}

impl ScalarField for ZeroScalar {
    fn eval(&self, _s: f64, _x: &DVector<f64>) -> f64 {
        0.0
    }

    fn gradient(&self, _s: f64, _x: &DVector<f64>) -> DVector<f64> {
        DVector::zeros(self.dim)
    }
}

/// The zero vector field on `R^dim`.
#[derive(Debug, Clone, Copy)]
pub struct ZeroField {
    pub dim: usize,
}

impl VectorField for ZeroField {
    fn eval(&self, _s: f64, _x: &DVector<f64>) -> DVector<f64> {
        DVector::zeros(self.dim)
    }

    fn jacobian(&self, _s: f64, _x: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::zeros(self.dim, self.dim)
    }
}

/// Constant vector field `f(s, x) = c`.
#[derive(Debug, Clone)]
pub struct ConstantField {
    pub value: DVector<f64>,
}

impl VectorField for ConstantField {
    fn eval(&self, _s: f64, _x: &DVector<f64>) -> DVector<f64> {
        self.value.clone()
    }

    fn jacobian(&self, _s: f64, _x: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::zeros(self.value.len(), self.value.len())
    }
}

/// Linear vector field `f(s, x) = A x`.
#[derive(Debug, Clone)]
pub struct LinearField {
    pub matrix: DMatrix<f64>,
}

impl VectorField for LinearField {
    fn eval(&self, _s: f64, x: &DVector<f64>) -> DVector<f64> {
        &self.matrix * x
    }

    fn jacobian(&self, _s: f64, _x: &DVector<f64>) -> DMatrix<f64> {
        self.matrix.clone()
    }
}

/// Quadratic form `vᵀ W v` with symmetric PSD `W`.
#[derive(Debug, Clone)]
pub struct QuadraticForm {
    pub weight: DMatrix<f64>,
}

impl QuadraticForm {
    pub fn identity(dim: usize) -> Self {
        QuadraticForm {
            weight: DMatrix::identity(dim, dim),
        }
    }

    pub fn zero(dim: usize) -> Self {
        QuadraticForm {
            weight: DMatrix::zeros(dim, dim),
        }
    }
}

impl ConvexFunction for QuadraticForm {
    fn eval(&self, _s: f64, v: &DVector<f64>) -> f64 {
        v.dot(&(&self.weight * v))
    }

    fn gradient(&self, _s: f64, v: &DVector<f64>) -> DVector<f64> {
        (&self.weight + self.weight.transpose()) * v
    }

    fn hessian(&self, _s: f64, _v: &DVector<f64>) -> DMatrix<f64> {
        &self.weight + self.weight.transpose()
    }

    fn is_quadratic(&self) -> bool {
        true
    }

    fn diagonal_quadratic(&self) -> Option<DVector<f64>> {
        let n = self.weight.nrows();
        let off_diag = (0..n)
            .flat_map(|i| (0..n).map(move |j| (i, j)))
            .any(|(i, j)| i != j && self.weight[(i, j)] != 0.0);
        if off_diag {
            None
        } else {
            Some(self.weight.diagonal() * 2.0)
        }
    }
}

/// `factor * inner`, for a nonnegative constant factor.
pub struct ScaledConvex {
    pub inner: std::sync::Arc<dyn ConvexFunction>,
    pub factor: f64,
}

impl ConvexFunction for ScaledConvex {
    fn eval(&self, s: f64, v: &DVector<f64>) -> f64 {
        self.factor * self.inner.eval(s, v)
    }

    fn gradient(&self, s: f64, v: &DVector<f64>) -> DVector<f64> {
        self.inner.gradient(s, v) * self.factor
    }

    fn hessian(&self, s: f64, v: &DVector<f64>) -> DMatrix<f64> {
        self.inner.hessian(s, v) * self.factor
    }

    fn diagonal_quadratic(&self) -> Option<DVector<f64>> {
        self.inner.diagonal_quadratic().map(|d| d * self.factor)
    }

    fn is_quadratic(&self) -> bool {
        self.inner.is_quadratic()
    }
}

/// Affine map `g(x) = M x - c`.
#[derive(Debug, Clone)]
pub struct AffineMap {
    pub matrix: DMatrix<f64>,
    pub offset: DVector<f64>,
}

impl AffineMap {
    /// `g(x) = x[indices] - targets`.
    pub fn select(dim: usize, indices: &[usize], targets: &[f64]) -> Self {
        let mut matrix = DMatrix::zeros(indices.len(), dim);
        for (row, &i) in indices.iter().enumerate() {
            matrix[(row, i)] = 1.0;
        }
        AffineMap {
            matrix,
            offset: DVector::from_column_slice(targets),
        }
    }
}

impl VectorMap for AffineMap {
    fn out_dim(&self) -> usize {
        self.matrix.nrows()
    }

    fn eval(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.matrix * x - &self.offset
    }

    fn jacobian(&self, _x: &DVector<f64>) -> DMatrix<f64> {
        self.matrix.clone()
    }
}

/// Central-difference Jacobian of `f` at `x`.
pub fn central_jacobian<F>(f: F, x: &DVector<f64>) -> DMatrix<f64>
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    let n = x.len();
    let mut cols = Vec::with_capacity(n);
    let mut probe = x.clone();
    for i in 0..n {
        let h = FD_STEP * x[i].abs().max(1.0);
        probe[i] = x[i] + h;
        let plus = f(&probe);
        probe[i] = x[i] - h;
        let minus = f(&probe);
        probe[i] = x[i];
        cols.push((plus - minus) / (2.0 * h));
    }
    if cols.is_empty() {
        return DMatrix::zeros(f(x).len(), 0);
    }
    DMatrix::from_columns(&cols)
}

/// Central-difference gradient of a scalar function.
pub fn central_gradient<F>(f: F, x: &DVector<f64>) -> DVector<f64>
where
    F: Fn(&DVector<f64>) -> f64,
{
    let mut probe = x.clone();
    DVector::from_fn(x.len(), |i, _| {
        let h = FD_STEP * x[i].abs().max(1.0);
        probe[i] = x[i] + h;
        let plus = f(&probe);
        probe[i] = x[i] - h;
        let minus = f(&probe);
        probe[i] = x[i];
        (plus - minus) / (2.0 * h)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn finite_difference_field_is_flagged() {
        let f = FnField::finite_difference(|_s, x: &DVector<f64>| {
            DVector::from_vec(vec![x[0].sin(), x[0] * x[1]])
        });
        assert!(!f.is_analytic());
        let x = DVector::from_vec(vec![0.3, -1.2]);
        let j = f.jacobian(0.0, &x);
        assert!((j[(0, 0)] - 0.3f64.cos()).abs() < 1e-8);
        assert!((j[(1, 0)] + 1.2).abs() < 1e-8);
        assert!((j[(1, 1)] - 0.3).abs() < 1e-8);
    }

    #[test]
    fn quadratic_form_reports_diagonal() {
        let q = QuadraticForm::identity(2);
        assert_eq!(q.diagonal_quadratic().unwrap(), DVector::from_vec(vec![2.0, 2.0]));
        let mut w = DMatrix::identity(2, 2);
        w[(0, 1)] = 0.5;
        assert!(QuadraticForm { weight: w }.diagonal_quadratic().is_none());
    }
}
