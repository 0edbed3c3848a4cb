//! Active-set polishing: re-solve the equality-constrained KKT system on the
//! constraints identified by ADMM, with a scalar root search for the ball
//! multiplier when the trust region binds.

use nalgebra::DVector;

use super::admm::Stacked;
use super::{QpProblem, SolverSettings};
use crate::linalg::{CscMatrix, QuasiDefiniteLdl};

const REGULARIZATION: f64 = 1e-9;
const REFINE_STEPS: usize = 25;
const ACTIVE_SET_PASSES: usize = 12;

pub(crate) struct Polished {
    pub x: DVector<f64>,
    pub y_eq: DVector<f64>,
    pub y_box: DVector<f64>,
    pub mu: f64,
    pub prim: f64,
    pub dual: f64,
    pub slack: DVector<f64>,
    pub y_rows: DVector<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Bound {
    Free,
    Lower,
    Upper,
    /// `lower == upper`.
    Fixed,
}

/// Reduced KKT `[P + 2μW, Aᵀ; A, 0]` with `A` = equalities plus pinned bounds.
struct Kkt {
    ldl: QuasiDefiniteLdl,
    full: CscMatrix,
}

impl Kkt {
    fn build(qp: &QpProblem<'_>, pinned: &[usize], mu: f64) -> Option<Kkt> {
        let n = qp.variable_count();
        let ne = qp.a_eq.nrows;
        let dim = n + ne + pinned.len();
        let mut diag = vec![0.0; n];
        if let Some(b) = qp.ball {
            for (&i, &w) in b.indices.iter().zip(&b.weights) {
                diag[i] += 2.0 * mu * w;
            }
        }
        let mut full: Vec<(usize, usize, f64)> = qp.p.iter().collect();
        full.extend((0..n).filter(|&i| diag[i] != 0.0).map(|i| (i, i, diag[i])));
        for (r, j, v) in qp.a_eq.iter() {
            full.push((j, n + r, v));
            full.push((n + r, j, v));
        }
        for (k, &v) in pinned.iter().enumerate() {
            full.push((v, n + ne + k, 1.0));
            full.push((n + ne + k, v, 1.0));
        }
        let mut upper: Vec<(usize, usize, f64)> = full.iter().copied().filter(|e| e.0 <= e.1).collect();
        upper.extend((0..n).map(|i| (i, i, REGULARIZATION)));
        upper.extend((n..dim).map(|i| (i, i, -REGULARIZATION)));
        let ldl = QuasiDefiniteLdl::factor(dim, &upper).ok()?;
        Some(Kkt {
            ldl,
            full: CscMatrix::from_triplets(dim, dim, &full),
        })
    }

    /// Solve against the unregularized matrix by iterative refinement.
    fn solve(&self, b: &DVector<f64>) -> Option<DVector<f64>> {
        let mut x = self.ldl.solve_unrefined(b);
        let target = 1e-13 * (1.0 + b.amax());
        let mut last = f64::INFINITY;
        for _ in 0..REFINE_STEPS {
            let r = b - self.full.mul_vec(&x);
            let rn = r.amax();
            if !rn.is_finite() {
                return None;
            }
            if rn <= target || rn > 0.9 * last {
                break;
            }
            last = rn;
            x += self.ldl.solve_unrefined(&r);
        }
        let rn = (b - self.full.mul_vec(&x)).amax();
        (rn <= 1e-9 * (1.0 + b.amax()) && x.iter().all(|v| v.is_finite())).then_some(x)
    }
}

struct KktPoint {
    x: DVector<f64>,
    y_eq: DVector<f64>,
    y_pin: DVector<f64>,
}

fn solve_at(qp: &QpProblem<'_>, pinned: &[(usize, f64)], mu: f64) -> Option<(KktPoint, Kkt)> {
    let n = qp.variable_count();
    let ne = qp.a_eq.nrows;
    let vars: Vec<usize> = pinned.iter().map(|p| p.0).collect();
    let kkt = Kkt::build(qp, &vars, mu)?;
    let mut rhs = DVector::zeros(n + ne + pinned.len());
    for i in 0..n {
        rhs[i] = -qp.q[i];
    }
    if let Some(b) = qp.ball {
        for ((&i, &w), &c) in b.indices.iter().zip(&b.weights).zip(&b.center) {
            rhs[i] += 2.0 * mu * w * c;
        }
    }
    rhs.rows_mut(n, ne).copy_from(qp.b_eq);
    for (k, &(_, v)) in pinned.iter().enumerate() {
        rhs[n + ne + k] = v;
    }
    let sol = kkt.solve(&rhs)?;
    let point = KktPoint {
        x: sol.rows(0, n).into_owned(),
        y_eq: sol.rows(n, ne).into_owned(),
        y_pin: sol.rows(n + ne, pinned.len()).into_owned(),
    };
    Some((point, kkt))
}

/// `dφ/dμ` for `φ(μ) = ball(x(μ)) − Δ`.
fn ball_slope(qp: &QpProblem<'_>, kkt: &Kkt, x: &DVector<f64>) -> Option<f64> {
    let b = qp.ball?;
    let mut rhs = DVector::zeros(kkt.full.nrows);
    for ((&i, &w), &c) in b.indices.iter().zip(&b.weights).zip(&b.center) {
        rhs[i] = -2.0 * w * (x[i] - c);
    }
    let dx = kkt.solve(&rhs)?;
    Some(
        b.indices
            .iter()
            .zip(&b.weights)
            .zip(&b.center)
            .map(|((&i, &w), &c)| 2.0 * w * (x[i] - c) * dx[i])
            .sum(),
    )
}

/// Solve with the ball binding: find `μ > 0` with `ball(x(μ)) = Δ`.
/// Returns `None` when the ball turns out not to bind (`φ(0) ≤ 0`).
fn solve_ball_active(qp: &QpProblem<'_>, pinned: &[(usize, f64)], mu_guess: f64) -> Option<Option<(KktPoint, f64)>> {
    let ball = qp.ball?;
    let delta = ball.radius;
    let phi = |p: &KktPoint| ball.value(&p.x) - delta;
    if let Some((p0, _)) = solve_at(qp, pinned, 0.0) {
        if phi(&p0) <= 0.0 {
            return Some(None);
        }
    }
    let mut lo = 0.0;
    let mut hi = mu_guess.max(1e-10);
    let mut at_hi = None;
    for _ in 0..80 {
        match solve_at(qp, pinned, hi) {
            Some((p, k)) if phi(&p) <= 0.0 => {
                at_hi = Some((p, k));
                break;
            }
            Some(_) => {
                lo = hi;
                hi *= 4.0;
            }
            None => hi *= 4.0,
        }
    }
    let (mut point, mut kkt) = at_hi?;
    let mut mu = hi;
    let tol = 1e-14 * delta.max(1e-300);
    for _ in 0..200 {
        let f = phi(&point);
        if f.abs() <= tol || hi - lo <= 1e-15 * hi {
            break;
        }
        if f > 0.0 {
            lo = mu;
        } else {
            hi = mu;
        }
        let newton = ball_slope(qp, &kkt, &point.x).filter(|s| *s < 0.0).map(|s| mu - f / s);
        let next = match newton {
            Some(v) if v > lo && v < hi => v,
            _ if lo == 0.0 => hi * 0.5,
            _ => 0.5 * (lo + hi),
        };
        let (p, k) = solve_at(qp, pinned, next)?;
        mu = next;
        point = p;
        kkt = k;
    }
    Some(Some((point, mu)))
}

pub(crate) fn polish(
    qp: &QpProblem<'_>,
    st: &Stacked,
    z: &DVector<f64>,
    y: &DVector<f64>,
    settings: &SolverSettings,
) -> Option<Polished> {
    let n = qp.variable_count();
    let n_eq = st.n_eq;
    let mut state: Vec<Bound> = (0..st.n_box)
        .map(|r| {
            let row = n_eq + r;
            let (lo, hi) = (st.lo[row], st.hi[row]);
            if lo == hi {
                Bound::Fixed
            } else if z[row] - lo < -y[row] {
                Bound::Lower
            } else if hi - z[row] < y[row] {
                Bound::Upper
            } else {
                Bound::Free
            }
        })
        .collect();
    let (mut ball_active, mu_guess) = if st.n_ball > 0 {
        let range = st.ball_range();
        let yb = y.rows(range.start, st.n_ball);
        let dist = (0..st.n_ball)
            .map(|k| (z[range.start + k] - st.ball_center[k]).powi(2))
            .sum::<f64>()
            .sqrt();
        (st.ball_radius - dist < yb.norm(), yb.norm() / (2.0 * st.ball_radius))
    } else {
        (false, 0.0)
    };

    for _ in 0..ACTIVE_SET_PASSES {
        let pinned: Vec<(usize, f64)> = state
            .iter()
            .enumerate()
            .filter_map(|(r, s)| {
                let v = st.box_vars[r];
                match s {
                    Bound::Free => None,
                    Bound::Lower | Bound::Fixed => Some((v, st.lo[n_eq + r])),
                    Bound::Upper => Some((v, st.hi[n_eq + r])),
                }
            })
            .collect();
        let (point, mu) = if ball_active {
            match solve_ball_active(qp, &pinned, mu_guess)? {
                Some(r) => r,
                None => {
                    ball_active = false;
                    continue;
                }
            }
        } else {
            (solve_at(qp, &pinned, 0.0)?.0, 0.0)
        };

        let mut y_box = DVector::zeros(n);
        for (k, &(v, _)) in pinned.iter().enumerate() {
            y_box[v] = point.y_pin[k];
        }
        let stationarity = qp.stationarity(&point.x, &point.y_eq, &y_box, mu);
        let prim = qp.primal_violation(&point.x);
        let dual = stationarity.amax();
        let prim_scale = qp.a_eq.mul_vec(&point.x).amax().max(qp.b_eq.amax()).max(point.x.amax());
        let dual_scale = qp
            .p
            .mul_vec(&point.x)
            .amax()
            .max(qp.q.amax())
            .max(qp.a_eq.tr_mul_vec(&point.y_eq).amax());
        let tol_p = settings.eps_abs + settings.eps_rel * prim_scale;
        let tol_d = settings.eps_abs + settings.eps_rel * dual_scale;

        // Active-set corrections.
        let mut changed = false;
        for (r, s) in state.iter_mut().enumerate() {
            let v = st.box_vars[r];
            let (lo, hi) = (st.lo[n_eq + r], st.hi[n_eq + r]);
            let xv = point.x[v];
            let next = match *s {
                Bound::Free if xv < lo - tol_p => Bound::Lower,
                Bound::Free if xv > hi + tol_p => Bound::Upper,
                Bound::Lower if y_box[v] > tol_d => Bound::Free,
                Bound::Upper if y_box[v] < -tol_d => Bound::Free,
                other => other,
            };
            if next != *s {
                *s = next;
                changed = true;
            }
        }
        if !ball_active && qp.ball.is_some_and(|b| b.value(&point.x).sqrt() > b.radius.sqrt() + tol_p) {
            ball_active = true;
            changed = true;
        }
        if changed {
            continue;
        }
        if prim > tol_p || dual > tol_d {
            return None;
        }
        let (slack, y_rows) = warm_rows(qp, st, &point.x, &point.y_eq, &y_box, mu);
        return Some(Polished {
            x: point.x,
            y_eq: point.y_eq,
            y_box,
            mu,
            prim,
            dual,
            slack,
            y_rows,
        });
    }
    None
}

/// Row-space slack and dual of the stacked constraint for warm starts.
fn warm_rows(
    qp: &QpProblem<'_>,
    st: &Stacked,
    x: &DVector<f64>,
    y_eq: &DVector<f64>,
    y_box: &DVector<f64>,
    mu: f64,
) -> (DVector<f64>, DVector<f64>) {
    let rows = st.rows();
    let mut slack = st.c.mul_vec(x);
    let mut y = DVector::zeros(rows);
    for r in 0..st.n_eq {
        slack[r] = st.lo[r];
        y[r] = y_eq[r];
    }
    for (k, &v) in st.box_vars.iter().enumerate() {
        let r = st.n_eq + k;
        slack[r] = slack[r].clamp(st.lo[r], st.hi[r]);
        y[r] = y_box[v];
    }
    if let Some(b) = qp.ball {
        let start = st.n_eq + st.n_box;
        for (k, ((&i, &w), &c)) in b.indices.iter().zip(&b.weights).zip(&b.center).enumerate() {
            y[start + k] = 2.0 * mu * w.sqrt() * (x[i] - c);
        }
    }
    (slack, y)
}
