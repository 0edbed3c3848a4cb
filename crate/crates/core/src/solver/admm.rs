use nalgebra::DVector;

use super::polish::{polish, Polished};
use super::{QpProblem, SolverSettings, SolverSolution, SolverStatus};
use crate::error::Result;
use crate::linalg::{CscMatrix, QuasiDefiniteLdl};

const MIN_SCALING: f64 = 1e-4;
const MAX_SCALING: f64 = 1e4;
const RHO_MIN: f64 = 1e-6;
const RHO_MAX: f64 = 1e6;
const RHO_EQ_FACTOR: f64 = 1e3;
const ADAPT_INTERVAL: usize = 25;
const ADAPT_TOLERANCE: f64 = 5.0;

/// Stacked constraint `Cz ∈ K` with rows ordered (equalities, bounds, ball).
pub(crate) struct Stacked {
    pub c: CscMatrix,
    pub n_eq: usize,
    pub n_box: usize,
    pub n_ball: usize,
    /// Variable of each bound row.
    pub box_vars: Vec<usize>,
    /// Row-wise interval for equality and bound rows.
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    /// Ball in row space: `‖v − center‖ ≤ radius`.
    pub ball_center: Vec<f64>,
    pub ball_radius: f64,
}

impl Stacked {
    pub fn new(qp: &QpProblem<'_>) -> Self {
        let n = qp.variable_count();
        let n_eq = qp.a_eq.nrows;
        let box_vars: Vec<usize> = (0..n)
            .filter(|&i| qp.lower[i].is_finite() || qp.upper[i].is_finite())
            .collect();
        let n_box = box_vars.len();
        let n_ball = qp.ball.map_or(0, |b| b.indices.len());
        let mut entries: Vec<(usize, usize, f64)> = qp.a_eq.iter().collect();
        let mut lo: Vec<f64> = qp.b_eq.iter().copied().collect();
        let mut hi = lo.clone();
        for (r, &v) in box_vars.iter().enumerate() {
            entries.push((n_eq + r, v, 1.0));
            lo.push(qp.lower[v]);
            hi.push(qp.upper[v]);
        }
        let mut ball_center = Vec::with_capacity(n_ball);
        let mut ball_radius = 0.0;
        if let Some(b) = qp.ball {
            for (r, ((&i, &w), &c)) in b.indices.iter().zip(&b.weights).zip(&b.center).enumerate() {
                let s = w.sqrt();
                entries.push((n_eq + n_box + r, i, s));
                ball_center.push(s * c);
            }
            ball_radius = b.radius.sqrt();
        }
        let rows = n_eq + n_box + n_ball;
        Stacked {
            c: CscMatrix::from_triplets(rows, n, &entries),
            n_eq,
            n_box,
            n_ball,
            box_vars,
            lo,
            hi,
            ball_center,
            ball_radius,
        }
    }

    pub fn rows(&self) -> usize {
        self.n_eq + self.n_box + self.n_ball
    }

    pub fn ball_range(&self) -> std::ops::Range<usize> {
        self.n_eq + self.n_box..self.rows()
    }

    /// Support function `sup_{v ∈ K} yᵀv` (may be `+∞`).
    fn support(&self, y: &DVector<f64>) -> f64 {
        let mut s = 0.0;
        for r in 0..self.n_eq + self.n_box {
            let yr = y[r];
            if yr > 0.0 {
                s += yr * self.hi[r];
            } else if yr < 0.0 {
                s += yr * self.lo[r];
            }
        }
        if self.n_ball > 0 {
            let yb = y.rows(self.n_eq + self.n_box, self.n_ball);
            s += yb.iter().zip(&self.ball_center).map(|(a, b)| a * b).sum::<f64>() + self.ball_radius * yb.norm();
        }
        s
    }
}

/// Scaled copy of the problem data: `P̄ = c D P D`, `q̄ = c D q`, `C̄ = E C D`.
struct Scaled {
    p: CscMatrix,
    q: DVector<f64>,
    c: CscMatrix,
    d: DVector<f64>,
    e: DVector<f64>,
    cost: f64,
    lo: Vec<f64>,
    hi: Vec<f64>,
    ball_center: Vec<f64>,
    ball_radius: f64,
}

fn clamp_norm(v: f64) -> f64 {
    if v < MIN_SCALING {
        1.0
    } else {
        v.min(MAX_SCALING)
    }
}

fn equilibrate(qp: &QpProblem<'_>, st: &Stacked, iterations: usize) -> Scaled {
    let n = qp.variable_count();
    let rows = st.rows();
    let mut d = DVector::from_element(n, 1.0);
    let mut e = DVector::from_element(rows, 1.0);
    let mut p = qp.p.clone();
    let mut c = st.c.clone();
    let ball = st.ball_range();
    for _ in 0..iterations {
        let pn = p.col_norms_inf();
        let cn = c.col_norms_inf();
        let dd = DVector::from_fn(n, |j, _| 1.0 / clamp_norm(pn[j].max(cn[j])).sqrt());
        let rn = c.row_norms_inf();
        let mut de = DVector::from_fn(rows, |i, _| 1.0 / clamp_norm(rn[i]).sqrt());
        if !ball.is_empty() {
            // One factor for the whole ball block keeps the set a ball.
            let mean = ball.clone().map(|i| de[i]).sum::<f64>() / ball.len() as f64;
            for i in ball.clone() {
                de[i] = mean;
            }
        }
        p.scale(&dd, &dd);
        c.scale(&de, &dd);
        d.component_mul_assign(&dd);
        e.component_mul_assign(&de);
    }
    let mut q = qp.q.component_mul(&d);
    let pn = p.col_norms_inf();
    let mean_p = if n > 0 { pn.sum() / n as f64 } else { 0.0 };
    let cost = 1.0 / clamp_norm(mean_p.max(q.amax()));
    p.values.iter_mut().for_each(|v| *v *= cost);
    q *= cost;
    let lo = (0..st.n_eq + st.n_box).map(|r| st.lo[r] * e[r]).collect();
    let hi = (0..st.n_eq + st.n_box).map(|r| st.hi[r] * e[r]).collect();
    let eb = if ball.is_empty() { 1.0 } else { e[ball.start] };
    Scaled {
        p,
        q,
        c,
        d,
        e,
        cost,
        lo,
        hi,
        ball_center: st.ball_center.iter().map(|v| v * eb).collect(),
        ball_radius: st.ball_radius * eb,
    }
}

impl Scaled {
    fn project(&self, st: &Stacked, v: &mut DVector<f64>) {
        for r in 0..st.n_eq + st.n_box {
            v[r] = v[r].clamp(self.lo[r], self.hi[r]);
        }
        if st.n_ball > 0 {
            let start = st.n_eq + st.n_box;
            let mut dist2 = 0.0;
            for k in 0..st.n_ball {
                dist2 += (v[start + k] - self.ball_center[k]).powi(2);
            }
            let dist = dist2.sqrt();
            if dist > self.ball_radius {
                let f = self.ball_radius / dist;
                for k in 0..st.n_ball {
                    let c = self.ball_center[k];
                    v[start + k] = c + (v[start + k] - c) * f;
                }
            }
        }
    }
}

fn factor_kkt(sc: &Scaled, sigma: f64, rho: &DVector<f64>) -> Result<QuasiDefiniteLdl> {
    let n = sc.q.len();
    let rows = rho.len();
    let mut upper: Vec<(usize, usize, f64)> = sc.p.iter().filter(|&(i, j, _)| i <= j).collect();
    upper.extend((0..n).map(|i| (i, i, sigma)));
    upper.extend(sc.c.iter().map(|(r, j, v)| (j, n + r, v)));
    upper.extend((0..rows).map(|r| (n + r, n + r, -1.0 / rho[r])));
    QuasiDefiniteLdl::factor(n + rows, &upper)
}

fn rho_vector(st: &Stacked, rho: f64) -> DVector<f64> {
    DVector::from_fn(st.rows(), |r, _| {
        let equality = r < st.n_eq || (r < st.n_eq + st.n_box && st.lo[r] == st.hi[r]);
        if equality {
            rho * RHO_EQ_FACTOR
        } else {
            rho
        }
    })
}

/// Unscaled residuals and the norms entering the relative tolerances.
struct Residuals {
    prim: f64,
    dual: f64,
    prim_scale: f64,
    dual_scale: f64,
}

struct Unscaled {
    x: DVector<f64>,
    z: DVector<f64>,
    y: DVector<f64>,
}

impl Scaled {
    fn unscale(&self, x: &DVector<f64>, z: &DVector<f64>, y: &DVector<f64>) -> Unscaled {
        Unscaled {
            x: x.component_mul(&self.d),
            z: z.component_div(&self.e),
            y: y.component_mul(&self.e) / self.cost,
        }
    }

    fn residuals(&self, x: &DVector<f64>, z: &DVector<f64>, y: &DVector<f64>) -> Residuals {
        let cx = self.c.mul_vec(x);
        let einv_cx = cx.component_div(&self.e);
        let einv_z = z.component_div(&self.e);
        let prim = (&einv_cx - &einv_z).amax();
        let px = self.p.mul_vec(x).component_div(&self.d) / self.cost;
        let cty = self.c.tr_mul_vec(y).component_div(&self.d) / self.cost;
        let q = self.q.component_div(&self.d) / self.cost;
        let dual = (&px + &q + &cty).amax();
        Residuals {
            prim,
            dual,
            prim_scale: einv_cx.amax().max(einv_z.amax()),
            dual_scale: px.amax().max(cty.amax()).max(q.amax()),
        }
    }
}

fn tolerance(settings: &SolverSettings, scale: f64) -> f64 {
    settings.eps_abs + settings.eps_rel * scale
}

pub(crate) fn run(qp: &QpProblem<'_>, settings: &SolverSettings, warm_start: Option<&SolverSolution>) -> Result<SolverSolution> {
    let n = qp.variable_count();
    let st = Stacked::new(qp);
    let rows = st.rows();
    let sc = equilibrate(qp, &st, settings.scaling_iterations);
    let mut rho_base = settings.rho;
    let mut rho = rho_vector(&st, rho_base);
    let mut kkt = factor_kkt(&sc, settings.sigma, &rho)?;

    let (mut x, mut z, mut y) = match warm_start {
        Some(w) if w.primal.len() == n && w.slack.len() == rows && w.dual_rows.len() == rows => (
            w.primal.component_div(&sc.d),
            w.slack.component_mul(&sc.e),
            w.dual_rows.component_div(&sc.e) * sc.cost,
        ),
        _ => (DVector::zeros(n), DVector::zeros(rows), DVector::zeros(rows)),
    };
    let alpha = settings.alpha;
    let sigma = settings.sigma;
    let mut rhs = DVector::zeros(n + rows);
    let mut polish_gate = 1e-3;
    let mut best: Option<(Unscaled, Residuals)> = None;
    let mut status = SolverStatus::MaxIter;
    let mut polished: Option<Polished> = None;
    let mut iterations = 0;

    for k in 1..=settings.max_iter {
        iterations = k;
        let y_prev = y.clone();
        for i in 0..n {
            rhs[i] = sigma * x[i] - sc.q[i];
        }
        for r in 0..rows {
            rhs[n + r] = z[r] - y[r] / rho[r];
        }
        let sol = kkt.solve_unrefined(&rhs);
        let x_tilde = sol.rows(0, n).into_owned();
        let mut z_relaxed = DVector::zeros(rows);
        for r in 0..rows {
            let z_tilde = z[r] + (sol[n + r] - y[r]) / rho[r];
            z_relaxed[r] = alpha * z_tilde + (1.0 - alpha) * z[r];
        }
        x = &x_tilde * alpha + &x * (1.0 - alpha);
        let mut z_new = DVector::from_fn(rows, |r, _| z_relaxed[r] + y[r] / rho[r]);
        sc.project(&st, &mut z_new);
        for r in 0..rows {
            y[r] += rho[r] * (z_relaxed[r] - z_new[r]);
        }
        z = z_new;

        let check = k == 1 || k % settings.check_interval == 0 || k == settings.max_iter;
        if !check {
            continue;
        }
        let res = sc.residuals(&x, &z, &y);
        let tol_p = tolerance(settings, res.prim_scale);
        let tol_d = tolerance(settings, res.dual_scale);
        let converged = res.prim <= tol_p && res.dual <= tol_d;

        if !converged && infeasible(&sc, &st, &(&y - &y_prev), settings.eps_infeasible) {
            status = SolverStatus::Infeasible;
            best = Some((sc.unscale(&x, &z, &y), res));
            break;
        }

        let gate_p = polish_gate * (1.0 + res.prim_scale);
        let gate_d = polish_gate * (1.0 + res.dual_scale);
        let try_polish = settings.polish && (converged || (res.prim <= gate_p && res.dual <= gate_d) || k == settings.max_iter);
        if try_polish {
            let u = sc.unscale(&x, &z, &y);
            match polish(qp, &st, &u.z, &u.y, settings) {
                Some(p) => {
                    polished = Some(p);
                    status = SolverStatus::Optimal;
                    best = Some((u, res));
                    break;
                }
                None => polish_gate = (polish_gate * 0.1).max(settings.eps_abs.max(1e-12)),
            }
        }
        if converged {
            status = SolverStatus::Optimal;
            best = Some((sc.unscale(&x, &z, &y), res));
            break;
        }

        if settings.adaptive_rho && k % ADAPT_INTERVAL == 0 {
            let ratio_p = res.prim / (res.prim_scale + 1e-30);
            let ratio_d = res.dual / (res.dual_scale + 1e-30);
            let proposal = (rho_base * (ratio_p / ratio_d.max(1e-30)).sqrt()).clamp(RHO_MIN, RHO_MAX);
            if proposal > rho_base * ADAPT_TOLERANCE || proposal < rho_base / ADAPT_TOLERANCE {
                rho_base = proposal;
                rho = rho_vector(&st, rho_base);
                kkt = factor_kkt(&sc, sigma, &rho)?;
            }
        }
        if k == settings.max_iter {
            best = Some((sc.unscale(&x, &z, &y), res));
        }
    }
    let (u, res) = best.unwrap_or_else(|| {
        let r = sc.residuals(&x, &z, &y);
        (sc.unscale(&x, &z, &y), r)
    });
    Ok(assemble(qp, &st, u, res, status, iterations, polished))
}

/// Primal-infeasibility certificate on the dual increment (scaled `δy`).
fn infeasible(sc: &Scaled, st: &Stacked, dy: &DVector<f64>, eps: f64) -> bool {
    let dy = dy.component_mul(&sc.e) / sc.cost;
    let norm = dy.amax();
    if norm <= 1e-30 {
        return false;
    }
    let cty = st.c.tr_mul_vec(&dy);
    cty.amax() <= eps * norm && st.support(&dy) < -eps * norm
}

fn assemble(
    qp: &QpProblem<'_>,
    st: &Stacked,
    u: Unscaled,
    res: Residuals,
    status: SolverStatus,
    iterations: usize,
    polished: Option<Polished>,
) -> SolverSolution {
    let n = qp.variable_count();
    if let Some(p) = polished {
        let objective = qp.objective(&p.x);
        return SolverSolution {
            objective,
            primal: p.x,
            duals_equality: p.y_eq,
            duals_box: p.y_box,
            duals_ball: p.mu,
            status,
            iterations,
            residuals: (p.prim, p.dual),
            polished: true,
            slack: p.slack,
            dual_rows: p.y_rows,
        };
    }
    let mut duals_box = DVector::zeros(n);
    for (r, &v) in st.box_vars.iter().enumerate() {
        duals_box[v] = u.y[st.n_eq + r];
    }
    let mu = if st.n_ball > 0 {
        u.y.rows(st.n_eq + st.n_box, st.n_ball).norm() / (2.0 * st.ball_radius)
    } else {
        0.0
    };
    SolverSolution {
        objective: qp.objective(&u.x),
        duals_equality: u.y.rows(0, st.n_eq).into_owned(),
        primal: u.x,
        duals_box,
        duals_ball: mu,
        status,
        iterations,
        residuals: (res.prim, res.dual),
        polished: false,
        slack: u.z,
        dual_rows: u.y,
    }
}
