//! Classical fixed-step fourth-order Runge–Kutta integration.

use nalgebra::DVector;

use crate::error::{Error, Result};

pub fn rk4_step<F>(f: &F, t: f64, y: &DVector<f64>, h: f64) -> DVector<f64>
where
    F: Fn(f64, &DVector<f64>) -> DVector<f64>,
{
    let k1 = f(t, y);
    let k2 = f(t + 0.5 * h, &(y + &k1 * (0.5 * h)));
    let k3 = f(t + 0.5 * h, &(y + &k2 * (0.5 * h)));
    let k4 = f(t + h, &(y + &k3 * h));
    y + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0)
}

/// Integrate from `t0` to `t1` in `steps` equal steps and return the
/// `steps + 1` samples. `guard` sees every accepted sample and may abort.
pub fn rk4_path<F, G>(f: F, t0: f64, t1: f64, y0: &DVector<f64>, steps: usize, mut guard: G) -> Result<Vec<DVector<f64>>>
where
    F: Fn(f64, &DVector<f64>) -> DVector<f64>,
    G: FnMut(f64, &DVector<f64>) -> Result<()>,
{
    if steps == 0 {
        return Err(Error::Config("integration needs at least one step".into()));
    }
    let h = (t1 - t0) / steps as f64;
    let mut out = Vec::with_capacity(steps + 1);
    let mut y = y0.clone();
    guard(t0, &y)?;
    out.push(y.clone());
    for k in 0..steps {
        let t = t0 + k as f64 * h;
        y = rk4_step(&f, t, &y, h);
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence {
                at: t + h,
                norm: f64::INFINITY,
                bound: f64::INFINITY,
            });
        }
        guard(t + h, &y)?;
        out.push(y.clone());
    }
    Ok(out)
}
