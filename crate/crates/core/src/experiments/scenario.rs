use std::f64::consts::{FRAC_PI_4, PI};

use log::debug;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::problem::ObstacleSpec;

pub const OBSTACLE_RADIUS: f64 = 0.4;
pub const OBSTACLE_COUNT: usize = 2;
/// Obstacle centers must leave both endpoints outside the disk by this factor of `ε`.
const ENDPOINT_CLEARANCE: f64 = 1.5;
const MAX_RETRIES: usize = 100;

/// One randomized Dubins instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub seed: u64,
    pub x0: [f64; 3],
    pub xf: [f64; 3],
    pub obstacles: Vec<ObstacleSpec>,
    pub tf_guess: f64,
}

impl Scenario {
    pub fn target(&self) -> [f64; 2] {
        [self.xf[0], self.xf[1]]
    }

    pub fn distance(&self) -> f64 {
        (self.xf[0] - self.x0[0]).hypot(self.xf[1] - self.x0[1])
    }
}

fn uniform(rng: &mut ChaCha8Rng, a: f64, b: f64) -> f64 {
    a + (b - a) * rng.random::<f64>()
}

/// Band `[min(a,b) + 8ε, max(a,b) − 8ε]` with reversed endpoints reordered.
/// The endpoint separation never exceeds `16ε` in both coordinates, so the
/// band as written is always empty in at least one of them.
fn band(a: f64, b: f64, eps: f64) -> (f64, f64) {
    let lo = a.min(b) + 8.0 * eps;
    let hi = a.max(b) - 8.0 * eps;
    (lo.min(hi), lo.max(hi))
}

/// Deterministic scenario for `seed`.
pub fn sample_scenario(seed: u64) -> Result<Scenario> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rx0 = uniform(&mut rng, -1.0, 1.0);
    let ry0 = uniform(&mut rng, -1.0, 1.0);
    let th0 = uniform(&mut rng, -PI, PI);
    let th_xy = uniform(&mut rng, th0 - FRAC_PI_4, th0 + FRAC_PI_4);
    let thf = uniform(&mut rng, th0 - FRAC_PI_4, th0 + FRAC_PI_4);
    let dist = 4.0 + uniform(&mut rng, 0.0, 3.0);
    let rxf = rx0 + dist * th_xy.cos();
    let ryf = ry0 + dist * th_xy.sin();
    let eps = OBSTACLE_RADIUS;
    let (x_lo, x_hi) = band(rx0, rxf, eps);
    let (y_lo, y_hi) = band(ry0, ryf, eps);
    let clear = ENDPOINT_CLEARANCE * eps;
    let mut obstacles = Vec::with_capacity(OBSTACLE_COUNT);
    for _ in 0..OBSTACLE_COUNT {
        let mut placed = None;
        for attempt in 0..MAX_RETRIES {
            let c = [uniform(&mut rng, x_lo, x_hi), uniform(&mut rng, y_lo, y_hi)];
            let d0 = (c[0] - rx0).hypot(c[1] - ry0);
            let d1 = (c[0] - rxf).hypot(c[1] - ryf);
            if d0 > clear && d1 > clear {
                placed = Some(c);
                break;
            }
            debug!("seed {seed}: obstacle candidate {attempt} too close to an endpoint");
        }
        let c = placed.ok_or_else(|| Error::Degenerate(format!("seed {seed}: no admissible obstacle placement")))?;
        obstacles.push(ObstacleSpec::new(c, eps)?);
    }
    let tf_guess = uniform(&mut rng, 4.0, 6.0);
    Ok(Scenario {
        seed,
        x0: [rx0, ry0, th0],
        xf: [rxf, ryf, thf],
        obstacles,
        tf_guess,
    })
}

/// Per-scenario seeds spawned from a master seed by counter.
pub fn scenario_seeds(master: u64, n: usize) -> Vec<u64> {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    (0..n).map(|_| rng.random::<u64>()).collect()
}
