//! Diffusion-sorption `u_t = D / R(u) u_xx` on `(0, 1)` with
//! `R(u) = 1 + 2.16 u^(-0.126)`, `u(t, 0) = 1` and the outflow condition
//! `u + D u_x = 0` at `x = 1`.
//!
//! Cell-centred grid, implicit diffusion with `R` evaluated at the previous
//! step (tridiagonal solve per step). Boundaries use ghost cells.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{SolverConfig, Trajectory};
use crate::error::{Error, Result};

/// Lower clamp of `u` inside `R(u)`.
pub const RETARDATION_FLOOR: f64 = 1e-6;

pub fn retardation(u: f64) -> f64 {
    1.0 + 2.16 * u.max(RETARDATION_FLOOR).powf(-0.126)
}

/// I.i.d. `U(0, 0.2)` cell values (zero itself is never returned).
pub fn gen_diffsorp_ic(seed: u64, n: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| loop {
            let v = rng.random_range(0.0..0.2);
            if v > 0.0 {
                break v;
            }
        })
        .collect()
}

/// Thomas algorithm for `a_i x_{i-1} + b_i x_i + c_i x_{i+1} = d_i`.
fn thomas(a: &[f64], b: &[f64], c: &[f64], d: &mut [f64], scratch: &mut [f64]) {
    let n = b.len();
    scratch[0] = c[0] / b[0];
    d[0] /= b[0];
    for i in 1..n {
        let m = b[i] - a[i] * scratch[i - 1];
        scratch[i] = c[i] / m;
        d[i] = (d[i] - a[i] * d[i - 1]) / m;
    }
    for i in (0..n - 1).rev() {
        d[i] -= scratch[i] * d[i + 1];
    }
}

/// Solves on the fine grid `u0` and block-averages by `fine_factor`.
pub fn solve_diffsorp(u0: &[f64], cfg: &SolverConfig) -> Result<Trajectory> {
    let n = u0.len();
    let factor = cfg.fine_factor.max(1);
    if n < 3 || n % factor != 0 || cfg.nt < 2 {
        return Err(Error::Config(format!(
            "diffsorp needs >= 3 cells divisible by {factor} and 2 snapshots, got {n} and {}",
            cfg.nt
        )));
    }
    if let Some(v) = u0.iter().find(|v| !(**v > 0.0)) {
        return Err(Error::Solver(format!("initial value {v} is not positive")));
    }
    let dx = 1.0 / n as f64;
    let d_coef = cfg.diffusion;
    let tau = cfg.t_final / (cfg.nt - 1) as f64;
    let steps = cfg.substeps.max(1);
    let dt = tau / steps as f64;
    // ghost value at the right boundary: u_N = r u_{N-1}
    let ratio = d_coef / dx;
    let r = (ratio - 0.5) / (ratio + 0.5);
    let coarse = |u: &[f64]| u.chunks(factor).map(|c| c.iter().sum::<f64>() / factor as f64).collect::<Vec<f64>>();

    let mut u = u0.to_vec();
    let mut data = coarse(&u);
    let (mut a, mut b, mut c) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    let mut scratch = vec![0.0; n];
    for _ in 1..cfg.nt {
        for _ in 0..steps {
            for i in 0..n {
                let lam = dt * d_coef / (retardation(u[i]) * dx * dx);
                a[i] = -lam;
                c[i] = -lam;
                b[i] = 1.0 + 2.0 * lam;
                if i == 0 {
                    // ghost u_{-1} = 2 - u_0
                    a[i] = 0.0;
                    b[i] += lam;
                    u[i] += 2.0 * lam;
                }
                if i == n - 1 {
                    c[i] = 0.0;
                    b[i] -= lam * r;
                }
            }
            thomas(&a, &b, &c, &mut u, &mut scratch);
            if let Some(v) = u.iter().find(|v| !(**v > 0.0)) {
                return Err(Error::Solver(format!("diffsorp produced nonpositive value {v}")));
            }
        }
        data.extend(coarse(&u));
    }
    Ok(Trajectory { shape: vec![cfg.nt, 1, n / factor], data, tau })
}
