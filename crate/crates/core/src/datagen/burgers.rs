//! Viscous Burgers' equation `u_t + (u^2/2)_x = (nu/pi) u_xx` on the periodic
//! unit interval.
//!
//! Finite volumes with MUSCL (minmod) reconstruction, the Godunov flux for
//! `u^2/2`, central differences for diffusion and SSP-RK2 in time. Cell `i`
//! of `n` sits at `x = i/n`.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{SolverConfig, Trajectory};
use crate::error::{Error, Result};

/// Courant numbers above this are rejected for user-fixed time steps.
pub const MAX_COURANT: f64 = 0.5;

/// One sinusoid of the initial condition.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Wave {
    pub amplitude: f64,
    pub wavenumber: u32,
    pub phase: f64,
}

pub fn draw_waves(rng: &mut impl Rng, n_waves: usize) -> Vec<Wave> {
    (0..n_waves)
        .map(|_| Wave {
            amplitude: rng.random_range(-0.5..0.5),
            wavenumber: rng.random_range(1..=8),
            phase: rng.random_range(0.0..2.0 * PI),
        })
        .collect()
}

pub fn eval_waves(waves: &[Wave], n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| {
            let x = i as f64 / n as f64;
            waves.iter().map(|w| w.amplitude * (2.0 * PI * w.wavenumber as f64 * x + w.phase).sin()).sum()
        })
        .collect()
}

/// `sum_w A_w sin(2 pi k_w x + phi_w)` on `n` periodic points, with
/// `A ~ U(-0.5, 0.5)`, `k ~ U{1..8}`, `phi ~ U(0, 2 pi)`.
pub fn gen_burgers_ic(seed: u64, n_waves: usize, n: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    eval_waves(&draw_waves(&mut rng, n_waves.max(1)), n)
}

fn minmod(a: f64, b: f64) -> f64 {
    if a * b <= 0.0 {
        0.0
    } else if a.abs() < b.abs() {
        a
    } else {
        b
    }
}

fn godunov(ul: f64, ur: f64) -> f64 {
    let f = |u: f64| 0.5 * u * u;
    if ul <= ur {
        if ul > 0.0 {
            f(ul)
        } else if ur < 0.0 {
            f(ur)
        } else {
            0.0
        }
    } else {
        f(ul).max(f(ur))
    }
}

struct Stepper {
    n: usize,
    dx: f64,
    eps: f64,
    slope: Vec<f64>,
    flux: Vec<f64>,
}

impl Stepper {
    fn rhs(&mut self, u: &[f64], out: &mut [f64]) {
        let n = self.n;
        for i in 0..n {
            let l = u[(i + n - 1) % n];
            let r = u[(i + 1) % n];
            self.slope[i] = minmod(u[i] - l, r - u[i]);
        }
        // flux[i] is the flux through the face between cells i and i+1
        for i in 0..n {
            let j = (i + 1) % n;
            let ul = u[i] + 0.5 * self.slope[i];
            let ur = u[j] - 0.5 * self.slope[j];
            self.flux[i] = godunov(ul, ur) - self.eps * (u[j] - u[i]) / self.dx;
        }
        for i in 0..n {
            out[i] = -(self.flux[i] - self.flux[(i + n - 1) % n]) / self.dx;
        }
    }

    fn courant(&self, u: &[f64], dt: f64) -> f64 {
        let umax = u.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        dt * (umax / self.dx + 2.0 * self.eps / (self.dx * self.dx))
    }
}

/// Advances `u0` (on the fine grid) and records `nt` snapshots over
/// `[0, t_final]`, each subsampled by `fine_factor`.
pub fn solve_burgers(u0: &[f64], cfg: &SolverConfig) -> Result<Trajectory> {
    let n = u0.len();
    if n < 4 || cfg.nt < 2 {
        return Err(Error::Config(format!("burgers needs at least 4 cells and 2 snapshots, got {n} and {}", cfg.nt)));
    }
    let factor = cfg.fine_factor.max(1);
    if n % factor != 0 {
        return Err(Error::Config(format!("fine grid of {n} cells is not a multiple of {factor}")));
    }
    let mut st = Stepper { n, dx: 1.0 / n as f64, eps: cfg.nu / PI, slope: vec![0.0; n], flux: vec![0.0; n] };
    let tau = cfg.t_final / (cfg.nt - 1) as f64;
    let coarse = |u: &[f64]| u.iter().step_by(factor).copied().collect::<Vec<f64>>();

    let mut u = u0.to_vec();
    let mut data = coarse(&u);
    let (mut k1, mut k2, mut stage) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    for _ in 1..cfg.nt {
        let dt_nominal = match cfg.dt {
            Some(dt) => {
                let c = st.courant(&u, dt);
                if c > MAX_COURANT {
                    return Err(Error::Solver(format!(
                        "time step {dt} gives Courant number {c:.3} above {MAX_COURANT} on {n} cells"
                    )));
                }
                dt
            }
            None => {
                let c1 = st.courant(&u, 1.0);
                cfg.cfl / c1
            }
        };
        let steps = (tau / dt_nominal - 1e-9).ceil().max(1.0) as usize;
        let dt = tau / steps as f64;
        for _ in 0..steps {
            st.rhs(&u, &mut k1);
            for i in 0..n {
                stage[i] = u[i] + dt * k1[i];
            }
            st.rhs(&stage, &mut k2);
            for i in 0..n {
                u[i] = 0.5 * (u[i] + stage[i] + dt * k2[i]);
            }
        }
        if let Some(bad) = u.iter().find(|v| !v.is_finite()) {
            return Err(Error::Solver(format!("burgers produced a non-finite value {bad}")));
        }
        data.extend(coarse(&u));
    }
    Ok(Trajectory { shape: vec![cfg.nt, 1, n / factor], data, tau })
}
