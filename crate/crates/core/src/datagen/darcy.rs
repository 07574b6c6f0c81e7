//! Steady Darcy flow `-div(a grad u) = f` on the unit square with `u = 0` on
//! the boundary.
//!
//! Nodes `x_i = i / (N - 1)` include the boundary. Five-point stencil with
//! harmonic-mean face coefficients; the interior system is solved by
//! conjugate gradients.

use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

pub const HIGH_PERMEABILITY: f64 = 12.0;
pub const LOW_PERMEABILITY: f64 = 3.0;
/// Highest wavenumber per axis in the random field.
const MAX_WAVENUMBER: i32 = 16;

fn harmonic(a: f64, b: f64) -> f64 {
    2.0 * a * b / (a + b)
}

/// Two-phase field: a Gaussian random field with spectral density
/// `(4 pi^2 |k|^2 + 9)^-2`, thresholded at its median to `12` (above) and
/// `3` (below).
pub fn gen_darcy_coefficient(seed: u64, n: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut g = vec![0.0; n * n];
    let coords: Vec<f64> = (0..n).map(|i| i as f64 / (n - 1).max(1) as f64).collect();
    for k1 in 0..=MAX_WAVENUMBER {
        for k2 in -MAX_WAVENUMBER..=MAX_WAVENUMBER {
            if k1 == 0 && k2 <= 0 {
                continue;
            }
            let kk = (k1 * k1 + k2 * k2) as f64;
            let amp = 1.0 / (4.0 * PI * PI * kk + 9.0);
            let a: f64 = StandardNormal.sample(&mut rng);
            let b: f64 = StandardNormal.sample(&mut rng);
            let (ca, cb) = (amp * a, amp * b);
            let cx: Vec<(f64, f64)> = coords.iter().map(|x| (2.0 * PI * k1 as f64 * x).sin_cos()).collect();
            let cy: Vec<(f64, f64)> = coords.iter().map(|y| (2.0 * PI * k2 as f64 * y).sin_cos()).collect();
            for i in 0..n {
                let (sx, cxv) = cx[i];
                for j in 0..n {
                    let (sy, cyv) = cy[j];
                    // cos/sin of 2 pi (k1 x + k2 y)
                    let c = cxv * cyv - sx * sy;
                    let s = sx * cyv + cxv * sy;
                    g[i * n + j] += ca * c + cb * s;
                }
            }
        }
    }
    let mut sorted = g.clone();
    sorted.sort_by(f64::total_cmp);
    let median = sorted[sorted.len() / 2];
    g.iter().map(|&v| if v >= median { HIGH_PERMEABILITY } else { LOW_PERMEABILITY }).collect()
}

/// Interior operator `(A u)_ij = sum_faces a_f (u_ij - u_nb) / h^2`.
struct Operator {
    n: usize,
    h2: f64,
    // face coefficients: east[i*n+j] between (i,j),(i+1,j); north between (i,j),(i,j+1)
    east: Vec<f64>,
    north: Vec<f64>,
}

impl Operator {
    fn new(a: &[f64], n: usize) -> Operator {
        let mut east = vec![0.0; n * n];
        let mut north = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                if i + 1 < n {
                    east[i * n + j] = harmonic(a[i * n + j], a[(i + 1) * n + j]);
                }
                if j + 1 < n {
                    north[i * n + j] = harmonic(a[i * n + j], a[i * n + j + 1]);
                }
            }
        }
        let h = 1.0 / (n - 1) as f64;
        Operator { n, h2: h * h, east, north }
    }

    /// Applies the operator to a full-grid vector whose boundary entries are zero.
    fn apply(&self, u: &[f64], out: &mut [f64]) {
        let n = self.n;
        for i in 1..n - 1 {
            for j in 1..n - 1 {
                let k = i * n + j;
                let (ae, aw) = (self.east[k], self.east[k - n]);
                let (an, as_) = (self.north[k], self.north[k - 1]);
                out[k] = (ae * (u[k] - u[k + n]) + aw * (u[k] - u[k - n]) + an * (u[k] - u[k + 1]) + as_ * (u[k] - u[k - 1]))
                    / self.h2;
            }
        }
    }

    fn interior(&self) -> impl Iterator<Item = usize> + '_ {
        let n = self.n;
        (1..n - 1).flat_map(move |i| (1..n - 1).map(move |j| i * n + j))
    }
}

/// Solution on the same `N x N` nodes as `a`, for unit forcing.
pub fn solve_darcy(a: &[f64], n: usize, tol: f64, max_iter: usize) -> Result<Vec<f64>> {
    if n < 3 || a.len() != n * n {
        return Err(Error::Config(format!("darcy grid {n} with {} coefficients", a.len())));
    }
    if let Some(v) = a.iter().find(|v| !(**v > 0.0)) {
        return Err(Error::Solver(format!("coefficient {v} is not positive")));
    }
    let op = Operator::new(a, n);
    let idx: Vec<usize> = op.interior().collect();
    let mut u = vec![0.0; n * n];
    let mut r = vec![0.0; n * n];
    for &k in &idx {
        r[k] = 1.0;
    }
    let mut p = r.clone();
    let mut ap = vec![0.0; n * n];
    let dot = |x: &[f64], y: &[f64]| idx.iter().map(|&k| x[k] * y[k]).sum::<f64>();
    let b_norm = dot(&r, &r).sqrt();
    let mut rr = dot(&r, &r);
    for _ in 0..max_iter {
        if rr.sqrt() <= tol * b_norm {
            return Ok(u);
        }
        op.apply(&p, &mut ap);
        let alpha = rr / dot(&p, &ap);
        for &k in &idx {
            u[k] += alpha * p[k];
            r[k] -= alpha * ap[k];
        }
        let rr_new = dot(&r, &r);
        let beta = rr_new / rr;
        for &k in &idx {
            p[k] = r[k] + beta * p[k];
        }
        rr = rr_new;
    }
    if rr.sqrt() <= tol * b_norm {
        return Ok(u);
    }
    Err(Error::Solver(format!(
        "conjugate gradients stopped after {max_iter} iterations at relative residual {:.3e}",
        rr.sqrt() / b_norm
    )))
}

/// `sum_faces a_f (u_i - u_j)^2`, the discrete energy `u^T A u h^2`.
pub fn darcy_energy(a: &[f64], u: &[f64], n: usize) -> f64 {
    let op = Operator::new(a, n);
    let mut e = 0.0;
    for i in 0..n {
        for j in 0..n {
            let k = i * n + j;
            if i + 1 < n {
                e += op.east[k] * (u[k] - u[k + n]).powi(2);
            }
            if j + 1 < n {
                e += op.north[k] * (u[k] - u[k + 1]).powi(2);
            }
        }
    }
    e
}
