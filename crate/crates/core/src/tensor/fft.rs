//! Iterative radix-2 FFT on split real/imaginary buffers.
//!
//! Only power-of-two lengths are supported. Real transforms use the
//! `n/2 + 1`-bin half spectrum; the inverse ignores the imaginary parts of the
//! DC and Nyquist bins and zero-fills bins that are not supplied.

use std::cell::RefCell;
use std::collections::HashMap;
use std::f64::consts::PI;
use std::rc::Rc;

struct Plan {
    n: usize,
    rev: Vec<usize>,
    cos: Vec<f64>,
    sin: Vec<f64>,
}

impl Plan {
    fn new(n: usize) -> Plan {
        let bits = n.trailing_zeros();
        let rev = (0..n)
            .map(|i| if n == 1 { 0 } else { i.reverse_bits() >> (usize::BITS - bits) })
            .collect();
        let (cos, sin) = (0..n / 2)
            .map(|k| {
                let a = 2.0 * PI * k as f64 / n as f64;
                (a.cos(), a.sin())
            })
            .unzip();
        Plan { n, rev, cos, sin }
    }
}

thread_local! {
    static PLANS: RefCell<HashMap<usize, Rc<Plan>>> = RefCell::new(HashMap::new());
}

fn plan(n: usize) -> Rc<Plan> {
    PLANS.with(|p| p.borrow_mut().entry(n).or_insert_with(|| Rc::new(Plan::new(n))).clone())
}

pub fn is_power_of_two(n: usize) -> bool {
    n >= 1 && n.is_power_of_two()
}

/// In-place unnormalized DFT. `inverse` flips the exponent sign.
pub fn complex_fft(re: &mut [f64], im: &mut [f64], inverse: bool) {
    let n = re.len();
    assert_eq!(n, im.len());
    assert!(is_power_of_two(n), "fft length {n} is not a power of two");
    if n == 1 {
        return;
    }
    let plan = plan(n);
    debug_assert_eq!(plan.n, n);
    for i in 0..n {
        let j = plan.rev[i];
        if i < j {
            re.swap(i, j);
            im.swap(i, j);
        }
    }
    let sign = if inverse { 1.0 } else { -1.0 };
    let mut len = 2;
    while len <= n {
        let half = len / 2;
        let stride = n / len;
        for start in (0..n).step_by(len) {
            for k in 0..half {
                let wr = plan.cos[k * stride];
                let wi = sign * plan.sin[k * stride];
                let a = start + k;
                let b = a + half;
                let tr = re[b] * wr - im[b] * wi;
                let ti = re[b] * wi + im[b] * wr;
                re[b] = re[a] - tr;
                im[b] = im[a] - ti;
                re[a] += tr;
                im[a] += ti;
            }
        }
        len *= 2;
    }
}

/// Half spectrum `X_k = sum_t x_t exp(-2 pi i k t / n)` for `k = 0..=n/2`.
pub fn rfft(x: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let n = x.len();
    let mut re = x.to_vec();
    let mut im = vec![0.0; n];
    complex_fft(&mut re, &mut im, false);
    let m = n / 2 + 1;
    re.truncate(m);
    im.truncate(m);
    (re, im)
}

/// Real signal of length `n` whose half spectrum is `(re, im)`, zero-filled
/// beyond the supplied bins.
pub fn irfft(re: &[f64], im: &[f64], n: usize) -> Vec<f64> {
    let m = re.len();
    assert!(m <= n / 2 + 1 && m == im.len());
    let mut fr = vec![0.0; n];
    let mut fi = vec![0.0; n];
    for k in 0..m {
        let edge = k == 0 || 2 * k == n;
        fr[k] = re[k];
        fi[k] = if edge { 0.0 } else { im[k] };
        if !edge {
            fr[n - k] = re[k];
            fi[n - k] = -im[k];
        }
    }
    complex_fft(&mut fr, &mut fi, true);
    let scale = 1.0 / n as f64;
    fr.iter_mut().for_each(|v| *v *= scale);
    fr
}

/// Adjoint of [`rfft`] restricted to the first `gre.len()` bins.
pub fn rfft_adjoint(gre: &[f64], gim: &[f64], n: usize) -> Vec<f64> {
    let mut zr = vec![0.0; n];
    let mut zi = vec![0.0; n];
    zr[..gre.len()].copy_from_slice(gre);
    zi[..gim.len()].copy_from_slice(gim);
    complex_fft(&mut zr, &mut zi, true);
    zr
}

/// Adjoint of [`irfft`] for `m` supplied bins.
pub fn irfft_adjoint(g: &[f64], m: usize) -> (Vec<f64>, Vec<f64>) {
    let n = g.len();
    let (mut re, mut im) = rfft(g);
    re.truncate(m);
    im.truncate(m);
    let inv_n = 1.0 / n as f64;
    for k in 0..m {
        let edge = k == 0 || 2 * k == n;
        let c = if edge { inv_n } else { 2.0 * inv_n };
        re[k] *= c;
        im[k] = if edge { 0.0 } else { im[k] * c };
    }
    (re, im)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_dft(x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let n = x.len();
        (0..=n / 2)
            .map(|k| {
                x.iter().enumerate().fold((0.0, 0.0), |(r, i), (t, &v)| {
                    let a = -2.0 * PI * (k * t) as f64 / n as f64;
                    (r + v * a.cos(), i + v * a.sin())
                })
            })
            .unzip()
    }

    #[test]
    fn matches_naive_dft() {
        let x: Vec<f64> = (0..16).map(|i| ((i * 7 + 3) % 11) as f64 - 4.0).collect();
        let (r, i) = rfft(&x);
        let (nr, ni) = naive_dft(&x);
        for k in 0..r.len() {
            assert!((r[k] - nr[k]).abs() < 1e-10 && (i[k] - ni[k]).abs() < 1e-10);
        }
    }

    #[test]
    fn length_one_and_two() {
        assert_eq!(rfft(&[3.0]).0, vec![3.0]);
        let (r, i) = rfft(&[1.0, 2.0]);
        assert_eq!(r, vec![3.0, -1.0]);
        assert_eq!(i, vec![0.0, 0.0]);
        assert_eq!(irfft(&r, &i, 2), vec![1.0, 2.0]);
    }

    #[test]
    fn adjoints_satisfy_inner_product_identity() {
        let n = 16;
        let x: Vec<f64> = (0..n).map(|i| (i as f64 * 0.37).sin() + 0.1 * i as f64).collect();
        let m = 5;
        let gr: Vec<f64> = (0..m).map(|k| (k as f64 * 1.3).cos()).collect();
        let gi: Vec<f64> = (0..m).map(|k| (k as f64 * 0.7).sin() - 0.2).collect();
        // <rfft(x)[..m], g> == <x, rfft_adjoint(g)>
        let (xr, xi) = rfft(&x);
        let lhs: f64 = (0..m).map(|k| xr[k] * gr[k] + xi[k] * gi[k]).sum();
        let adj = rfft_adjoint(&gr, &gi, n);
        let rhs: f64 = x.iter().zip(&adj).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10, "{lhs} vs {rhs}");
        // <irfft(g), x> == <g, irfft_adjoint(x)>
        let y = irfft(&gr, &gi, n);
        let lhs: f64 = y.iter().zip(&x).map(|(a, b)| a * b).sum();
        let (ar, ai) = irfft_adjoint(&x, m);
        let rhs: f64 = (0..m).map(|k| gr[k] * ar[k] + gi[k] * ai[k]).sum();
        assert!((lhs - rhs).abs() < 1e-10, "{lhs} vs {rhs}");
    }
}
