//! Resolution-changing operators and the scale specification used to run a
//! network on a coarser grid than its data.

use serde::{Deserialize, Serialize};

use crate::error::{config_err, dim_err, Result};
use crate::models::Architecture;
use crate::tensor::profile::{record, OpKind};
use crate::tensor::Tensor;

/// Interpolation weights for one output sample.
#[derive(Clone, Copy, Debug)]
struct Tap {
    i0: usize,
    i1: usize,
    w: f64,
}

fn taps(n: usize, m: usize, periodic: bool) -> Vec<Tap> {
    (0..m)
        .map(|j| {
            let x = if periodic {
                j as f64 * n as f64 / m as f64
            } else {
                j as f64 * (n - 1) as f64 / (m - 1) as f64
            };
            let i0 = (x.floor() as usize).min(n - 1);
            let w = x - i0 as f64;
            let i1 = if periodic { (i0 + 1) % n } else { (i0 + 1).min(n - 1) };
            Tap { i0, i1, w }
        })
        .collect()
}

/// Resamples axis `axis` to `m` points. Endpoint-aligned unless `periodic`,
/// in which case sample `j` sits at `j / m` of the period.
fn resize_axis(u: &Tensor, axis: usize, m: usize, periodic: bool) -> Result<Tensor> {
    let shape = u.shape().to_vec();
    let n = shape[axis];
    if m < 2 || n < 2 {
        return Err(config_err!("linear resize needs at least 2 points, got {n} -> {m}"));
    }
    if m == n {
        return Ok(u.clone());
    }
    let outer: usize = shape[..axis].iter().product();
    let inner: usize = shape[axis + 1..].iter().product();
    let taps = taps(n, m, periodic);
    let x = u.data();
    let mut out = vec![0.0; outer * m * inner];
    for o in 0..outer {
        for (j, t) in taps.iter().enumerate() {
            let dst = (o * m + j) * inner;
            let a = (o * n + t.i0) * inner;
            let b = (o * n + t.i1) * inner;
            for k in 0..inner {
                out[dst + k] = (1.0 - t.w) * x[a + k] + t.w * x[b + k];
            }
        }
    }
    let mut out_shape = shape.clone();
    out_shape[axis] = m;
    Ok(Tensor::from_op(out, out_shape, &[u], move |g| {
        let mut gx = vec![0.0; outer * n * inner];
        for o in 0..outer {
            for (j, t) in taps.iter().enumerate() {
                let src = (o * m + j) * inner;
                let a = (o * n + t.i0) * inner;
                let b = (o * n + t.i1) * inner;
                for k in 0..inner {
                    gx[a + k] += (1.0 - t.w) * g[src + k];
                    gx[b + k] += t.w * g[src + k];
                }
            }
        }
        vec![Some(gx)]
    }))
}

/// Linear interpolation of the last axis to `target` points.
pub fn resize_linear(u: &Tensor, target: usize, periodic: bool) -> Result<Tensor> {
    let axis = u.rank().checked_sub(1).ok_or_else(|| dim_err!("resize of a rank-0 tensor"))?;
    let out = resize_axis(u, axis, target, periodic)?;
    if target != u.shape()[axis] {
        let rows = (u.numel() / u.shape()[axis]) as u64;
        record(OpKind::Resize, "resize_linear", 2 * rows * target as u64, rows * target as u64);
    }
    Ok(out)
}

/// Separable bilinear interpolation of the last two axes to `(h, w)`.
pub fn resize_bilinear(u: &Tensor, target: (usize, usize), periodic: bool) -> Result<Tensor> {
    if u.rank() < 2 {
        return Err(dim_err!("bilinear resize needs rank >= 2, got {:?}", u.shape()));
    }
    let r = u.rank();
    if (u.shape()[r - 2], u.shape()[r - 1]) == target {
        return Ok(u.clone());
    }
    let rows = (u.numel() / (u.shape()[r - 2] * u.shape()[r - 1])) as u64;
    let tmp = resize_axis(u, r - 2, target.0, periodic)?;
    let out = resize_axis(&tmp, r - 1, target.1, periodic)?;
    let points = rows * (target.0 * target.1) as u64;
    record(OpKind::Resize, "resize_bilinear", 6 * points, points);
    Ok(out)
}

/// How a data grid maps onto the network grid.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScaleSpec {
    pub factor: f64,
    pub input_size: usize,
    pub network_size: usize,
    /// Wrap-around interpolation for periodic data.
    pub periodic: bool,
}

impl ScaleSpec {
    pub fn identity(size: usize) -> ScaleSpec {
        ScaleSpec { factor: 1.0, input_size: size, network_size: size, periodic: false }
    }

    /// Snaps `round(factor * input_size)` to the nearest size the
    /// architecture supports, ties going down.
    pub fn new(factor: f64, input_size: usize, arch: Architecture, periodic: bool) -> Result<ScaleSpec> {
        if !(factor > 0.0 && factor <= 1.0) {
            return Err(config_err!("scale factor must lie in (0, 1], got {factor}"));
        }
        if factor == 1.0 {
            return Ok(ScaleSpec { periodic, ..ScaleSpec::identity(input_size) });
        }
        let wanted = (factor * input_size as f64).round().max(1.0) as usize;
        let network_size = snap_size(wanted, arch);
        if network_size < 2 || network_size > input_size {
            return Err(config_err!(
                "factor {factor} on {input_size} points snaps to unsupported size {network_size}"
            ));
        }
        Ok(ScaleSpec { factor, input_size, network_size, periodic })
    }

    pub fn is_identity(&self) -> bool {
        self.input_size == self.network_size
    }

    /// Data grid to network grid.
    pub fn downsample(&self, u: &Tensor) -> Result<Tensor> {
        self.resample(u, self.input_size, self.network_size)
    }

    /// Network grid back to data grid.
    pub fn upsample(&self, u: &Tensor) -> Result<Tensor> {
        self.resample(u, self.network_size, self.input_size)
    }

    fn resample(&self, u: &Tensor, from: usize, to: usize) -> Result<Tensor> {
        let n = *u.shape().last().ok_or_else(|| dim_err!("resample of a rank-0 tensor"))?;
        if n != from {
            return Err(dim_err!("expected last axis of {from} points, got {n}"));
        }
        resize_linear(u, to, self.periodic)
    }
}

/// Nearest supported grid size: powers of two for FNO, multiples of 8 for
/// the UNet. Ties go to the smaller size.
pub fn snap_size(n: usize, arch: Architecture) -> usize {
    let candidates: Vec<usize> = match arch {
        Architecture::Fno1d => (1..usize::BITS - 1).map(|k| 1usize << k).take_while(|&p| p <= 2 * n.max(2)).collect(),
        Architecture::Unet1d => {
            let step = arch.size_multiple();
            (1..=n / step + 1).map(|k| k * step).collect()
        }
    };
    candidates
        .into_iter()
        .min_by_key(|&c| (c.abs_diff(n), c))
        .expect("candidate list is never empty")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(v: &[f64]) -> Tensor {
        Tensor::new(v.to_vec(), &[v.len()]).unwrap()
    }

    #[test]
    fn endpoints_align() {
        assert_eq!(resize_linear(&t(&[0.0, 1.0]), 3, false).unwrap().to_vec(), vec![0.0, 0.5, 1.0]);
    }

    #[test]
    fn constant_stays_constant() {
        let u = t(&[2.5; 7]);
        for m in [2, 5, 13] {
            for p in [false, true] {
                assert!(resize_linear(&u, m, p).unwrap().data().iter().all(|v| (v - 2.5).abs() < 1e-14));
            }
        }
    }

    #[test]
    fn same_size_is_identity() {
        let u = t(&[1.0, -3.0, 4.0]);
        assert_eq!(resize_linear(&u, 3, false).unwrap().to_vec(), u.to_vec());
    }

    #[test]
    fn target_below_two_is_rejected() {
        assert!(resize_linear(&t(&[1.0, 2.0, 3.0]), 1, false).is_err());
    }

    #[test]
    fn periodic_wraps_last_interval() {
        let u = t(&[0.0, 1.0]);
        // positions 0, 0.5, 1.0, 1.5 in sample units; the last interpolates back to u[0]
        assert_eq!(resize_linear(&u, 4, true).unwrap().to_vec(), vec![0.0, 0.5, 1.0, 0.5]);
    }

    #[test]
    fn bilinear_reproduces_bilinear_functions() {
        let (h, w) = (5, 4);
        let f = |y: f64, x: f64| 1.0 + 2.0 * x - 3.0 * y + 0.5 * x * y;
        let data = (0..h)
            .flat_map(|i| (0..w).map(move |j| f(i as f64 / (h - 1) as f64, j as f64 / (w - 1) as f64)))
            .collect();
        let u = Tensor::new(data, &[h, w]).unwrap();
        let (h2, w2) = (9, 7);
        let v = resize_bilinear(&u, (h2, w2), false).unwrap();
        for i in 0..h2 {
            for j in 0..w2 {
                let want = f(i as f64 / (h2 - 1) as f64, j as f64 / (w2 - 1) as f64);
                assert!((v.data()[i * w2 + j] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn snapping() {
        assert_eq!(snap_size(90, Architecture::Fno1d), 64);
        assert_eq!(snap_size(96, Architecture::Fno1d), 64);
        assert_eq!(snap_size(26, Architecture::Fno1d), 32);
        assert_eq!(snap_size(12, Architecture::Unet1d), 8);
        assert_eq!(snap_size(13, Architecture::Unet1d), 16);
        let s = ScaleSpec::new(0.5, 128, Architecture::Fno1d, true).unwrap();
        assert_eq!(s.network_size, 64);
        assert!(ScaleSpec::new(1.0, 100, Architecture::Fno1d, false).unwrap().is_identity());
        assert!(ScaleSpec::new(1.5, 64, Architecture::Fno1d, false).is_err());
    }
}
