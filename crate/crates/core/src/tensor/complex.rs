use super::fft::{self, is_power_of_two};
use super::profile::{record, OpKind};
use super::Tensor;
use crate::error::{config_err, dim_err, Result};

/// Complex tensor stored as a real [`Tensor`] with a trailing axis of 2
/// (real, imaginary). Real and imaginary parts therefore always share shape.
#[derive(Clone, Debug)]
pub struct ComplexTensor(Tensor);

impl ComplexTensor {
    /// Wraps `[..., 2]` interleaved storage.
    pub fn from_interleaved(t: Tensor) -> Result<ComplexTensor> {
        if t.shape().last() != Some(&2) || t.rank() < 2 {
            return Err(dim_err!("complex storage needs a trailing axis of 2, got {:?}", t.shape()));
        }
        Ok(ComplexTensor(t))
    }

    pub fn from_parts(re: &[f64], im: &[f64], shape: &[usize]) -> Result<ComplexTensor> {
        if re.len() != im.len() {
            return Err(dim_err!("real part has {} values, imaginary part {}", re.len(), im.len()));
        }
        let data = re.iter().zip(im).flat_map(|(r, i)| [*r, *i]).collect();
        let mut s = shape.to_vec();
        s.push(2);
        Ok(ComplexTensor(Tensor::new(data, &s)?))
    }

    /// Logical shape, without the trailing real/imaginary axis.
    pub fn shape(&self) -> &[usize] {
        let s = self.0.shape();
        &s[..s.len() - 1]
    }

    pub fn as_real(&self) -> &Tensor {
        &self.0
    }

    pub fn re(&self) -> Vec<f64> {
        self.0.data().iter().step_by(2).copied().collect()
    }

    pub fn im(&self) -> Vec<f64> {
        self.0.data().iter().skip(1).step_by(2).copied().collect()
    }

    /// Keeps the lowest `modes` bins of the last logical axis.
    pub fn truncate(&self, modes: usize) -> Result<ComplexTensor> {
        let axis = self.0.rank() - 2;
        Ok(ComplexTensor(self.0.narrow(axis, 0, modes)?))
    }

    /// Inverse real FFT along the last logical axis to `n` samples; bins past
    /// the supplied ones are taken as zero.
    pub fn irfft(&self, n: usize) -> Result<Tensor> {
        if !is_power_of_two(n) {
            return Err(config_err!("irfft length {n} is not a power of two"));
        }
        let shape = self.shape();
        let m = *shape.last().unwrap();
        if m > n / 2 + 1 {
            return Err(dim_err!("irfft: {m} bins exceed {} for length {n}", n / 2 + 1));
        }
        let rows = shape[..shape.len() - 1].iter().product::<usize>();
        let src = self.0.data();
        let mut out = Vec::with_capacity(rows * n);
        let mut re = vec![0.0; m];
        let mut im = vec![0.0; m];
        for r in 0..rows {
            for k in 0..m {
                re[k] = src[(r * m + k) * 2];
                im[k] = src[(r * m + k) * 2 + 1];
            }
            out.extend(fft::irfft(&re, &im, n));
        }
        record(OpKind::Fft, "irfft", 0, out.len() as u64);
        let mut out_shape = shape.to_vec();
        *out_shape.last_mut().unwrap() = n;
        Ok(Tensor::from_op(out, out_shape, &[&self.0], move |g| {
            let mut gin = vec![0.0; rows * m * 2];
            for r in 0..rows {
                let (gr, gi) = fft::irfft_adjoint(&g[r * n..(r + 1) * n], m);
                for k in 0..m {
                    gin[(r * m + k) * 2] = gr[k];
                    gin[(r * m + k) * 2 + 1] = gi[k];
                }
            }
            vec![Some(gin)]
        }))
    }

    /// Complex channel mixing `out[b, o, k] = sum_i x[b, i, k] * w[i, o, k]`
    /// for `x: [B, C_in, M]` and `w: [C_in, C_out, M]` (M may be a flattened
    /// multi-axis mode block). Each complex product is 4 real multiplications
    /// and 2 real additions.
    pub fn channel_mix(&self, weights: &ComplexTensor) -> Result<ComplexTensor> {
        let (b, cin, m) = match self.shape() {
            [b, c, m] => (*b, *c, *m),
            s => return Err(dim_err!("channel_mix input must be [B, C_in, M], got {s:?}")),
        };
        let (wcin, cout, wm) = match weights.shape() {
            [i, o, m] => (*i, *o, *m),
            s => return Err(dim_err!("channel_mix weights must be [C_in, C_out, M], got {s:?}")),
        };
        if wcin != cin || wm != m {
            return Err(dim_err!("channel_mix: input [{b}, {cin}, {m}] vs weights [{wcin}, {cout}, {wm}]"));
        }
        let x = self.0.shared_data();
        let w = weights.0.shared_data();
        let mut out = vec![0.0; b * cout * m * 2];
        for bi in 0..b {
            for i in 0..cin {
                let xrow = &x[(bi * cin + i) * m * 2..(bi * cin + i + 1) * m * 2];
                for o in 0..cout {
                    let wrow = &w[(i * cout + o) * m * 2..(i * cout + o + 1) * m * 2];
                    let orow = &mut out[(bi * cout + o) * m * 2..(bi * cout + o + 1) * m * 2];
                    for k in 0..m {
                        let (xr, xi) = (xrow[2 * k], xrow[2 * k + 1]);
                        let (wr, wi) = (wrow[2 * k], wrow[2 * k + 1]);
                        orow[2 * k] += xr * wr - xi * wi;
                        orow[2 * k + 1] += xr * wi + xi * wr;
                    }
                }
            }
        }
        record(OpKind::SpectralMix, "channel_mix", (4 * b * cin * cout * m) as u64, (b * cout * m) as u64);
        let t = Tensor::from_op(out, vec![b, cout, m, 2], &[&self.0, &weights.0], move |g| {
            let mut gx = vec![0.0; b * cin * m * 2];
            let mut gw = vec![0.0; cin * cout * m * 2];
            for bi in 0..b {
                for i in 0..cin {
                    let xrow = &x[(bi * cin + i) * m * 2..(bi * cin + i + 1) * m * 2];
                    let gxrow = &mut gx[(bi * cin + i) * m * 2..(bi * cin + i + 1) * m * 2];
                    for o in 0..cout {
                        let wbase = (i * cout + o) * m * 2;
                        let grow = &g[(bi * cout + o) * m * 2..(bi * cout + o + 1) * m * 2];
                        for k in 0..m {
                            let (gr, gi) = (grow[2 * k], grow[2 * k + 1]);
                            let (wr, wi) = (w[wbase + 2 * k], w[wbase + 2 * k + 1]);
                            let (xr, xi) = (xrow[2 * k], xrow[2 * k + 1]);
                            gxrow[2 * k] += gr * wr + gi * wi;
                            gxrow[2 * k + 1] += gi * wr - gr * wi;
                            gw[wbase + 2 * k] += gr * xr + gi * xi;
                            gw[wbase + 2 * k + 1] += gi * xr - gr * xi;
                        }
                    }
                }
            }
            vec![Some(gx), Some(gw)]
        });
        Ok(ComplexTensor(t))
    }
}

impl Tensor {
    /// Real FFT along the last axis: `[..., N] -> [..., N/2 + 1]` complex.
    pub fn rfft(&self) -> Result<ComplexTensor> {
        let shape = self.shape();
        let n = *shape.last().ok_or_else(|| dim_err!("rfft of scalar"))?;
        if !is_power_of_two(n) {
            return Err(config_err!("rfft length {n} is not a power of two"));
        }
        let m = n / 2 + 1;
        let rows = self.numel() / n;
        let x = self.data();
        let mut out = Vec::with_capacity(rows * m * 2);
        for r in 0..rows {
            let (re, im) = fft::rfft(&x[r * n..(r + 1) * n]);
            out.extend(re.iter().zip(&im).flat_map(|(a, b)| [*a, *b]));
        }
        record(OpKind::Fft, "rfft", 0, (rows * m) as u64);
        let mut out_shape = shape.to_vec();
        *out_shape.last_mut().unwrap() = m;
        out_shape.push(2);
        let t = Tensor::from_op(out, out_shape, &[self], move |g| {
            let mut gx = Vec::with_capacity(rows * n);
            let mut gr = vec![0.0; m];
            let mut gi = vec![0.0; m];
            for r in 0..rows {
                for k in 0..m {
                    gr[k] = g[(r * m + k) * 2];
                    gi[k] = g[(r * m + k) * 2 + 1];
                }
                gx.extend(fft::rfft_adjoint(&gr, &gi, n));
            }
            vec![Some(gx)]
        });
        Ok(ComplexTensor(t))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn constant_signal_is_dc_only() {
        let c = 1.75;
        let x = Tensor::full(&[8], c);
        let f = x.rfft().unwrap();
        assert_eq!(f.shape(), &[5]);
        let (re, im) = (f.re(), f.im());
        assert!((re[0] - 8.0 * c).abs() < 1e-12);
        assert!(re[1..].iter().chain(&im).all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn pure_tone_occupies_one_bin() {
        let n = 32;
        let k = 5;
        let x: Vec<f64> = (0..n).map(|t| (2.0 * PI * (k * t) as f64 / n as f64).cos()).collect();
        let f = Tensor::new(x, &[n]).unwrap().rfft().unwrap();
        let (re, im) = (f.re(), f.im());
        for b in 0..=n / 2 {
            let mag = (re[b] * re[b] + im[b] * im[b]).sqrt();
            if b == k {
                assert!((mag - n as f64 / 2.0).abs() < 1e-10);
            } else {
                assert!(mag < 1e-10, "bin {b} has {mag}");
            }
        }
    }

    #[test]
    fn non_power_of_two_rejected() {
        assert!(Tensor::zeros(&[12]).rfft().is_err());
    }

    #[test]
    fn channel_mix_single_product() {
        // (1 + 2i)(3 - i) = 5 + 5i
        let x = ComplexTensor::from_parts(&[1.0], &[2.0], &[1, 1, 1]).unwrap();
        let w = ComplexTensor::from_parts(&[3.0], &[-1.0], &[1, 1, 1]).unwrap();
        let y = x.channel_mix(&w).unwrap();
        assert_eq!((y.re(), y.im()), (vec![5.0], vec![5.0]));
    }
}
