use super::profile::{record, OpKind};
use super::{numel, Tensor};
use crate::error::{config_err, dim_err, Result};

/// `sqrt(2 / pi)` in the tanh approximation of GELU.
pub const GELU_SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;
/// Cubic coefficient in the tanh approximation of GELU.
pub const GELU_COEFF: f64 = 0.044_715;

/// `0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)))`
pub fn gelu_scalar(x: f64) -> f64 {
    let inner = GELU_SQRT_2_OVER_PI * (x + GELU_COEFF * x * x * x);
    0.5 * x * (1.0 + inner.tanh())
}

fn gelu_derivative(x: f64) -> f64 {
    let inner = GELU_SQRT_2_OVER_PI * (x + GELU_COEFF * x * x * x);
    let t = inner.tanh();
    let dinner = GELU_SQRT_2_OVER_PI * (1.0 + 3.0 * GELU_COEFF * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner
}

/// Boundary handling for "same" convolutions.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Padding {
    Zero,
    Circular,
}

/// Checks that `b` broadcasts into `a` by trailing-dimension expansion and
/// returns the repeat count.
fn broadcast_repeats(a: &[usize], b: &[usize], op: &str) -> Result<usize> {
    if a == b {
        return Ok(1);
    }
    if b.len() < a.len() && a.ends_with(b) {
        return Ok(numel(&a[..a.len() - b.len()]));
    }
    if b == [1] {
        return Ok(numel(a));
    }
    Err(dim_err!("{op}: cannot broadcast {b:?} into {a:?}"))
}

fn reduce_repeats(g: &[f64], inner: usize) -> Vec<f64> {
    let mut out = vec![0.0; inner];
    for chunk in g.chunks_exact(inner) {
        out.iter_mut().zip(chunk).for_each(|(o, v)| *o += v);
    }
    out
}

fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    (numel(&shape[..axis]), shape[axis], numel(&shape[axis + 1..]))
}

impl Tensor {
    fn binary(&self, other: &Tensor, op: &'static str) -> Result<(usize, usize)> {
        let reps = broadcast_repeats(self.shape(), other.shape(), op)?;
        Ok((reps, other.numel()))
    }

    /// Elementwise sum; `other` may broadcast over leading dimensions.
    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        let (_, inner) = self.binary(other, "add")?;
        let b = other.data();
        let data: Vec<f64> = self.data().iter().enumerate().map(|(i, a)| a + b[i % inner]).collect();
        record(OpKind::Elementwise, "add", 0, data.len() as u64);
        Ok(Tensor::from_op(data, self.shape().to_vec(), &[self, other], move |g| {
            let gb = if inner == g.len() { g.to_vec() } else { reduce_repeats(g, inner) };
            vec![Some(g.to_vec()), Some(gb)]
        }))
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        let (_, inner) = self.binary(other, "sub")?;
        let b = other.data();
        let data: Vec<f64> = self.data().iter().enumerate().map(|(i, a)| a - b[i % inner]).collect();
        record(OpKind::Elementwise, "sub", 0, data.len() as u64);
        Ok(Tensor::from_op(data, self.shape().to_vec(), &[self, other], move |g| {
            let neg: Vec<f64> = g.iter().map(|v| -v).collect();
            let gb = if inner == g.len() { neg } else { reduce_repeats(&neg, inner) };
            vec![Some(g.to_vec()), Some(gb)]
        }))
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        let (_, inner) = self.binary(other, "mul")?;
        let a = self.shared_data();
        let b = other.shared_data();
        let data: Vec<f64> = a.iter().enumerate().map(|(i, x)| x * b[i % inner]).collect();
        record(OpKind::Elementwise, "mul", 0, data.len() as u64);
        Ok(Tensor::from_op(data, self.shape().to_vec(), &[self, other], move |g| {
            let ga: Vec<f64> = g.iter().enumerate().map(|(i, v)| v * b[i % inner]).collect();
            let prod: Vec<f64> = g.iter().zip(a.iter()).map(|(v, x)| v * x).collect();
            let gb = if inner == g.len() { prod } else { reduce_repeats(&prod, inner) };
            vec![Some(ga), Some(gb)]
        }))
    }

    /// Multiplication by a constant.
    pub fn scale(&self, factor: f64) -> Tensor {
        let data = self.data().iter().map(|v| v * factor).collect();
        Tensor::from_op(data, self.shape().to_vec(), &[self], move |g| {
            vec![Some(g.iter().map(|v| v * factor).collect())]
        })
    }

    pub fn square(&self) -> Tensor {
        let x = self.shared_data();
        let data = x.iter().map(|v| v * v).collect();
        Tensor::from_op(data, self.shape().to_vec(), &[self], move |g| {
            vec![Some(g.iter().zip(x.iter()).map(|(g, v)| 2.0 * g * v).collect())]
        })
    }

    /// Elementwise square root; the gradient at 0 is taken as 0.
    pub fn sqrt(&self) -> Tensor {
        let data: Vec<f64> = self.data().iter().map(|v| v.sqrt()).collect();
        let y = data.clone();
        Tensor::from_op(data, self.shape().to_vec(), &[self], move |g| {
            vec![Some(g.iter().zip(&y).map(|(g, y)| if *y > 0.0 { 0.5 * g / y } else { 0.0 }).collect())]
        })
    }

    pub fn relu(&self) -> Tensor {
        let x = self.shared_data();
        let data: Vec<f64> = x.iter().map(|v| v.max(0.0)).collect();
        record(OpKind::Elementwise, "relu", 0, data.len() as u64);
        Tensor::from_op(data, self.shape().to_vec(), &[self], move |g| {
            vec![Some(g.iter().zip(x.iter()).map(|(g, v)| if *v > 0.0 { *g } else { 0.0 }).collect())]
        })
    }

    /// GELU, tanh approximation (see [`gelu_scalar`]).
    pub fn gelu(&self) -> Tensor {
        let x = self.shared_data();
        let data: Vec<f64> = x.iter().map(|&v| gelu_scalar(v)).collect();
        record(OpKind::Elementwise, "gelu", 0, data.len() as u64);
        Tensor::from_op(data, self.shape().to_vec(), &[self], move |g| {
            vec![Some(g.iter().zip(x.iter()).map(|(g, &v)| g * gelu_derivative(v)).collect())]
        })
    }

    pub fn sum(&self) -> Tensor {
        let n = self.numel();
        let s: f64 = self.data().iter().sum();
        Tensor::from_op(vec![s], vec![1], &[self], move |g| vec![Some(vec![g[0]; n])])
    }

    pub fn mean(&self) -> Tensor {
        let n = self.numel();
        let s: f64 = self.data().iter().sum::<f64>() / n as f64;
        Tensor::from_op(vec![s], vec![1], &[self], move |g| vec![Some(vec![g[0] / n as f64; n])])
    }

    /// Same values under a new shape.
    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        if numel(shape) != self.numel() {
            return Err(dim_err!("reshape {:?} -> {shape:?}", self.shape()));
        }
        Ok(Tensor::from_op(self.to_vec(), shape.to_vec(), &[self], |g| vec![Some(g.to_vec())]))
    }

    /// Slice `len` entries starting at `start` along `axis`.
    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Result<Tensor> {
        let shape = self.shape();
        if axis >= shape.len() || start + len > shape[axis] || len == 0 {
            return Err(dim_err!("narrow axis {axis} [{start}, {}) of {shape:?}", start + len));
        }
        let (outer, dim, inner) = axis_split(shape, axis);
        let x = self.data();
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * dim + start) * inner;
            data.extend_from_slice(&x[base..base + len * inner]);
        }
        let mut out_shape = shape.to_vec();
        out_shape[axis] = len;
        Ok(Tensor::from_op(data, out_shape, &[self], move |g| {
            let mut gx = vec![0.0; outer * dim * inner];
            for o in 0..outer {
                let base = (o * dim + start) * inner;
                gx[base..base + len * inner].copy_from_slice(&g[o * len * inner..(o + 1) * len * inner]);
            }
            vec![Some(gx)]
        }))
    }

    /// Concatenation along `axis`; all other extents must agree.
    pub fn concat(parts: &[&Tensor], axis: usize) -> Result<Tensor> {
        let first = parts.first().ok_or_else(|| dim_err!("concat of nothing"))?;
        let shape = first.shape();
        if axis >= shape.len() {
            return Err(dim_err!("concat axis {axis} out of range for {shape:?}"));
        }
        for p in parts {
            let s = p.shape();
            if s.len() != shape.len() || s.iter().zip(shape).enumerate().any(|(i, (a, b))| i != axis && a != b) {
                return Err(dim_err!("concat along {axis}: {s:?} vs {shape:?}"));
            }
        }
        let (outer, _, inner) = axis_split(shape, axis);
        let dims: Vec<usize> = parts.iter().map(|p| p.shape()[axis]).collect();
        let total: usize = dims.iter().sum();
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for (p, &d) in parts.iter().zip(&dims) {
                data.extend_from_slice(&p.data()[o * d * inner..(o + 1) * d * inner]);
            }
        }
        let mut out_shape = shape.to_vec();
        out_shape[axis] = total;
        let dims_b = dims.clone();
        Ok(Tensor::from_op(data, out_shape, parts, move |g| {
            let mut grads: Vec<Vec<f64>> = dims_b.iter().map(|d| Vec::with_capacity(outer * d * inner)).collect();
            let mut pos = 0;
            for _ in 0..outer {
                for (gp, &d) in grads.iter_mut().zip(&dims_b) {
                    gp.extend_from_slice(&g[pos..pos + d * inner]);
                    pos += d * inner;
                }
            }
            grads.into_iter().map(Some).collect()
        }))
    }

    /// Group normalization over `[B, C, ...]`: statistics per sample and per
    /// group of `C / groups` channels, then per-channel affine `gamma, beta`.
    pub fn group_norm(&self, groups: usize, gamma: &Tensor, beta: &Tensor, eps: f64) -> Result<Tensor> {
        let shape = self.shape();
        if shape.len() < 2 {
            return Err(dim_err!("group_norm needs [B, C, ...], got {shape:?}"));
        }
        let (b, c) = (shape[0], shape[1]);
        let spatial = numel(&shape[2..]);
        if groups == 0 || c % groups != 0 {
            return Err(config_err!("group_norm: {c} channels not divisible into {groups} groups"));
        }
        if gamma.shape() != [c] || beta.shape() != [c] {
            return Err(dim_err!("group_norm affine shapes {:?}/{:?} for {c} channels", gamma.shape(), beta.shape()));
        }
        let cg = c / groups;
        let block = cg * spatial;
        let x = self.data();
        let gm = gamma.shared_data();
        let bt = beta.data();
        let mut xhat = vec![0.0; x.len()];
        let mut inv_std = vec![0.0; b * groups];
        for (bg, chunk) in x.chunks_exact(block).enumerate() {
            let mean = chunk.iter().sum::<f64>() / block as f64;
            let var = chunk.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / block as f64;
            let istd = 1.0 / (var + eps).sqrt();
            inv_std[bg] = istd;
            for (h, v) in xhat[bg * block..(bg + 1) * block].iter_mut().zip(chunk) {
                *h = (v - mean) * istd;
            }
        }
        let mut data = vec![0.0; x.len()];
        for (idx, (d, h)) in data.iter_mut().zip(&xhat).enumerate() {
            let ch = (idx / spatial) % c;
            *d = gm[ch] * h + bt[ch];
        }
        record(OpKind::Elementwise, "group_norm", 0, data.len() as u64);
        Ok(Tensor::from_op(data, shape.to_vec(), &[self, gamma, beta], move |g| {
            let mut gx = vec![0.0; g.len()];
            let mut ggamma = vec![0.0; c];
            let mut gbeta = vec![0.0; c];
            for (idx, (gv, h)) in g.iter().zip(&xhat).enumerate() {
                let ch = (idx / spatial) % c;
                ggamma[ch] += gv * h;
                gbeta[ch] += gv;
            }
            for bg in 0..b * groups {
                let range = bg * block..(bg + 1) * block;
                let first_ch = (bg % groups) * cg;
                let dxhat: Vec<f64> =
                    g[range.clone()].iter().enumerate().map(|(i, gv)| gv * gm[first_ch + i / spatial]).collect();
                let h = &xhat[range.clone()];
                let m1 = dxhat.iter().sum::<f64>() / block as f64;
                let m2 = dxhat.iter().zip(h).map(|(d, h)| d * h).sum::<f64>() / block as f64;
                let istd = inv_std[bg];
                for (i, out) in gx[range].iter_mut().enumerate() {
                    *out = istd * (dxhat[i] - m1 - h[i] * m2);
                }
            }
            vec![Some(gx), Some(ggamma), Some(gbeta)]
        }))
    }

    /// `[m, k] x [k, n] -> [m, n]`
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        let (sa, sb) = (self.shape(), other.shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(dim_err!("matmul {sa:?} x {sb:?}"));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let a = self.shared_data();
        let b = other.shared_data();
        let mut data = vec![0.0; m * n];
        for i in 0..m {
            let row = &mut data[i * n..(i + 1) * n];
            for p in 0..k {
                let av = a[i * k + p];
                row.iter_mut().zip(&b[p * n..(p + 1) * n]).for_each(|(o, bv)| *o += av * bv);
            }
        }
        record(OpKind::MatMul, "matmul", (m * k * n) as u64, (m * n) as u64);
        Ok(Tensor::from_op(data, vec![m, n], &[self, other], move |g| {
            // dA = G B^T, dB = A^T G
            let mut ga = vec![0.0; m * k];
            for i in 0..m {
                for p in 0..k {
                    ga[i * k + p] = g[i * n..(i + 1) * n].iter().zip(&b[p * n..(p + 1) * n]).map(|(x, y)| x * y).sum();
                }
            }
            let mut gb = vec![0.0; k * n];
            for i in 0..m {
                for p in 0..k {
                    let av = a[i * k + p];
                    gb[p * n..(p + 1) * n].iter_mut().zip(&g[i * n..(i + 1) * n]).for_each(|(o, gv)| *o += av * gv);
                }
            }
            vec![Some(ga), Some(gb)]
        }))
    }

    /// "Same" 1D convolution (cross-correlation) of `[B, C_in, N]` (or
    /// `[C_in, N]`) with `[C_out, C_in, K]`, K odd.
    pub fn conv1d(&self, kernel: &Tensor, bias: Option<&Tensor>, padding: Padding) -> Result<Tensor> {
        self.conv1d_strided(kernel, bias, padding, 1)
    }

    /// Convolution evaluated at every `stride`-th position; output length
    /// `N / stride`, output `j` centred on input `j * stride`.
    pub fn conv1d_strided(
        &self,
        kernel: &Tensor,
        bias: Option<&Tensor>,
        padding: Padding,
        stride: usize,
    ) -> Result<Tensor> {
        let unbatched = self.rank() == 2;
        let (bsz, cin, n) = match self.shape() {
            [c, n] => (1, *c, *n),
            [b, c, n] => (*b, *c, *n),
            s => return Err(dim_err!("conv1d input must be [B, C, N] or [C, N], got {s:?}")),
        };
        let (cout, kcin, k) = match kernel.shape() {
            [o, i, k] => (*o, *i, *k),
            s => return Err(dim_err!("conv1d kernel must be [C_out, C_in, K], got {s:?}")),
        };
        if k % 2 == 0 {
            return Err(config_err!("conv1d kernel size {k} must be odd"));
        }
        if kcin != cin {
            return Err(dim_err!("conv1d: input has {cin} channels, kernel expects {kcin}"));
        }
        if stride == 0 || n % stride != 0 {
            return Err(config_err!("conv1d: length {n} not divisible by stride {stride}"));
        }
        if let Some(b) = bias {
            if b.shape() != [cout] {
                return Err(dim_err!("conv1d bias shape {:?}, expected [{cout}]", b.shape()));
            }
        }
        let nout = n / stride;
        let half = k as isize / 2;
        let segs: Vec<Vec<Segment>> =
            (0..k).map(|t| tap_segments(n, nout, stride, t as isize - half, padding)).collect();

        let x = self.shared_data();
        let w = kernel.shared_data();
        let mut out = vec![0.0; bsz * cout * nout];
        for b in 0..bsz {
            for o in 0..cout {
                let orow = &mut out[(b * cout + o) * nout..(b * cout + o + 1) * nout];
                if let Some(bv) = bias {
                    orow.fill(bv.data()[o]);
                }
                for i in 0..cin {
                    let xrow = &x[(b * cin + i) * n..(b * cin + i + 1) * n];
                    for (t, tsegs) in segs.iter().enumerate() {
                        let wv = w[(o * cin + i) * k + t];
                        for s in tsegs {
                            s.axpy(wv, xrow, orow);
                        }
                    }
                }
            }
        }
        record(OpKind::Conv, "conv1d", (bsz * cout * cin * k * nout) as u64, out.len() as u64);

        let out_shape = if unbatched { vec![cout, nout] } else { vec![bsz, cout, nout] };
        let has_bias = bias.is_some();
        let mut parents: Vec<&Tensor> = vec![self, kernel];
        if let Some(b) = bias {
            parents.push(b);
        }
        Ok(Tensor::from_op(out, out_shape, &parents, move |g| {
            let mut gx = vec![0.0; bsz * cin * n];
            let mut gw = vec![0.0; cout * cin * k];
            for b in 0..bsz {
                for o in 0..cout {
                    let grow = &g[(b * cout + o) * nout..(b * cout + o + 1) * nout];
                    for i in 0..cin {
                        let xrow = &x[(b * cin + i) * n..(b * cin + i + 1) * n];
                        let gxrow = &mut gx[(b * cin + i) * n..(b * cin + i + 1) * n];
                        for (t, tsegs) in segs.iter().enumerate() {
                            let widx = (o * cin + i) * k + t;
                            let wv = w[widx];
                            let mut acc = 0.0;
                            for s in tsegs {
                                acc += s.dot(grow, xrow);
                                s.scatter(wv, grow, gxrow);
                            }
                            gw[widx] += acc;
                        }
                    }
                }
            }
            let mut grads = vec![Some(gx), Some(gw)];
            if has_bias {
                let mut gb = vec![0.0; cout];
                for (row, gr) in g.chunks_exact(nout).enumerate() {
                    gb[row % cout] += gr.iter().sum::<f64>();
                }
                grads.push(Some(gb));
            }
            grads
        }))
    }

    /// Repeats each sample along the last axis `factor` times.
    pub fn upsample_nearest(&self, factor: usize) -> Result<Tensor> {
        let shape = self.shape();
        let n = *shape.last().ok_or_else(|| dim_err!("upsample of scalar"))?;
        let rows = self.numel() / n;
        let x = self.data();
        let mut data = Vec::with_capacity(self.numel() * factor);
        for r in 0..rows {
            for v in &x[r * n..(r + 1) * n] {
                data.extend(std::iter::repeat_n(*v, factor));
            }
        }
        let mut out_shape = shape.to_vec();
        *out_shape.last_mut().unwrap() = n * factor;
        Ok(Tensor::from_op(data, out_shape, &[self], move |g| {
            vec![Some(g.chunks_exact(factor).map(|c| c.iter().sum()).collect())]
        }))
    }
}

/// Output positions `j in j0..j1` read input `idx0 + (j - j0) * stride`.
#[derive(Clone, Copy, Debug)]
struct Segment {
    j0: usize,
    j1: usize,
    idx0: usize,
    stride: usize,
}

impl Segment {
    #[inline]
    fn axpy(&self, w: f64, x: &[f64], out: &mut [f64]) {
        if self.stride == 1 {
            let len = self.j1 - self.j0;
            out[self.j0..self.j1].iter_mut().zip(&x[self.idx0..self.idx0 + len]).for_each(|(o, v)| *o += w * v);
        } else {
            for (j, o) in out[self.j0..self.j1].iter_mut().enumerate() {
                *o += w * x[self.idx0 + j * self.stride];
            }
        }
    }

    #[inline]
    fn dot(&self, g: &[f64], x: &[f64]) -> f64 {
        if self.stride == 1 {
            let len = self.j1 - self.j0;
            g[self.j0..self.j1].iter().zip(&x[self.idx0..self.idx0 + len]).map(|(a, b)| a * b).sum()
        } else {
            g[self.j0..self.j1].iter().enumerate().map(|(j, a)| a * x[self.idx0 + j * self.stride]).sum()
        }
    }

    #[inline]
    fn scatter(&self, w: f64, g: &[f64], gx: &mut [f64]) {
        if self.stride == 1 {
            let len = self.j1 - self.j0;
            gx[self.idx0..self.idx0 + len].iter_mut().zip(&g[self.j0..self.j1]).for_each(|(o, v)| *o += w * v);
        } else {
            for (j, v) in g[self.j0..self.j1].iter().enumerate() {
                gx[self.idx0 + j * self.stride] += w * v;
            }
        }
    }
}

/// Contiguous runs of output positions for one kernel tap at offset `shift`.
fn tap_segments(n: usize, nout: usize, stride: usize, shift: isize, padding: Padding) -> Vec<Segment> {
    let (n_i, s_i) = (n as isize, stride as isize);
    // first j with j*s + shift >= 0, first j with j*s + shift >= n
    let lo = ((-shift).max(0) + s_i - 1) / s_i;
    let hi = (((n_i - shift).max(0) + s_i - 1) / s_i).min(nout as isize);
    let mut segs = Vec::with_capacity(3);
    let push = |segs: &mut Vec<Segment>, j0: isize, j1: isize, idx0: isize| {
        if j1 > j0 {
            segs.push(Segment { j0: j0 as usize, j1: j1 as usize, idx0: idx0 as usize, stride });
        }
    };
    if padding == Padding::Circular && lo > 0 {
        push(&mut segs, 0, lo, shift + n_i);
    }
    if hi > lo {
        push(&mut segs, lo, hi, lo * s_i + shift);
    }
    if padding == Padding::Circular && hi < nout as isize {
        push(&mut segs, hi, nout as isize, hi * s_i + shift - n_i);
    }
    segs
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(data: &[f64], shape: &[usize]) -> Tensor {
        Tensor::new(data.to_vec(), shape).unwrap()
    }

    #[test]
    fn matmul_identity_and_hand_product() {
        let i2 = t(&[1.0, 0.0, 0.0, 1.0], &[2, 2]);
        let a = t(&[1.0, 2.0, 3.0, 4.0], &[2, 2]);
        assert_eq!(i2.matmul(&a).unwrap().to_vec(), vec![1.0, 2.0, 3.0, 4.0]);
        let r = t(&[1.0, 2.0], &[1, 2]).matmul(&t(&[3.0, 4.0], &[2, 1])).unwrap();
        assert_eq!(r.to_vec(), vec![11.0]);
        assert!(a.matmul(&t(&[1.0; 3], &[3, 1])).is_err());
    }

    #[test]
    fn matmul_gradient_is_ones_times_b_transpose() {
        let a = t(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0], &[2, 3]).requires_grad();
        let b = t(&[0.5, -1.0, 2.0, 0.0, 1.5, 3.0], &[3, 2]);
        a.matmul(&b).unwrap().sum().backward().unwrap();
        // row sums of B
        assert_eq!(a.grad().unwrap(), vec![-0.5, 2.0, 4.5, -0.5, 2.0, 4.5]);
    }

    #[test]
    fn conv_examples() {
        let x = t(&[1.0, 2.0, 3.0], &[1, 3]);
        let y = x.conv1d(&t(&[2.0], &[1, 1, 1]), None, Padding::Zero).unwrap();
        assert_eq!(y.to_vec(), vec![2.0, 4.0, 6.0]);

        let x = t(&[5.0, 6.0, 7.0], &[1, 3]);
        let y = x.conv1d(&t(&[1.0, 0.0, 0.0], &[1, 1, 3]), None, Padding::Zero).unwrap();
        assert_eq!(y.to_vec(), vec![0.0, 5.0, 6.0]);

        let x = t(&[4.0; 8], &[1, 1, 8]);
        let k = t(&[1.0 / 3.0; 3], &[1, 1, 3]);
        let y = x.conv1d(&k, None, Padding::Circular).unwrap();
        assert!(y.data().iter().all(|v| (v - 4.0).abs() < 1e-12));

        assert!(x.conv1d(&t(&[1.0; 2], &[1, 1, 2]), None, Padding::Zero).is_err());
    }

    #[test]
    fn circular_conv_wraps() {
        let x = t(&[1.0, 2.0, 3.0, 4.0], &[1, 4]);
        // out[j] = x[j-1]
        let y = x.conv1d(&t(&[1.0, 0.0, 0.0], &[1, 1, 3]), None, Padding::Circular).unwrap();
        assert_eq!(y.to_vec(), vec![4.0, 1.0, 2.0, 3.0]);
        let y = x.conv1d(&t(&[0.0, 0.0, 1.0], &[1, 1, 3]), None, Padding::Circular).unwrap();
        assert_eq!(y.to_vec(), vec![2.0, 3.0, 4.0, 1.0]);
    }

    #[test]
    fn strided_conv_picks_centres() {
        let x = t(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0], &[1, 6]);
        let y = x.conv1d_strided(&t(&[0.0, 1.0, 0.0], &[1, 1, 3]), None, Padding::Zero, 2).unwrap();
        assert_eq!(y.to_vec(), vec![1.0, 3.0, 5.0]);
        let y = x.conv1d_strided(&t(&[1.0, 1.0, 1.0], &[1, 1, 3]), None, Padding::Zero, 2).unwrap();
        assert_eq!(y.to_vec(), vec![3.0, 9.0, 15.0]);
    }

    #[test]
    fn elementwise_anchors() {
        assert_eq!(gelu_scalar(0.0), 0.0);
        assert_eq!(t(&[1.0, 2.0, 3.0], &[3]).mean().item(), 2.0);
        let x = t(&[3.0; 8], &[1, 2, 4]);
        let y = x.group_norm(1, &t(&[1.0, 1.0], &[2]), &t(&[0.0, 0.0], &[2]), 1e-5).unwrap();
        assert!(y.data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn broadcasting_is_trailing_only() {
        let a = t(&[1.0; 6], &[2, 3]);
        assert!(a.add(&t(&[1.0, 2.0, 3.0], &[3])).is_ok());
        assert!(a.add(&t(&[1.0, 2.0], &[2])).is_err());
        assert!(a.add(&t(&[1.0; 2], &[2, 1])).is_err());
    }

    #[test]
    fn concat_and_narrow_roundtrip() {
        let a = t(&[1.0, 2.0, 3.0, 4.0], &[1, 2, 2]);
        let b = t(&[5.0, 6.0], &[1, 1, 2]);
        let c = Tensor::concat(&[&a, &b], 1).unwrap();
        assert_eq!(c.shape(), &[1, 3, 2]);
        assert_eq!(c.to_vec(), vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(c.narrow(1, 2, 1).unwrap().to_vec(), vec![5.0, 6.0]);
    }
}
