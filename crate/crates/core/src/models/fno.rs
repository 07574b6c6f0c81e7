//! 1D Fourier neural operator.
//!
//! A normalized grid coordinate is appended to the input channels, lifted to
//! `width` channels by a pointwise layer, passed through `layers` Fourier
//! layers (`spectral(h) + pointwise(h)`, GELU between layers) and projected
//! by a two-layer pointwise head.

use super::{AuxOp, Bound, Builder, ModelSpec, Observer};
use crate::error::{dim_err, Result};
use crate::tensor::{ComplexTensor, Padding, Tensor};

pub(crate) fn declare(spec: &ModelSpec, b: &mut Builder) {
    let (n, w, m) = (spec.grid, spec.width, spec.modes);
    b.conv("lift", spec.in_channels() + 1, w, 1, 1, true, n);
    for l in 0..spec.layers {
        b.aux(&format!("spectral{l}"), AuxOp::Rfft { n, channels: w });
        b.spectral(&format!("spectral{l}"), w, w, m, n);
        b.aux(&format!("spectral{l}"), AuxOp::Irfft { n, channels: w });
        b.conv(&format!("pointwise{l}"), w, w, 1, 1, true, n);
        b.aux(&format!("fourier{l}.add"), AuxOp::Add { elements: w * n });
        if l + 1 < spec.layers {
            b.aux(&format!("fourier{l}.gelu"), AuxOp::Gelu { elements: w * n });
        }
    }
    b.conv("fc1", w, spec.projection, 1, 1, true, n);
    b.aux("fc1.gelu", AuxOp::Gelu { elements: spec.projection * n });
    b.conv("fc2", spec.projection, spec.out_channels(), 1, 1, true, n);
}

fn grid_channel(batch: usize, n: usize) -> Tensor {
    let row: Vec<f64> = (0..n).map(|i| i as f64 / n as f64).collect();
    Tensor::new(row.repeat(batch), &[batch, 1, n]).expect("grid shape is consistent")
}

pub(crate) fn forward(b: &Bound<'_>, x: &Tensor, obs: Observer<'_>) -> Result<Tensor> {
    let spec = &b.model().spec;
    let (batch, n) = (x.shape()[0], x.shape()[2]);
    let input = Tensor::concat(&[x, &grid_channel(batch, n)], 1)?;
    let mut h = b.conv("lift", &input, Padding::Zero, obs)?;
    for l in 0..spec.layers {
        let s = b.spectral(&format!("spectral{l}"), &h, spec.modes, obs)?;
        let p = b.conv(&format!("pointwise{l}"), &h, Padding::Zero, obs)?;
        h = s.add(&p)?;
        if l + 1 < spec.layers {
            h = h.gelu();
        }
    }
    let h = b.conv("fc1", &h, Padding::Zero, obs)?.gelu();
    b.conv("fc2", &h, Padding::Zero, obs)
}

/// Stand-alone spectral convolution on `[B, C_in, N]` with complex weights
/// `[C_in, C_out, modes, 2]`.
pub fn spectral_conv(x: &Tensor, weights: &Tensor, modes: usize) -> Result<Tensor> {
    let n = *x.shape().last().ok_or_else(|| dim_err!("spectral_conv of a scalar"))?;
    let w = ComplexTensor::from_interleaved(weights.clone())?;
    x.rfft()?.truncate(modes)?.channel_mix(&w)?.irfft(n)
}
