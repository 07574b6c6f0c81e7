//! Small 1D UNet with three resolution levels.
//!
//! Encoder blocks are double convolutions (kernel 3, group norm, GELU) at
//! widths `h, 2h, 4h` with a `8h` bottleneck; downsampling uses stride-2
//! convolutions and upsampling nearest-neighbour repetition followed by a
//! convolution. Skips are concatenated. Padding is circular.

use super::{AuxOp, Bound, Builder, ModelSpec, Observer};
use crate::error::Result;
use crate::tensor::{Padding, Tensor};

pub(crate) const DEPTH: usize = 3;
const KERNEL: usize = 3;
const NORM_EPS: f64 = 1e-5;
const PAD: Padding = Padding::Circular;

fn groups(c: usize) -> usize {
    c.min(8)
}

fn double_conv_params(cin: usize, cout: usize) -> usize {
    cin * cout * KERNEL + 2 * cout + cout * cout * KERNEL + 2 * cout
}

pub(crate) fn param_count(cin: usize, cout: usize, h: usize) -> usize {
    let conv_b = |i: usize, o: usize| i * o * KERNEL + o;
    let mut total = double_conv_params(cin, h);
    let mut c = h;
    for _ in 0..DEPTH {
        total += conv_b(c, c) + double_conv_params(c, 2 * c);
        c *= 2;
    }
    for _ in 0..DEPTH {
        total += conv_b(c, c / 2) + double_conv_params(c, c / 2);
        c /= 2;
    }
    total + h * cout + cout
}

fn declare_double(b: &mut Builder, name: &str, cin: usize, cout: usize, n: usize) {
    b.conv(&format!("{name}.conv1"), cin, cout, KERNEL, 1, false, n);
    b.norm(&format!("{name}.norm1"), cout);
    b.aux(&format!("{name}.norm1"), AuxOp::GroupNorm { elements: cout * n });
    b.aux(&format!("{name}.gelu1"), AuxOp::Gelu { elements: cout * n });
    b.conv(&format!("{name}.conv2"), cout, cout, KERNEL, 1, false, n);
    b.norm(&format!("{name}.norm2"), cout);
    b.aux(&format!("{name}.norm2"), AuxOp::GroupNorm { elements: cout * n });
    b.aux(&format!("{name}.gelu2"), AuxOp::Gelu { elements: cout * n });
}

pub(crate) fn declare(spec: &ModelSpec, b: &mut Builder) {
    let (h, mut n) = (spec.width, spec.grid);
    declare_double(b, "enc0", spec.in_channels(), h, n);
    let mut c = h;
    for level in 1..=DEPTH {
        n /= 2;
        b.conv(&format!("down{level}"), c, c, KERNEL, 2, true, n);
        declare_double(b, &format!("enc{level}"), c, 2 * c, n);
        c *= 2;
    }
    for level in (0..DEPTH).rev() {
        n *= 2;
        b.conv(&format!("up{level}"), c, c / 2, KERNEL, 1, true, n);
        declare_double(b, &format!("dec{level}"), c, c / 2, n);
        c /= 2;
    }
    b.conv("out", h, spec.out_channels(), 1, 1, true, n);
}

fn double_conv(b: &Bound<'_>, name: &str, x: &Tensor, obs: Observer<'_>) -> Result<Tensor> {
    let mut h = x.clone();
    for i in 1..=2 {
        h = b.conv(&format!("{name}.conv{i}"), &h, PAD, obs)?;
        let c = h.shape()[1];
        let gamma = b.param(&format!("{name}.norm{i}.weight"));
        let beta = b.param(&format!("{name}.norm{i}.bias"));
        h = h.group_norm(groups(c), gamma, beta, NORM_EPS)?.gelu();
    }
    Ok(h)
}

pub(crate) fn forward(b: &Bound<'_>, x: &Tensor, obs: Observer<'_>) -> Result<Tensor> {
    let mut skips = Vec::with_capacity(DEPTH);
    let mut h = double_conv(b, "enc0", x, obs)?;
    for level in 1..=DEPTH {
        skips.push(h.clone());
        let d = b.conv(&format!("down{level}"), &h, PAD, obs)?;
        h = double_conv(b, &format!("enc{level}"), &d, obs)?;
    }
    for level in (0..DEPTH).rev() {
        let u = b.conv(&format!("up{level}"), &h.upsample_nearest(2)?, PAD, obs)?;
        let skip = skips.pop().expect("one skip per level");
        h = double_conv(b, &format!("dec{level}"), &Tensor::concat(&[&u, &skip], 1)?, obs)?;
    }
    b.conv("out", &h, Padding::Zero, obs)
}
