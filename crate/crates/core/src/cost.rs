//! Fixed-point inference cost.
//!
//! Each line item carries multiplication and addition counts `M`, `A` and
//! the bitwidths its operands run at; its cost is `M b_w b_a + A b_a`.
//! Anything not quantized (exempt layers, FFTs, activations, norms,
//! interpolation) is priced as 16-bit arithmetic.
//!
//! Conventions:
//! - linear/conv layers: `M = in * out * points`; `A = M` with a bias,
//!   `M - out * points` without;
//! - FFT of length `N`: `M = A = N ceil(log2 N)` per channel, halved for real input;
//! - complex channel mixing: 4 real multiplications and 2 additions per
//!   complex product plus `2 (C_in - 1) C_out` accumulation additions per mode;
//! - linear interpolation: 2 multiplications and 4 additions per output
//!   point and channel, bilinear three times that;
//! - GELU and residual adds: 1 addition per element; group norm: 5.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{AuxOp, LayerKind, Model};
use crate::quant::QuantRegime;
use crate::tensor::profile::profiled;
use crate::tensor::Tensor;

pub const UNQUANTIZED_BITS: u32 = 16;
pub const GROUP_NORM_OPS_PER_ELEMENT: u64 = 5;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerCount {
    pub name: String,
    pub m: u64,
    pub a: u64,
    pub b_w: u32,
    pub b_a: u32,
    /// Multiply-accumulate layer (contributes to the MAC total).
    pub mac: bool,
}

impl LayerCount {
    fn unquantized(name: impl Into<String>, (m, a): (u64, u64), mac: bool) -> LayerCount {
        LayerCount { name: name.into(), m, a, b_w: UNQUANTIZED_BITS, b_a: UNQUANTIZED_BITS, mac }
    }
}

pub fn count_linear(in_features: usize, out_features: usize, points: usize, has_bias: bool) -> (u64, u64) {
    let m = (in_features * out_features * points) as u64;
    let a = if has_bias { m } else { m - (out_features * points) as u64 };
    (m, a)
}

fn ceil_log2(n: usize) -> u64 {
    (usize::BITS - (n.max(1) - 1).leading_zeros()) as u64
}

pub fn count_fft(n: usize, channels: usize, real_valued: bool) -> (u64, u64) {
    let c = channels as u64 * n as u64 * ceil_log2(n);
    let c = if real_valued { c / 2 } else { c };
    (c, c)
}

pub fn count_einsum_spectral(modes: usize, cin: usize, cout: usize) -> (u64, u64) {
    let (k, i, o) = (modes as u64, cin as u64, cout as u64);
    if k == 0 || i == 0 || o == 0 {
        return (0, 0);
    }
    (4 * k * i * o, k * (2 * i * o + 2 * (i - 1) * o))
}

/// `dim` 1 for linear, 2 for bilinear interpolation.
pub fn count_interpolation(output_points: usize, dim: usize) -> (u64, u64) {
    let f = if dim >= 2 { 3 } else { 1 };
    (2 * f * output_points as u64, 4 * f * output_points as u64)
}

pub fn layer_cost(c: &LayerCount) -> u64 {
    c.m * c.b_w as u64 * c.b_a as u64 + c.a * c.b_a as u64
}

/// Per-layer counts of one rollout, with totals.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub lines: Vec<LayerCount>,
    pub passes: usize,
    pub total: u64,
    pub flops: u64,
    pub macs: u64,
}

impl CostReport {
    fn from_lines(lines: Vec<LayerCount>, passes: usize) -> CostReport {
        let total = lines.iter().map(layer_cost).sum();
        let flops = lines.iter().map(|l| l.m + l.a).sum();
        let macs = lines.iter().filter(|l| l.mac).map(|l| l.m.min(l.a)).sum();
        CostReport { lines, passes, total, flops, macs }
    }

    pub fn line(&self, name: &str) -> Option<&LayerCount> {
        self.lines.iter().find(|l| l.name == name)
    }

    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:<24} {:>14} {:>14} {:>4} {:>4} {:>18}", "layer", "M", "A", "b_w", "b_a", "cost");
        for l in &self.lines {
            let _ = writeln!(s, "{:<24} {:>14} {:>14} {:>4} {:>4} {:>18}", l.name, l.m, l.a, l.b_w, l.b_a, layer_cost(l));
        }
        let _ = writeln!(s, "forward passes: {}", self.passes);
        let _ = writeln!(s, "FLOPs: {}  MACs: {}  cost: {}", self.flops, self.macs, self.total);
        let _ = writeln!(s, "note: activations and norms are counted as additions (gelu 1, group norm 5 per element)");
        s
    }
}

/// Counts `M` of one forward pass for every enumerated layer, batch 1.
pub fn layer_counts(model: &Model) -> Vec<(String, (u64, u64))> {
    model
        .layers()
        .iter()
        .map(|l| {
            let c = match l.kind {
                LayerKind::Conv { cin, cout, kernel, .. } => count_linear(cin * kernel, cout, l.out_points, l.bias),
                LayerKind::Spectral { cin, cout, modes } => count_einsum_spectral(modes, cin, cout),
            };
            (l.name.clone(), c)
        })
        .collect()
}

/// Runs one instrumented forward pass and checks that every executed
/// multiplication belongs to an enumerated layer with the expected count.
pub fn check_enumeration(model: &Model) -> Result<()> {
    let spec = &model.spec;
    let x = Tensor::zeros(&[1, spec.in_channels(), spec.grid]);
    let bound = model.bind(false);
    let (out, profile) = profiled(|| bound.step(&x));
    out?;
    let expected: BTreeMap<String, u64> = layer_counts(model).into_iter().map(|(n, (m, _))| (n, m)).collect();
    let mut seen: BTreeMap<String, u64> = BTreeMap::new();
    for r in profile.records.iter().filter(|r| r.kind.is_mac()) {
        match &r.scope {
            Some(s) if expected.contains_key(s) => *seen.entry(s.clone()).or_default() += r.mults,
            other => {
                return Err(Error::Accounting(format!(
                    "{} with {} multiplications ran outside any enumerated layer (scope {other:?})",
                    r.op, r.mults
                )))
            }
        }
    }
    for (name, m) in &expected {
        let got = seen.get(name).copied().unwrap_or(0);
        if got != *m {
            return Err(Error::Accounting(format!("layer {name}: executed {got} multiplications, counted {m}")));
        }
    }
    Ok(())
}

/// Cost of a `rollout_steps` rollout: every pass at the network grid, plus
/// one downsample of the input window and one upsample of all predictions
/// when the model runs at a reduced resolution. With a regime, all layers but
/// the first and last are priced at its bitwidths.
pub fn model_cost(model: &Model, regime: Option<QuantRegime>, rollout_steps: usize) -> Result<CostReport> {
    check_enumeration(model)?;
    let spec = &model.spec;
    let k = spec.output_steps;
    if rollout_steps == 0 || rollout_steps % k != 0 {
        return Err(Error::Config(format!("rollout of {rollout_steps} steps is not a multiple of the bundle size {k}")));
    }
    let passes = rollout_steps / k;
    let p = passes as u64;
    let scale = model.scale();
    let mut lines = Vec::new();

    if !scale.is_identity() {
        let pts = spec.in_channels() * scale.network_size;
        lines.push(LayerCount::unquantized("downsample", count_interpolation(pts, 1), false));
    }
    let counts = layer_counts(model);
    let last = counts.len().saturating_sub(1);
    for (i, (name, (m, a))) in counts.into_iter().enumerate() {
        let (b_w, b_a) = match regime {
            Some(r) if i != 0 && i != last => (r.weight_bits, r.act_bits),
            _ => (UNQUANTIZED_BITS, UNQUANTIZED_BITS),
        };
        lines.push(LayerCount { name, m: m * p, a: a * p, b_w, b_a, mac: true });
    }
    for (name, op) in model.aux_ops() {
        let (label, (m, a)) = match *op {
            AuxOp::Rfft { n, channels } => (format!("{name}.rfft"), count_fft(n, channels, true)),
            AuxOp::Irfft { n, channels } => (format!("{name}.irfft"), count_fft(n, channels, true)),
            AuxOp::Gelu { elements } | AuxOp::Add { elements } => (name.clone(), (0, elements as u64)),
            AuxOp::GroupNorm { elements } => (name.clone(), (0, GROUP_NORM_OPS_PER_ELEMENT * elements as u64)),
        };
        lines.push(LayerCount::unquantized(label, (m * p, a * p), false));
    }
    if !scale.is_identity() {
        let pts = rollout_steps * spec.out_fields * scale.input_size;
        lines.push(LayerCount::unquantized("upsample", count_interpolation(pts, 1), false));
    }
    Ok(CostReport::from_lines(lines, passes))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_examples() {
        assert_eq!(count_linear(64, 32, 1, true), (2048, 2048));
        assert_eq!(count_linear(1, 1, 1, false), (1, 0));
        let c = LayerCount { name: "x".into(), m: 2048, a: 2048, b_w: 4, b_a: 8, mac: true };
        assert_eq!(layer_cost(&c), 81920);
    }

    #[test]
    fn fft_examples() {
        assert_eq!(count_fft(64, 1, true), (192, 192));
        assert_eq!(count_fft(2, 1, false), (2, 2));
        assert_eq!(count_fft(1024, 1, false), (10240, 10240));
        assert_eq!(count_fft(1024, 1, true), (5120, 5120));
    }

    #[test]
    fn einsum_examples() {
        assert_eq!(count_einsum_spectral(1, 1, 1), (4, 2));
        assert_eq!(count_einsum_spectral(16, 128, 128).0, 1_048_576);
        assert_eq!(count_einsum_spectral(0, 3, 3), (0, 0));
    }

    #[test]
    fn interpolation_examples() {
        assert_eq!(count_interpolation(100, 1), (200, 400));
        assert_eq!(count_interpolation(100, 2), (600, 1200));
        assert_eq!(count_interpolation(0, 1), (0, 0));
    }

    #[test]
    fn layer_cost_examples() {
        let l = |m, a, b_w, b_a| LayerCount { name: String::new(), m, a, b_w, b_a, mac: true };
        assert_eq!(layer_cost(&l(100, 100, 8, 8)), 7200);
        assert_eq!(layer_cost(&l(0, 50, 16, 16)), 800);
        assert_eq!(layer_cost(&l(3, 7, 16, 16)), 256 * 3 + 16 * 7);
    }
}
