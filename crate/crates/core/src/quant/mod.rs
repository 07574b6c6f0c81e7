//! Fixed-point quantization of weights and activations.
//!
//! A quantizer maps reals to the integer grid `0..=2^b - 1` through
//! `clamp(round(x / s) + z, 0, 2^b - 1)`, with rounding to nearest and ties
//! away from zero. The representable range is `[-s z, s (2^b - 1 - z)]`.
//! Weights use symmetric quantizers (zero-point pinned to `2^(b-1)`),
//! activations asymmetric ones.

mod attach;
mod calibrate;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{config_err, Error, Result};
use crate::tensor::profile::{record, OpKind};
use crate::tensor::Tensor;

pub use attach::{attach_quantizers, collect_layer_inputs, LayerQuant};
pub use calibrate::{calibrate_range, CALIBRATION_CANDIDATES, CALIBRATION_MAX_FACTOR, CALIBRATION_MIN_FACTOR};

pub const SUPPORTED_BITS: [u32; 3] = [4, 8, 16];

/// Scale, zero-point and bitwidth of one per-tensor quantizer.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuantizerParams {
    pub scale: f64,
    pub zero_point: u32,
    pub bits: u32,
    pub symmetric: bool,
    pub learnable: bool,
}

impl QuantizerParams {
    pub fn new(scale: f64, zero_point: u32, bits: u32, symmetric: bool) -> Result<QuantizerParams> {
        if !SUPPORTED_BITS.contains(&bits) {
            return Err(config_err!("unsupported bitwidth {bits}"));
        }
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(config_err!("quantizer scale must be positive and finite, got {scale}"));
        }
        let levels = (1u32 << bits) - 1;
        if zero_point > levels {
            return Err(config_err!("zero-point {zero_point} outside [0, {levels}]"));
        }
        if symmetric && zero_point != 1 << (bits - 1) {
            return Err(config_err!("symmetric {bits}-bit quantizer needs zero-point {}", 1u32 << (bits - 1)));
        }
        Ok(QuantizerParams { scale, zero_point, bits, symmetric, learnable: false })
    }

    pub fn symmetric(scale: f64, bits: u32) -> Result<QuantizerParams> {
        QuantizerParams::new(scale, 1 << (bits.clamp(1, 31) - 1), bits, true)
    }

    pub fn asymmetric(scale: f64, zero_point: u32, bits: u32) -> Result<QuantizerParams> {
        QuantizerParams::new(scale, zero_point, bits, false)
    }

    pub fn learnable(mut self, learnable: bool) -> QuantizerParams {
        self.learnable = learnable;
        self
    }

    /// Largest integer code, `2^b - 1`.
    pub fn levels(&self) -> u32 {
        (1u32 << self.bits) - 1
    }

    pub fn q_min(&self) -> f64 {
        -self.scale * self.zero_point as f64
    }

    pub fn q_max(&self) -> f64 {
        self.scale * (self.levels() - self.zero_point) as f64
    }

    #[inline]
    fn code(&self, x: f64) -> u32 {
        code(x, self.scale, self.zero_point as f64, self.levels() as f64) as u32
    }

    #[inline]
    pub fn fake(&self, x: f64) -> f64 {
        self.scale * (self.code(x) as f64 - self.zero_point as f64)
    }
}

#[inline]
fn code(x: f64, s: f64, z: f64, levels: f64) -> f64 {
    ((x / s).round() + z).clamp(0.0, levels)
}

/// Integer codes for `x`.
pub fn quantize(x: &[f64], p: &QuantizerParams) -> Vec<u32> {
    x.iter().map(|&v| p.code(v)).collect()
}

/// `s (q - z)`; codes outside `0..=2^b - 1` are rejected.
pub fn dequantize(codes: &[u32], p: &QuantizerParams) -> Result<Vec<f64>> {
    let levels = p.levels();
    codes
        .iter()
        .enumerate()
        .map(|(i, &q)| {
            if q > levels {
                Err(Error::Contract(format!("code {q} at index {i} exceeds {levels} for {} bits", p.bits)))
            } else {
                Ok(p.scale * (q as f64 - p.zero_point as f64))
            }
        })
        .collect()
}

/// Gradient rule for learnable quantizer ranges.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ScaleGradient {
    /// Derivative of the forward map with the integer codes held fixed:
    /// `d/ds = q - z`, `d/dz = -s` where clipped. Agrees with finite
    /// differences away from rounding boundaries.
    Exact,
    /// Learned-step-size estimator: `round(x/s) - x/s` inside the range,
    /// `q - z` outside, both scaled by `1 / sqrt(n * (2^b - 1 - z))`.
    Lsq,
}

/// Fake quantization with fixed parameters; straight-through gradient for `x`.
pub fn fake_quant(x: &Tensor, p: &QuantizerParams) -> Tensor {
    fake_quant_impl(x, None, p.scale, p.zero_point as f64, p.levels() as f64, ScaleGradient::Exact)
}

/// Fake quantization with range parameters read from one-element tensors so
/// that they can be trained. The zero-point value is rounded and clamped to
/// the code range (pinned to `2^(b-1)` when `symmetric`).
pub fn fake_quant_learnable(
    x: &Tensor,
    scale: &Tensor,
    zero_point: &Tensor,
    bits: u32,
    symmetric: bool,
    rule: ScaleGradient,
) -> Result<Tensor> {
    if scale.numel() != 1 || zero_point.numel() != 1 {
        return Err(Error::Dimension("quantizer scale and zero-point must be scalars".into()));
    }
    if !SUPPORTED_BITS.contains(&bits) {
        return Err(config_err!("unsupported bitwidth {bits}"));
    }
    let s = scale.item();
    if !(s > 0.0 && s.is_finite()) {
        return Err(config_err!("quantizer scale must be positive and finite, got {s}"));
    }
    let levels = ((1u64 << bits) - 1) as f64;
    let z = if symmetric { (1u64 << (bits - 1)) as f64 } else { zero_point.item().round().clamp(0.0, levels) };
    let zp = if symmetric { None } else { Some(zero_point) };
    Ok(fake_quant_impl(x, Some((scale, zp)), s, z, levels, rule))
}

fn fake_quant_impl(
    x: &Tensor,
    range: Option<(&Tensor, Option<&Tensor>)>,
    s: f64,
    z: f64,
    levels: f64,
    rule: ScaleGradient,
) -> Tensor {
    let xs = x.shared_data();
    let (q_min, q_max) = (-s * z, s * (levels - z));
    let data: Vec<f64> = xs.iter().map(|&v| s * (code(v, s, z, levels) - z)).collect();
    record(OpKind::FakeQuant, "fake_quant", 0, data.len() as u64);
    let n = xs.len() as f64;
    let grad_scale = match rule {
        ScaleGradient::Exact => 1.0,
        ScaleGradient::Lsq => 1.0 / (n * (levels - z).max(1.0)).sqrt(),
    };
    let mut parents = vec![x];
    if let Some((st, zt)) = range {
        parents.push(st);
        if let Some(zt) = zt {
            parents.push(zt);
        }
    }
    let n_parents = parents.len();
    Tensor::from_op(data, x.shape().to_vec(), &parents, move |g| {
        let inside = |v: f64| (q_min..=q_max).contains(&v);
        let gx: Vec<f64> = g.iter().zip(xs.iter()).map(|(g, &v)| if inside(v) { *g } else { 0.0 }).collect();
        let mut grads = vec![Some(gx)];
        if n_parents > 1 {
            let mut ds = 0.0;
            let mut dz = 0.0;
            for (g, &v) in g.iter().zip(xs.iter()) {
                let q = code(v, s, z, levels) - z;
                let local = match rule {
                    ScaleGradient::Lsq if inside(v) => q - v / s,
                    _ => q,
                };
                ds += g * local;
                if !inside(v) {
                    dz -= g * s;
                }
            }
            grads.push(Some(vec![ds * grad_scale]));
            if n_parents > 2 {
                grads.push(Some(vec![dz * grad_scale]));
            }
        }
        grads
    })
}

/// Weight/activation bitwidth pair, written `wXaY`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct QuantRegime {
    pub weight_bits: u32,
    pub act_bits: u32,
}

impl QuantRegime {
    pub const W4A4: QuantRegime = QuantRegime { weight_bits: 4, act_bits: 4 };
    pub const W4A8: QuantRegime = QuantRegime { weight_bits: 4, act_bits: 8 };
    pub const W8A8: QuantRegime = QuantRegime { weight_bits: 8, act_bits: 8 };
    pub const W8A16: QuantRegime = QuantRegime { weight_bits: 8, act_bits: 16 };
    pub const W16A16: QuantRegime = QuantRegime { weight_bits: 16, act_bits: 16 };

    /// The four regimes swept by default.
    pub const DEFAULT_SWEEP: [QuantRegime; 4] =
        [QuantRegime::W4A4, QuantRegime::W4A8, QuantRegime::W8A8, QuantRegime::W8A16];

    pub fn new(weight_bits: u32, act_bits: u32) -> Result<QuantRegime> {
        let r = QuantRegime { weight_bits, act_bits };
        if QuantRegime::DEFAULT_SWEEP.contains(&r) || r == QuantRegime::W16A16 {
            Ok(r)
        } else {
            Err(config_err!("unsupported regime {r}"))
        }
    }
}

impl fmt::Display for QuantRegime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "w{}a{}", self.weight_bits, self.act_bits)
    }
}

impl FromStr for QuantRegime {
    type Err = Error;

    fn from_str(s: &str) -> Result<QuantRegime> {
        let bad = || config_err!("cannot parse regime {s:?} (expected wXaY)");
        let rest = s.trim().strip_prefix('w').ok_or_else(bad)?;
        let (w, a) = rest.split_once('a').ok_or_else(bad)?;
        QuantRegime::new(w.parse().map_err(|_| bad())?, a.parse().map_err(|_| bad())?)
    }
}

impl TryFrom<String> for QuantRegime {
    type Error = Error;
    fn try_from(s: String) -> Result<QuantRegime> {
        s.parse()
    }
}

impl From<QuantRegime> for String {
    fn from(r: QuantRegime) -> String {
        r.to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn asym(s: f64, z: u32, b: u32) -> QuantizerParams {
        QuantizerParams::asymmetric(s, z, b).unwrap()
    }

    #[test]
    fn quantize_examples() {
        assert_eq!(quantize(&[0.0], &asym(1.0, 0, 8)), vec![0]);
        assert_eq!(quantize(&[2.7], &asym(0.5, 0, 4)), vec![5]);
        assert_eq!(quantize(&[10.0], &asym(0.5, 0, 4)), vec![15]);
    }

    #[test]
    fn ties_round_away_from_zero() {
        let p = asym(1.0, 8, 4);
        assert_eq!(quantize(&[2.5, -2.5], &p), vec![11, 5]);
    }

    #[test]
    fn dequantize_examples() {
        let p = asym(0.25, 8, 4);
        assert_eq!(dequantize(&[8], &p).unwrap(), vec![0.0]);
        assert_eq!(dequantize(&[4], &p).unwrap(), vec![-1.0]);
        assert!(matches!(dequantize(&[16], &p), Err(Error::Contract(_))));
        let aligned = 0.25 * 3.0;
        assert_eq!(dequantize(&quantize(&[aligned], &p), &p).unwrap(), vec![aligned]);
    }

    #[test]
    fn params_validation() {
        assert!(QuantizerParams::new(0.0, 0, 8, false).is_err());
        assert!(QuantizerParams::new(1.0, 256, 8, false).is_err());
        assert!(QuantizerParams::new(1.0, 0, 8, true).is_err());
        assert!(QuantizerParams::new(1.0, 0, 5, false).is_err());
        let p = QuantizerParams::symmetric(0.1, 8).unwrap();
        assert_eq!(p.zero_point, 128);
        assert!(p.q_min() <= 0.0 && p.q_max() >= 0.0);
    }

    #[test]
    fn ste_passes_gradient_inside_and_blocks_outside() {
        let p = asym(0.5, 2, 4); // range [-1, 6.5]
        let x = Tensor::new(vec![-3.0, 0.3, 2.2, 9.0], &[4]).unwrap().requires_grad();
        let up = Tensor::new(vec![1.0, 2.0, 3.0, 4.0], &[4]).unwrap();
        fake_quant(&x, &p).mul(&up).unwrap().sum().backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![0.0, 2.0, 3.0, 0.0]);
    }

    #[test]
    fn lsq_scale_gradient_closed_form() {
        let x = Tensor::new(vec![0.26, -0.9, 3.0], &[3]).unwrap();
        let s = Tensor::new(vec![0.2], &[1]).unwrap().requires_grad();
        let z = Tensor::new(vec![3.0], &[1]).unwrap().requires_grad();
        // 4-bit, z = 3: range [-0.6, 2.4]
        let y = fake_quant_learnable(&x, &s, &z, 4, false, ScaleGradient::Lsq).unwrap();
        y.sum().backward().unwrap();
        let g = 1.0 / (3.0f64 * 12.0).sqrt();
        let inside = (0.26f64 / 0.2).round() - 0.26 / 0.2; // 1 - 1.3
        let expected_s = (inside + (0.0 - 3.0) + (15.0 - 3.0)) * g;
        assert!((s.grad().unwrap()[0] - expected_s).abs() < 1e-12);
        let expected_z = (-0.2 - 0.2) * g;
        assert!((z.grad().unwrap()[0] - expected_z).abs() < 1e-12);
    }

    #[test]
    fn regime_parsing() {
        assert_eq!("w4a8".parse::<QuantRegime>().unwrap(), QuantRegime::W4A8);
        assert_eq!(QuantRegime::W8A16.to_string(), "w8a16");
        assert!("w4a16".parse::<QuantRegime>().is_err());
        assert!("8a8".parse::<QuantRegime>().is_err());
    }
}
