//! Attaching calibrated quantizers to a model.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{calibrate_range, QuantRegime, ScaleGradient};
use crate::error::{config_err, Result};
use crate::models::Model;
use crate::tensor::Tensor;

/// Quantizer settings of one layer. The ranges themselves are model
/// parameters named `<layer>.wq.scale`, `<layer>.aq.scale` and
/// `<layer>.aq.zero`, so they can be trained and checkpointed like weights.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerQuant {
    pub weight_bits: u32,
    pub act_bits: u32,
    pub enabled: bool,
    pub rule: ScaleGradient,
}

/// Inputs seen by every enumerated layer for a batch on the data grid.
pub fn collect_layer_inputs(model: &Model, inputs: &Tensor) -> Result<BTreeMap<String, Vec<f64>>> {
    let mut seen: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    let bound = model.bind(false);
    let x = bound.encode(inputs)?;
    bound.step_observed(&x, &mut |name, t| {
        seen.entry(name.to_string()).or_default().extend_from_slice(t.data());
    })?;
    Ok(seen)
}

/// Quantizes every enumerated layer except the first and last: symmetric
/// `b_w`-bit weights calibrated on the weights themselves, asymmetric
/// `b_a`-bit inputs calibrated on the layer inputs produced by
/// `calibration` (a data-grid batch). Existing quantizers are replaced.
pub fn attach_quantizers(model: &Model, regime: QuantRegime, calibration: &Tensor) -> Result<Model> {
    let layers = model.layers();
    if layers.len() < 3 {
        return Err(config_err!(
            "model has {} quantizable layers; at least 3 are needed to exempt the first and last",
            layers.len()
        ));
    }
    let mut float = model.clone();
    float.remove_quantizer_params();
    float.set_quantizers(BTreeMap::new());
    let inputs = collect_layer_inputs(&float, calibration)?;

    let mut out = float.clone();
    let mut quant = BTreeMap::new();
    for layer in &layers[1..layers.len() - 1] {
        let w = float.param(&layer.weight_name()).expect("enumerated layers own a weight");
        let wq = calibrate_range(&w.data, regime.weight_bits, true);
        let samples = inputs.get(&layer.name).map(Vec::as_slice).unwrap_or(&[]);
        let aq = calibrate_range(samples, regime.act_bits, false);
        out.insert_param(format!("{}.wq.scale", layer.name), vec![1], vec![wq.scale]);
        out.insert_param(format!("{}.aq.scale", layer.name), vec![1], vec![aq.scale]);
        out.insert_param(format!("{}.aq.zero", layer.name), vec![1], vec![aq.zero_point as f64]);
        quant.insert(
            layer.name.clone(),
            LayerQuant { weight_bits: regime.weight_bits, act_bits: regime.act_bits, enabled: true, rule: ScaleGradient::Lsq },
        );
    }
    out.set_quantizers(quant);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{build_model, ModelSpec};

    fn model() -> Model {
        build_model(&ModelSpec { width: 8, modes: 4, projection: 16, ..ModelSpec::fno1d(1, 2, 1, 16) }, 5).unwrap()
    }

    fn batch() -> Tensor {
        Tensor::new((0..3 * 2 * 16).map(|i| ((i as f64) * 0.37).sin()).collect(), &[3, 2, 16]).unwrap()
    }

    #[test]
    fn first_and_last_exempt() {
        let q = attach_quantizers(&model(), QuantRegime::W8A8, &batch()).unwrap();
        let names: Vec<&String> = q.quantizers().keys().collect();
        assert!(!names.iter().any(|n| *n == "lift" || *n == "fc2"));
        assert!(names.iter().any(|n| *n == "spectral0") && names.iter().any(|n| *n == "fc1"));
        assert_eq!(names.len(), q.layers().len() - 2);
    }

    #[test]
    fn disabled_quantizers_are_bit_identical() {
        let m = model();
        let mut q = attach_quantizers(&m, QuantRegime::W4A4, &batch()).unwrap();
        q.set_quantizers_enabled(false);
        let a = m.bind(false).step(&batch()).unwrap();
        let b = q.bind(false).step(&batch()).unwrap();
        assert_eq!(a.to_vec(), b.to_vec());
    }

    #[test]
    fn sixteen_bit_is_close_to_float() {
        let m = model();
        let q = attach_quantizers(&m, QuantRegime::W16A16, &batch()).unwrap();
        let a = m.bind(false).step(&batch()).unwrap();
        let b = q.bind(false).step(&batch()).unwrap();
        let num: f64 = a.data().iter().zip(b.data()).map(|(x, y)| (x - y).powi(2)).sum();
        let den: f64 = a.data().iter().map(|x| x * x).sum();
        assert!(num / den < 1e-6, "relative error {}", num / den);
    }
}
