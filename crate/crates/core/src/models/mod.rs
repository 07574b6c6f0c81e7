//! Neural surrogates for the time-stepping operator.
//!
//! Parameters live in a flat, ordered store of named buffers shared behind
//! `Arc`, so a model can be read from several threads. A forward pass first
//! binds the store into graph leaves ([`Model::bind`]) and then runs on the
//! bound tensors. Every multiplication-bearing layer is listed by
//! [`Model::layers`] and executes inside a profiler scope of the same name.

mod fno;
mod unet;

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{config_err, dim_err, Error, Result};
use crate::quant::{fake_quant_learnable, LayerQuant};
use crate::rescale::ScaleSpec;
use crate::tensor::profile::scoped;
use crate::tensor::{ComplexTensor, Padding, Tensor};

pub use fno::spectral_conv;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Architecture {
    Fno1d,
    Unet1d,
}

impl Architecture {
    /// Grid sizes must be a multiple of this (FNO additionally needs a power of two).
    pub fn size_multiple(self) -> usize {
        match self {
            Architecture::Fno1d => 1,
            Architecture::Unet1d => 1 << unet::DEPTH,
        }
    }

    pub fn supports_size(self, n: usize) -> bool {
        match self {
            Architecture::Fno1d => n >= 2 && n.is_power_of_two(),
            Architecture::Unet1d => n >= self.size_multiple() && n % self.size_multiple() == 0,
        }
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Architecture::Fno1d => "fno1d",
            Architecture::Unet1d => "unet1d",
        })
    }
}

/// Architecture description. Input channels are `input_steps * in_fields`,
/// output channels `output_steps * out_fields`, both time-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub architecture: Architecture,
    /// Fourier layers (FNO). The UNet depth is fixed.
    pub layers: usize,
    /// FNO width or UNet hidden channels at the finest level.
    pub width: usize,
    /// Retained Fourier modes (FNO only).
    pub modes: usize,
    pub in_fields: usize,
    pub out_fields: usize,
    pub input_steps: usize,
    pub output_steps: usize,
    /// Network grid size.
    pub grid: usize,
    /// Hidden width of the FNO projection head.
    #[serde(default = "default_projection")]
    pub projection: usize,
}

fn default_projection() -> usize {
    128
}

impl ModelSpec {
    pub fn fno1d(fields: usize, input_steps: usize, output_steps: usize, grid: usize) -> ModelSpec {
        ModelSpec {
            architecture: Architecture::Fno1d,
            layers: 4,
            width: 128,
            modes: 16,
            in_fields: fields,
            out_fields: fields,
            input_steps,
            output_steps,
            grid,
            projection: default_projection(),
        }
    }

    pub fn unet1d(fields: usize, input_steps: usize, output_steps: usize, grid: usize) -> ModelSpec {
        ModelSpec {
            architecture: Architecture::Unet1d,
            layers: unet::DEPTH,
            width: 8,
            modes: 0,
            in_fields: fields,
            out_fields: fields,
            input_steps,
            output_steps,
            grid,
            projection: 0,
        }
    }

    pub fn in_channels(&self) -> usize {
        self.input_steps * self.in_fields
    }

    pub fn out_channels(&self) -> usize {
        self.output_steps * self.out_fields
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("width", self.width),
            ("in_fields", self.in_fields),
            ("out_fields", self.out_fields),
            ("input_steps", self.input_steps),
            ("output_steps", self.output_steps),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(config_err!("model {name} must be positive"));
        }
        if !self.architecture.supports_size(self.grid) {
            return Err(config_err!("{} does not support grid size {}", self.architecture, self.grid));
        }
        if self.architecture == Architecture::Fno1d {
            if self.layers == 0 || self.modes == 0 || self.projection == 0 {
                return Err(config_err!("fno1d needs positive layers, modes and projection width"));
            }
            if self.modes > self.grid / 2 + 1 {
                return Err(config_err!(
                    "{} modes exceed the {} available on a grid of {}",
                    self.modes,
                    self.grid / 2 + 1,
                    self.grid
                ));
            }
        }
        Ok(())
    }

    /// Trainable parameter count, without quantizer ranges.
    ///
    /// FNO: `(C+1)W + W` lift, `L (2 W^2 m + W^2 + W)` Fourier layers,
    /// `W P + P` and `P O + O` for the projection head.
    pub fn param_count(&self) -> usize {
        let (c, o) = (self.in_channels(), self.out_channels());
        match self.architecture {
            Architecture::Fno1d => {
                let (w, m, p) = (self.width, self.modes, self.projection);
                (c + 1) * w + w + self.layers * (2 * w * w * m + w * w + w) + (w * p + p) + (p * o + o)
            }
            Architecture::Unet1d => unet::param_count(c, o, self.width),
        }
    }
}

/// One named parameter buffer.
#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Arc<Vec<f64>>,
}

impl Param {
    /// Learnable quantizer range rather than a network weight.
    pub fn is_quantizer(&self) -> bool {
        self.name.contains(".wq.") || self.name.contains(".aq.")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum LayerKind {
    /// Convolution; kernel size 1 is a pointwise linear layer.
    Conv { cin: usize, cout: usize, kernel: usize, stride: usize },
    /// Complex channel mixing of the lowest `modes` Fourier coefficients.
    Spectral { cin: usize, cout: usize, modes: usize },
}

/// A multiplication-bearing layer.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerInfo {
    pub name: String,
    pub kind: LayerKind,
    pub bias: bool,
    /// Spatial points per output channel, at the network grid.
    pub out_points: usize,
}

impl LayerInfo {
    pub fn weight_name(&self) -> String {
        format!("{}.weight", self.name)
    }

    pub fn bias_name(&self) -> String {
        format!("{}.bias", self.name)
    }
}

/// Arithmetic outside the enumerated layers, per forward pass.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AuxOp {
    Rfft { n: usize, channels: usize },
    Irfft { n: usize, channels: usize },
    Gelu { elements: usize },
    GroupNorm { elements: usize },
    Add { elements: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub spec: ModelSpec,
    params: Vec<Param>,
    index: BTreeMap<String, usize>,
    layers: Vec<LayerInfo>,
    aux: Vec<(String, AuxOp)>,
    quant: BTreeMap<String, LayerQuant>,
    scale: ScaleSpec,
}

/// Deterministic initialization: FNO spectral weights `U[0,1) / (C_in C_out)`,
/// convolutions and biases `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`, norms at
/// unit gain and zero shift.
pub fn build_model(spec: &ModelSpec, seed: u64) -> Result<Model> {
    spec.validate()?;
    let mut b = Builder { rng: ChaCha8Rng::seed_from_u64(seed), params: Vec::new(), layers: Vec::new(), aux: Vec::new() };
    match spec.architecture {
        Architecture::Fno1d => fno::declare(spec, &mut b),
        Architecture::Unet1d => unet::declare(spec, &mut b),
    }
    let index = b.params.iter().enumerate().map(|(i, p)| (p.name.clone(), i)).collect();
    Ok(Model {
        spec: spec.clone(),
        params: b.params,
        index,
        layers: b.layers,
        aux: b.aux,
        quant: BTreeMap::new(),
        scale: ScaleSpec::identity(spec.grid),
    })
}

pub(crate) struct Builder {
    rng: ChaCha8Rng,
    params: Vec<Param>,
    layers: Vec<LayerInfo>,
    aux: Vec<(String, AuxOp)>,
}

impl Builder {
    fn push(&mut self, name: String, shape: Vec<usize>, data: Vec<f64>) {
        self.params.push(Param { name, shape, data: Arc::new(data) });
    }

    fn uniform(&mut self, n: usize, bound: f64) -> Vec<f64> {
        (0..n).map(|_| bound * (2.0 * self.rng.random::<f64>() - 1.0)).collect()
    }

    pub(crate) fn conv(&mut self, name: &str, cin: usize, cout: usize, kernel: usize, stride: usize, bias: bool, out_points: usize) {
        let bound = 1.0 / ((cin * kernel) as f64).sqrt();
        let w = self.uniform(cout * cin * kernel, bound);
        self.push(format!("{name}.weight"), vec![cout, cin, kernel], w);
        if bias {
            let b = self.uniform(cout, bound);
            self.push(format!("{name}.bias"), vec![cout], b);
        }
        let kind = LayerKind::Conv { cin, cout, kernel, stride };
        self.layers.push(LayerInfo { name: name.into(), kind, bias, out_points });
    }

    pub(crate) fn spectral(&mut self, name: &str, cin: usize, cout: usize, modes: usize, n: usize) {
        let scale = 1.0 / (cin * cout) as f64;
        let w = (0..cin * cout * modes * 2).map(|_| scale * self.rng.random::<f64>()).collect();
        self.push(format!("{name}.weight"), vec![cin, cout, modes, 2], w);
        let kind = LayerKind::Spectral { cin, cout, modes };
        self.layers.push(LayerInfo { name: name.into(), kind, bias: false, out_points: n });
    }

    pub(crate) fn norm(&mut self, name: &str, channels: usize) {
        self.push(format!("{name}.weight"), vec![channels], vec![1.0; channels]);
        self.push(format!("{name}.bias"), vec![channels], vec![0.0; channels]);
    }

    pub(crate) fn aux(&mut self, name: &str, op: AuxOp) {
        self.aux.push((name.into(), op));
    }
}

impl Model {
    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn param(&self, name: &str) -> Option<&Param> {
        self.index.get(name).map(|&i| &self.params[i])
    }

    /// Network weights only (quantizer ranges excluded).
    pub fn param_count(&self) -> usize {
        self.params.iter().filter(|p| !p.is_quantizer()).map(|p| p.data.len()).sum()
    }

    pub fn set_param(&mut self, name: &str, data: Vec<f64>) -> Result<()> {
        let i = *self.index.get(name).ok_or_else(|| Error::Usage(format!("no parameter named {name}")))?;
        let p = &mut self.params[i];
        if data.len() != p.data.len() {
            return Err(dim_err!("parameter {name} has {} values, got {}", p.data.len(), data.len()));
        }
        p.data = Arc::new(data);
        Ok(())
    }

    pub(crate) fn insert_param(&mut self, name: String, shape: Vec<usize>, data: Vec<f64>) {
        match self.index.get(&name) {
            Some(&i) => self.params[i] = Param { name, shape, data: Arc::new(data) },
            None => {
                self.index.insert(name.clone(), self.params.len());
                self.params.push(Param { name, shape, data: Arc::new(data) });
            }
        }
    }

    pub(crate) fn remove_quantizer_params(&mut self) {
        self.params.retain(|p| !p.is_quantizer());
        self.index = self.params.iter().enumerate().map(|(i, p)| (p.name.clone(), i)).collect();
    }

    /// Multiplication-bearing layers in execution order.
    pub fn layers(&self) -> &[LayerInfo] {
        &self.layers
    }

    pub fn aux_ops(&self) -> &[(String, AuxOp)] {
        &self.aux
    }

    pub fn quantizers(&self) -> &BTreeMap<String, LayerQuant> {
        &self.quant
    }

    pub(crate) fn set_quantizers(&mut self, quant: BTreeMap<String, LayerQuant>) {
        self.quant = quant;
    }

    pub fn is_quantized(&self) -> bool {
        !self.quant.is_empty()
    }

    pub fn set_quantizers_enabled(&mut self, enabled: bool) {
        self.quant.values_mut().for_each(|q| q.enabled = enabled);
    }

    /// Keeps learnable quantizer ranges valid after an optimizer update:
    /// scales stay positive, zero-points inside the code range.
    pub fn project_quantizer_params(&mut self) {
        for (layer, q) in &self.quant {
            for (suffix, hi) in [("wq.scale", f64::INFINITY), ("aq.scale", f64::INFINITY), ("aq.zero", ((1u64 << q.act_bits) - 1) as f64)] {
                let name = format!("{layer}.{suffix}");
                if let Some(&i) = self.index.get(&name) {
                    let v = self.params[i].data[0];
                    let fixed = if suffix.ends_with("zero") { v.clamp(0.0, hi) } else { v.max(1e-12) };
                    if fixed != v {
                        self.params[i].data = Arc::new(vec![fixed]);
                    }
                }
            }
        }
    }

    pub fn scale(&self) -> &ScaleSpec {
        &self.scale
    }

    /// Runs the network on `scale.network_size` points while inputs and
    /// outputs stay on `scale.input_size`.
    pub fn with_scale(mut self, scale: ScaleSpec) -> Result<Model> {
        if scale.network_size != self.spec.grid {
            return Err(config_err!(
                "scale targets a {}-point network grid but the model is built for {}",
                scale.network_size,
                self.spec.grid
            ));
        }
        self.scale = scale;
        Ok(self)
    }

    /// Graph leaves for every parameter; `trainable` makes them require grad.
    pub fn bind(&self, trainable: bool) -> Bound<'_> {
        let tensors = self
            .params
            .iter()
            .map(|p| Tensor::from_shared(p.data.clone(), &p.shape, trainable).expect("parameter shapes are validated at build"))
            .collect();
        Bound { model: self, tensors }
    }
}

/// Observer of layer inputs: called with the layer name and the tensor the
/// layer's multiplications consume (before any input quantizer).
pub type Observer<'a> = &'a mut dyn FnMut(&str, &Tensor);

/// A model whose parameters are graph leaves.
pub struct Bound<'m> {
    model: &'m Model,
    tensors: Vec<Tensor>,
}

impl<'m> Bound<'m> {
    pub fn model(&self) -> &'m Model {
        self.model
    }

    pub fn param(&self, name: &str) -> &Tensor {
        let i = self.model.index.get(name).unwrap_or_else(|| panic!("no parameter named {name}"));
        &self.tensors[*i]
    }

    /// `(name, leaf)` pairs in store order.
    pub fn leaves(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.model.params.iter().map(|p| p.name.as_str()).zip(self.tensors.iter())
    }

    /// Data grid to network grid (no-op without scaling).
    pub fn encode(&self, x: &Tensor) -> Result<Tensor> {
        if self.model.scale.is_identity() {
            Ok(x.clone())
        } else {
            self.model.scale.downsample(x)
        }
    }

    /// Network grid to data grid (no-op without scaling).
    pub fn decode(&self, y: &Tensor) -> Result<Tensor> {
        if self.model.scale.is_identity() {
            Ok(y.clone())
        } else {
            self.model.scale.upsample(y)
        }
    }

    /// One network application on the network grid: `[B, C_in, N] -> [B, C_out, N]`.
    pub fn step(&self, x: &Tensor) -> Result<Tensor> {
        self.step_observed(x, &mut |_, _| {})
    }

    pub fn step_observed(&self, x: &Tensor, obs: Observer<'_>) -> Result<Tensor> {
        let spec = &self.model.spec;
        match x.shape() {
            [_, c, n] if *c == spec.in_channels() && *n == spec.grid => {}
            s => {
                return Err(dim_err!(
                    "{} expects input [B, {}, {}], got {s:?}",
                    spec.architecture,
                    spec.in_channels(),
                    spec.grid
                ))
            }
        }
        match spec.architecture {
            Architecture::Fno1d => fno::forward(self, x, obs),
            Architecture::Unet1d => unet::forward(self, x, obs),
        }
    }

    /// Single application on the data grid: encode, step, decode.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.decode(&self.step(&self.encode(x)?)?)
    }

    fn active_quant(&self, layer: &str) -> Option<&LayerQuant> {
        self.model.quant.get(layer).filter(|q| q.enabled)
    }

    fn quant_input(&self, layer: &str, x: &Tensor) -> Result<Tensor> {
        match self.active_quant(layer) {
            Some(q) => fake_quant_learnable(
                x,
                self.param(&format!("{layer}.aq.scale")),
                self.param(&format!("{layer}.aq.zero")),
                q.act_bits,
                false,
                q.rule,
            ),
            None => Ok(x.clone()),
        }
    }

    fn quant_weight(&self, layer: &str) -> Result<Tensor> {
        let w = self.param(&format!("{layer}.weight"));
        match self.active_quant(layer) {
            Some(q) => {
                let s = self.param(&format!("{layer}.wq.scale"));
                fake_quant_learnable(w, s, s, q.weight_bits, true, q.rule)
            }
            None => Ok(w.clone()),
        }
    }

    /// Convolution layer `name` (kernel size and stride from its weight/enumeration).
    pub(crate) fn conv(&self, name: &str, x: &Tensor, padding: Padding, obs: Observer<'_>) -> Result<Tensor> {
        scoped(name, || {
            obs(name, x);
            let stride = self
                .model
                .layers
                .iter()
                .find(|l| l.name == name)
                .map(|l| match l.kind {
                    LayerKind::Conv { stride, .. } => stride,
                    LayerKind::Spectral { .. } => 1,
                })
                .unwrap_or(1);
            let xq = self.quant_input(name, x)?;
            let w = self.quant_weight(name)?;
            let bias_name = format!("{name}.bias");
            let bias = self.model.index.contains_key(&bias_name).then(|| self.param(&bias_name));
            xq.conv1d_strided(&w, bias, padding, stride)
        })
    }

    /// Fourier layer `name`: rfft, truncate, mix, irfft.
    pub(crate) fn spectral(&self, name: &str, x: &Tensor, modes: usize, obs: Observer<'_>) -> Result<Tensor> {
        scoped(name, || {
            let n = *x.shape().last().unwrap();
            let coeffs = x.rfft()?.truncate(modes)?;
            obs(name, coeffs.as_real());
            let cq = ComplexTensor::from_interleaved(self.quant_input(name, coeffs.as_real())?)?;
            let w = ComplexTensor::from_interleaved(self.quant_weight(name)?)?;
            cq.channel_mix(&w)?.irfft(n)
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_fno() -> ModelSpec {
        ModelSpec { layers: 4, width: 8, modes: 4, ..ModelSpec::fno1d(1, 1, 1, 16) }
    }

    #[test]
    fn fno_param_count_matches_formula() {
        let spec = small_fno();
        // lift 2*8+8, 4 * (2*64*4 + 64 + 8), head 8*128+128, 128+1
        assert_eq!(spec.param_count(), 24 + 4 * 584 + 1152 + 129);
        assert_eq!(spec.param_count(), 3641);
        assert_eq!(build_model(&spec, 0).unwrap().param_count(), 3641);
    }

    #[test]
    fn unet_param_count_matches_build() {
        let spec = ModelSpec::unet1d(1, 5, 5, 64);
        assert_eq!(build_model(&spec, 0).unwrap().param_count(), spec.param_count());
    }

    #[test]
    fn same_seed_same_params() {
        let a = build_model(&small_fno(), 7).unwrap();
        let b = build_model(&small_fno(), 7).unwrap();
        let c = build_model(&small_fno(), 8).unwrap();
        assert_eq!(a.params(), b.params());
        assert_ne!(a.params(), c.params());
    }

    #[test]
    fn too_many_modes_rejected() {
        let spec = ModelSpec { modes: 40, ..ModelSpec::fno1d(1, 1, 1, 64) };
        assert!(matches!(build_model(&spec, 0), Err(Error::Config(_))));
    }

    #[test]
    fn unet_rejects_indivisible_grid() {
        assert!(matches!(build_model(&ModelSpec::unet1d(1, 1, 1, 60), 0), Err(Error::Config(_))));
    }

    #[test]
    fn zero_head_gives_zero_output() {
        let mut m = build_model(&small_fno(), 1).unwrap();
        for name in ["fc2.weight", "fc2.bias"] {
            let n = m.param(name).unwrap().data.len();
            m.set_param(name, vec![0.0; n]).unwrap();
        }
        let y = m.bind(false).step(&Tensor::zeros(&[2, 1, 16])).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn wrong_channel_count_is_dimension_error() {
        let m = build_model(&small_fno(), 1).unwrap();
        assert!(matches!(m.bind(false).step(&Tensor::zeros(&[1, 2, 16])), Err(Error::Dimension(_))));
    }

    #[test]
    fn unet_shape_contract_and_determinism() {
        let m = build_model(&ModelSpec { out_fields: 1, ..ModelSpec::unet1d(1, 5, 1, 64) }, 3).unwrap();
        let x = Tensor::new((0..5 * 64).map(|i| (i as f64 * 0.1).sin()).collect(), &[1, 5, 64]).unwrap();
        let b = m.bind(false);
        let y1 = b.step(&x).unwrap();
        let y2 = b.step(&x).unwrap();
        assert_eq!(y1.shape(), &[1, 1, 64]);
        assert_eq!(y1.to_vec(), y2.to_vec());
    }

    #[test]
    fn fno_responds_to_input_shift() {
        let m = build_model(&small_fno(), 2).unwrap();
        let b = m.bind(false);
        let x = Tensor::new((0..16).map(|i| (i as f64).cos()).collect(), &[1, 1, 16]).unwrap();
        let y1 = b.step(&x).unwrap();
        let y2 = b.step(&x.add(&Tensor::scalar(1.0)).unwrap()).unwrap();
        assert_ne!(y1.to_vec(), y2.to_vec());
    }
}
