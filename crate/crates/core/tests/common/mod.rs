//! Shared oracles for the integration tests.
#![allow(dead_code)]

use qpde::models::{build_model, spectral_conv, Model, ModelSpec};
use qpde::quant::{fake_quant_learnable, ScaleGradient};
use qpde::rescale::{resize_bilinear, resize_linear};
use qpde::tensor::Padding;
use qpde::{ComplexTensor, Result, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-6;

pub struct GradCase {
    pub name: &'static str,
    pub inputs: Vec<Tensor>,
    pub f: Box<dyn Fn(&[Tensor]) -> Result<Tensor>>,
}

fn case(name: &'static str, inputs: Vec<Tensor>, f: impl Fn(&[Tensor]) -> Result<Tensor> + 'static) -> GradCase {
    GradCase { name, inputs, f: Box::new(f) }
}

pub fn random(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new((0..n).map(|_| rng.random_range(lo..hi)).collect(), shape).unwrap()
}

/// Values with magnitude in `[0.1, 1]` and random sign (kink-free for relu).
fn away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    let v = (0..n)
        .map(|_| {
            let m = rng.random_range(0.1..1.0);
            if rng.random::<bool>() {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::new(v, shape).unwrap()
}

/// Inputs whose codes stay put under tiny perturbations of the scale.
fn quant_inputs(rng: &mut ChaCha8Rng, n: usize, s: f64, z: f64, levels: f64) -> Tensor {
    let v = (0..n)
        .map(|i| {
            if i % 7 == 0 {
                // clipped on either side
                if i % 2 == 0 {
                    s * (levels - z + 3.3)
                } else {
                    -s * (z + 2.6)
                }
            } else {
                let k = rng.random_range(-z + 1.0..levels - z - 1.0).round();
                s * (k + rng.random_range(-0.35..0.35))
            }
        })
        .collect();
    Tensor::new(v, &[n]).unwrap()
}

pub fn gradient_cases() -> Vec<GradCase> {
    let mut r = ChaCha8Rng::seed_from_u64(42);
    let rng = &mut r;
    vec![
        case("add (broadcast)", vec![random(rng, &[3, 4], -1.0, 1.0), random(rng, &[4], -1.0, 1.0)], |t| t[0].add(&t[1])),
        case("sub", vec![random(rng, &[3, 4], -1.0, 1.0), random(rng, &[3, 4], -1.0, 1.0)], |t| t[0].sub(&t[1])),
        case("mul (broadcast)", vec![random(rng, &[3, 4], -1.0, 1.0), random(rng, &[4], -1.0, 1.0)], |t| t[0].mul(&t[1])),
        case("scale", vec![random(rng, &[5], -1.0, 1.0)], |t| Ok(t[0].scale(-2.5))),
        case("square", vec![random(rng, &[5], -1.0, 1.0)], |t| Ok(t[0].square())),
        case("sqrt", vec![random(rng, &[5], 0.5, 2.0)], |t| Ok(t[0].sqrt())),
        case("relu", vec![away_from_zero(rng, &[12])], |t| Ok(t[0].relu())),
        case("gelu", vec![random(rng, &[12], -3.0, 3.0)], |t| Ok(t[0].gelu())),
        case("sum", vec![random(rng, &[2, 3], -1.0, 1.0)], |t| Ok(t[0].sum())),
        case("mean", vec![random(rng, &[2, 3], -1.0, 1.0)], |t| Ok(t[0].mean())),
        case("reshape", vec![random(rng, &[2, 6], -1.0, 1.0)], |t| t[0].reshape(&[3, 4])),
        case("narrow", vec![random(rng, &[2, 6, 3], -1.0, 1.0)], |t| t[0].narrow(1, 2, 3)),
        case("concat", vec![random(rng, &[2, 2, 3], -1.0, 1.0), random(rng, &[2, 4, 3], -1.0, 1.0)], |t| {
            Tensor::concat(&[&t[0], &t[1]], 1)
        }),
        case(
            "group_norm",
            vec![random(rng, &[2, 4, 8], -1.0, 1.0), random(rng, &[4], 0.5, 1.5), random(rng, &[4], -0.5, 0.5)],
            |t| t[0].group_norm(2, &t[1], &t[2], 1e-5),
        ),
        case("matmul", vec![random(rng, &[3, 5], -1.0, 1.0), random(rng, &[5, 2], -1.0, 1.0)], |t| t[0].matmul(&t[1])),
        case(
            "conv1d zero padding",
            vec![random(rng, &[2, 3, 8], -1.0, 1.0), random(rng, &[4, 3, 3], -1.0, 1.0), random(rng, &[4], -1.0, 1.0)],
            |t| t[0].conv1d(&t[1], Some(&t[2]), Padding::Zero),
        ),
        case(
            "conv1d circular padding",
            vec![random(rng, &[2, 3, 8], -1.0, 1.0), random(rng, &[4, 3, 3], -1.0, 1.0)],
            |t| t[0].conv1d(&t[1], None, Padding::Circular),
        ),
        case(
            "conv1d stride 2",
            vec![random(rng, &[2, 3, 8], -1.0, 1.0), random(rng, &[2, 3, 3], -1.0, 1.0), random(rng, &[2], -1.0, 1.0)],
            |t| t[0].conv1d_strided(&t[1], Some(&t[2]), Padding::Circular, 2),
        ),
        case("upsample_nearest", vec![random(rng, &[2, 3, 4], -1.0, 1.0)], |t| t[0].upsample_nearest(2)),
        case("rfft", vec![random(rng, &[2, 3, 16], -1.0, 1.0)], |t| Ok(t[0].rfft()?.as_real().clone())),
        case("irfft", vec![random(rng, &[2, 3, 5, 2], -1.0, 1.0)], |t| ComplexTensor::from_interleaved(t[0].clone())?.irfft(16)),
        case("irfft all bins", vec![random(rng, &[1, 2, 9, 2], -1.0, 1.0)], |t| ComplexTensor::from_interleaved(t[0].clone())?.irfft(16)),
        case("channel_mix", vec![random(rng, &[2, 3, 4, 2], -1.0, 1.0), random(rng, &[3, 5, 4, 2], -1.0, 1.0)], |t| {
            let x = ComplexTensor::from_interleaved(t[0].clone())?;
            Ok(x.channel_mix(&ComplexTensor::from_interleaved(t[1].clone())?)?.as_real().clone())
        }),
        case("spectral_conv", vec![random(rng, &[2, 3, 16], -1.0, 1.0), random(rng, &[3, 2, 5, 2], -1.0, 1.0)], |t| {
            spectral_conv(&t[0], &t[1], 5)
        }),
        case("resize_linear up", vec![random(rng, &[2, 10], -1.0, 1.0)], |t| resize_linear(&t[0], 17, false)),
        case("resize_linear down", vec![random(rng, &[2, 17], -1.0, 1.0)], |t| resize_linear(&t[0], 6, false)),
        case("resize_linear periodic", vec![random(rng, &[2, 8], -1.0, 1.0)], |t| resize_linear(&t[0], 20, true)),
        case("resize_bilinear", vec![random(rng, &[2, 6, 7], -1.0, 1.0)], |t| resize_bilinear(&t[0], (9, 5), false)),
        case("resize_bilinear periodic", vec![random(rng, &[1, 8, 8], -1.0, 1.0)], |t| resize_bilinear(&t[0], (4, 12), true)),
        case(
            "fake_quant asymmetric scale",
            vec![quant_inputs(rng, 40, 0.05, 100.0, 255.0), Tensor::new(vec![0.05], &[1]).unwrap()],
            |t| fake_quant_learnable(&t[0].detach(), &t[1], &Tensor::new(vec![100.0], &[1])?, 8, false, ScaleGradient::Exact),
        ),
        case(
            "fake_quant symmetric scale",
            vec![quant_inputs(rng, 40, 0.3, 8.0, 15.0), Tensor::new(vec![0.3], &[1]).unwrap()],
            |t| fake_quant_learnable(&t[0].detach(), &t[1], &t[1], 4, true, ScaleGradient::Exact),
        ),
        case(
            "fake_quant clipped scale",
            vec![Tensor::new(vec![0.31, -0.77, 4.0], &[3]).unwrap(), Tensor::new(vec![0.1], &[1]).unwrap()],
            |t| fake_quant_learnable(&t[0].detach(), &t[1], &Tensor::new(vec![8.0], &[1])?, 4, false, ScaleGradient::Exact),
        ),
    ]
}

fn weighted_loss(y: &Tensor, w: &[f64]) -> f64 {
    y.data().iter().zip(w).map(|(a, b)| a * b).sum()
}

fn perturbed(inputs: &[Tensor], dirs: &[Vec<f64>], h: f64) -> Vec<Tensor> {
    inputs
        .iter()
        .zip(dirs)
        .map(|(t, d)| Tensor::new(t.data().iter().zip(d).map(|(x, v)| x + h * v).collect(), t.shape()).unwrap())
        .collect()
}

fn relative(ad: f64, fd: f64) -> f64 {
    (ad - fd).abs() / ad.abs().max(fd.abs()).max(1e-7)
}

/// Compares reverse-mode directional derivatives of `sum(w * f(x))` with
/// central differences along `probes` random directions. Returns the worst
/// relative error.
pub fn check_gradient(case: &GradCase, probes: usize, tol: f64) -> std::result::Result<f64, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let leaves: Vec<Tensor> = case.inputs.iter().map(|t| Tensor::new(t.to_vec(), t.shape()).unwrap().requires_grad()).collect();
    let y = (case.f)(&leaves).map_err(|e| e.to_string())?;
    let w: Vec<f64> = (0..y.numel()).map(|_| rng.random_range(-1.0..1.0)).collect();
    let wt = Tensor::new(w.clone(), y.shape()).unwrap();
    y.mul(&wt).map_err(|e| e.to_string())?.sum().backward().map_err(|e| e.to_string())?;
    let grads: Vec<Vec<f64>> = leaves.iter().map(|l| l.grad().unwrap_or_else(|| vec![0.0; l.numel()])).collect();
    let mut worst: f64 = 0.0;
    for probe in 0..probes {
        let dirs: Vec<Vec<f64>> = case.inputs.iter().map(|t| (0..t.numel()).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let ad: f64 = grads.iter().zip(&dirs).map(|(g, d)| g.iter().zip(d).map(|(a, b)| a * b).sum::<f64>()).sum();
        let plus = (case.f)(&perturbed(&case.inputs, &dirs, FD_STEP)).map_err(|e| e.to_string())?;
        let minus = (case.f)(&perturbed(&case.inputs, &dirs, -FD_STEP)).map_err(|e| e.to_string())?;
        let fd = (weighted_loss(&plus, &w) - weighted_loss(&minus, &w)) / (2.0 * FD_STEP);
        let err = relative(ad, fd);
        if err > tol {
            return Err(format!("probe {probe}: reverse mode {ad:e}, central difference {fd:e}"));
        }
        worst = worst.max(err);
    }
    Ok(worst)
}

/// Directional derivative check of `sum(w * step(x))` with respect to all
/// parameters and the input of `model`.
pub fn check_model_gradient(model: &Model, x: &Tensor, probes: usize, tol: f64) -> std::result::Result<f64, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let bound = model.bind(true);
    let xl = Tensor::new(x.to_vec(), x.shape()).unwrap().requires_grad();
    let y = bound.step(&xl).map_err(|e| e.to_string())?;
    let w: Vec<f64> = (0..y.numel()).map(|_| rng.random_range(-1.0..1.0)).collect();
    y.mul(&Tensor::new(w.clone(), y.shape()).unwrap()).unwrap().sum().backward().map_err(|e| e.to_string())?;
    let pgrads: Vec<Vec<f64>> = bound.leaves().map(|(_, t)| t.grad().unwrap_or_else(|| vec![0.0; t.numel()])).collect();
    let xgrad = xl.grad().unwrap();
    drop(bound);
    let eval = |h: f64, pd: &[Vec<f64>], xd: &[f64]| -> f64 {
        let mut m = model.clone();
        for (p, d) in model.params().iter().zip(pd) {
            m.set_param(&p.name, p.data.iter().zip(d).map(|(a, b)| a + h * b).collect()).unwrap();
        }
        let xp = Tensor::new(x.data().iter().zip(xd).map(|(a, b)| a + h * b).collect(), x.shape()).unwrap();
        weighted_loss(&m.bind(false).step(&xp).unwrap(), &w)
    };
    let mut worst: f64 = 0.0;
    for probe in 0..probes {
        let pd: Vec<Vec<f64>> = model.params().iter().map(|p| (0..p.data.len()).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let xd: Vec<f64> = (0..x.numel()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let ad: f64 = pgrads.iter().zip(&pd).map(|(g, d)| g.iter().zip(d).map(|(a, b)| a * b).sum::<f64>()).sum::<f64>()
            + xgrad.iter().zip(&xd).map(|(a, b)| a * b).sum::<f64>();
        let fd = (eval(FD_STEP, &pd, &xd) - eval(-FD_STEP, &pd, &xd)) / (2.0 * FD_STEP);
        let err = relative(ad, fd);
        if err > tol {
            return Err(format!("probe {probe}: reverse mode {ad:e}, central difference {fd:e}"));
        }
        worst = worst.max(err);
    }
    Ok(worst)
}

pub fn model_gradient_checks(probes: usize, tol: f64) -> std::result::Result<usize, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let fno = ModelSpec { layers: 2, width: 6, modes: 4, projection: 8, ..ModelSpec::fno1d(1, 2, 2, 16) };
    let unet = ModelSpec { width: 4, ..ModelSpec::unet1d(1, 2, 1, 16) };
    for (label, spec) in [("fno1d", fno), ("unet1d", unet)] {
        let model = build_model(&spec, 1).map_err(|e| e.to_string())?;
        let x = random(&mut rng, &[2, spec.in_channels(), spec.grid], -1.0, 1.0);
        check_model_gradient(&model, &x, probes, tol).map_err(|e| format!("{label}: {e}"))?;
    }
    Ok(2)
}

/// O(n^2) non-dominated filter.
pub fn brute_force_front(points: &[(f64, f64)]) -> Vec<usize> {
    (0..points.len())
        .filter(|&i| {
            !points.iter().any(|q| {
                let p = points[i];
                q.0 <= p.0 && q.1 <= p.1 && (q.0 < p.0 || q.1 < p.1)
            })
        })
        .collect()
}
