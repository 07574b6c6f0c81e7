//! Window sampling, recurrent rollout with temporal bundling, losses,
//! optimizer loop and quantization-aware fine-tuning.

mod adam;
mod checkpoint;

pub use adam::{Adam, Schedule};
pub use checkpoint::{Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datagen::{trajectory_seed, Dataset, Pde};
use crate::error::{config_err, dim_err, Error, Result};
use crate::models::{Bound, Model};
use crate::quant::{attach_quantizers, QuantRegime};
use crate::tensor::Tensor;

/// Gradient shards per batch. Fixed so results do not depend on the
/// number of worker threads.
pub const GRAD_SHARDS: usize = 8;
/// Share of the training trajectories used to calibrate quantizer ranges.
pub const CALIBRATION_FRACTION: f64 = 0.2;
/// Trajectories per validation chunk.
const EVAL_CHUNK: usize = 16;
const DARCY_EPS: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub qat_epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub qat_learning_rate: f64,
    pub weight_decay: f64,
    pub input_steps: usize,
    /// Bundle size K: snapshots produced per forward pass.
    pub output_steps: usize,
    pub train_steps: usize,
    pub test_steps: usize,
    /// Trailing target steps that receive gradient; `None` backpropagates
    /// through the whole window.
    pub pushforward_steps: Option<usize>,
    pub warmup_fraction: f64,
    /// Global gradient-norm clip applied during QAT only.
    pub qat_clip_norm: Option<f64>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig::burgers()
    }
}

impl TrainConfig {
    pub fn burgers() -> TrainConfig {
        TrainConfig {
            epochs: 200,
            qat_epochs: 50,
            batch_size: 50,
            learning_rate: 1e-3,
            qat_learning_rate: 1e-4,
            weight_decay: 1e-6,
            input_steps: 5,
            output_steps: 5,
            train_steps: 20,
            test_steps: 20,
            pushforward_steps: None,
            warmup_fraction: 0.05,
            qat_clip_norm: Some(1.0),
            seed: 0,
        }
    }

    pub fn diffsorp() -> TrainConfig {
        TrainConfig { qat_epochs: 100, train_steps: 10, test_steps: 10, ..TrainConfig::burgers() }
    }

    pub fn darcy() -> TrainConfig {
        TrainConfig {
            epochs: 400,
            qat_epochs: 100,
            batch_size: 4,
            learning_rate: 5e-4,
            input_steps: 1,
            output_steps: 1,
            train_steps: 1,
            test_steps: 1,
            ..TrainConfig::burgers()
        }
    }

    pub fn for_pde(pde: Pde) -> TrainConfig {
        match pde {
            Pde::Burgers => TrainConfig::burgers(),
            Pde::DiffSorp => TrainConfig::diffsorp(),
            Pde::Darcy => TrainConfig::darcy(),
        }
    }

    /// Resolved number of trailing target steps that carry gradient.
    pub fn pushforward(&self) -> usize {
        self.pushforward_steps.unwrap_or(self.train_steps)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_steps == 0 || self.output_steps == 0 || self.batch_size == 0 {
            return Err(config_err!("input_steps, output_steps and batch_size must be positive"));
        }
        for (what, steps) in [("train_steps", self.train_steps), ("test_steps", self.test_steps)] {
            if steps == 0 || steps % self.output_steps != 0 {
                return Err(config_err!("{what} = {steps} is not a positive multiple of the bundle size {}", self.output_steps));
            }
        }
        let p = self.pushforward();
        if p == 0 || p > self.train_steps || p % self.output_steps != 0 {
            return Err(config_err!(
                "pushforward_steps = {p} must be a multiple of {} in [1, {}]",
                self.output_steps,
                self.train_steps
            ));
        }
        if !(0.0..1.0).contains(&self.warmup_fraction) {
            return Err(config_err!("warmup fraction {} outside [0, 1)", self.warmup_fraction));
        }
        Ok(())
    }
}

/// Consecutive input snapshots followed directly by the target snapshots.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WindowPlan {
    pub input: Vec<usize>,
    pub target: Vec<usize>,
}

impl WindowPlan {
    pub fn start(&self) -> usize {
        self.input[0]
    }
}

/// Uniformly random start with `input_steps` inputs and `train_steps` targets.
pub fn sample_window(n_t: usize, cfg: &TrainConfig, rng: &mut impl Rng) -> Result<WindowPlan> {
    let need = cfg.input_steps + cfg.train_steps;
    if cfg.input_steps == 0 || n_t < need {
        return Err(config_err!(
            "trajectory of {n_t} snapshots is shorter than {} inputs + {} targets",
            cfg.input_steps,
            cfg.train_steps
        ));
    }
    let start = rng.random_range(0..=n_t - need);
    Ok(WindowPlan {
        input: (start..start + cfg.input_steps).collect(),
        target: (start + cfg.input_steps..start + need).collect(),
    })
}

/// Repetitions of each epoch: `ceil((N_t - input) / target)`.
pub fn epoch_plan(n_t: usize, input_steps: usize, target_steps: usize) -> usize {
    assert!(target_steps > 0, "target_steps must be positive");
    n_t.saturating_sub(input_steps).div_ceil(target_steps)
}

/// Snapshots `start..start + len` of the listed trajectories as `[B, len * F, N]`.
pub fn window_tensor(ds: &Dataset, trajectories: &[usize], starts: &[usize], len: usize) -> Result<Tensor> {
    let frame = ds.frame_len();
    let mut data = Vec::with_capacity(trajectories.len() * len * frame);
    for (&i, &s) in trajectories.iter().zip(starts) {
        if s + len > ds.n_t() {
            return Err(dim_err!("window [{s}, {}) exceeds {} snapshots", s + len, ds.n_t()));
        }
        data.extend_from_slice(&ds.trajectories[i][s * frame..(s + len) * frame]);
    }
    Tensor::new(data, &[trajectories.len(), len * ds.fields(), frame / ds.fields()])
}

/// Recurrent rollout on whatever grid `x` lives on. `step(pass, window)`
/// returns the next `bundle` snapshots; the window then slides forward by
/// them. Output is `[B, steps * fields, N]`.
pub fn rollout_with(
    x: &Tensor,
    steps: usize,
    input_steps: usize,
    bundle: usize,
    fields: usize,
    mut step: impl FnMut(usize, &Tensor) -> Result<Tensor>,
) -> Result<Tensor> {
    if bundle == 0 || steps == 0 || steps % bundle != 0 {
        return Err(config_err!("rollout of {steps} steps is not a positive multiple of the bundle size {bundle}"));
    }
    if x.rank() != 3 || x.shape()[1] != input_steps * fields {
        return Err(dim_err!("rollout window {:?} does not hold {input_steps} x {fields} channels", x.shape()));
    }
    let mut window = x.clone();
    let mut outs = Vec::with_capacity(steps / bundle);
    for pass in 0..steps / bundle {
        let y = step(pass, &window)?;
        if y.shape()[1] != bundle * fields {
            return Err(dim_err!("step produced {} channels, expected {}", y.shape()[1], bundle * fields));
        }
        window = if bundle >= input_steps {
            y.narrow(1, (bundle - input_steps) * fields, input_steps * fields)?
        } else {
            let keep = window.narrow(1, bundle * fields, (input_steps - bundle) * fields)?;
            Tensor::concat(&[&keep, &y], 1)?
        };
        outs.push(y);
    }
    if outs.len() == 1 {
        return Ok(outs.pop().unwrap());
    }
    Tensor::concat(&outs.iter().collect::<Vec<_>>(), 1)
}

fn check_recurrent(model: &Model) -> Result<()> {
    let spec = &model.spec;
    if spec.in_fields != spec.out_fields {
        return Err(config_err!(
            "recurrent rollout needs equal input and output fields, got {} and {}",
            spec.in_fields,
            spec.out_fields
        ));
    }
    Ok(())
}

/// Rollout of `steps` snapshots from the data-grid window `x`. Scaled
/// models downsample once, recur on the network grid and upsample the
/// stacked predictions once.
pub fn rollout(bound: &Bound<'_>, x: &Tensor, steps: usize) -> Result<Tensor> {
    rollout_pushforward(bound, bound, x, steps, steps)
}

/// Like [`rollout`], but all passes before the final `grad_steps`
/// snapshots run on `frozen`, so their predictions feed the recurrence
/// without carrying gradient.
pub fn rollout_pushforward(grad: &Bound<'_>, frozen: &Bound<'_>, x: &Tensor, steps: usize, grad_steps: usize) -> Result<Tensor> {
    let model = grad.model();
    check_recurrent(model)?;
    let spec = &model.spec;
    let k = spec.output_steps;
    let first_grad_pass = steps.saturating_sub(grad_steps) / k;
    let xn = grad.encode(x)?;
    let y = rollout_with(&xn, steps, spec.input_steps, k, spec.out_fields, |pass, w| {
        if pass < first_grad_pass {
            frozen.step(&w.detach())
        } else {
            grad.step(w)
        }
    })?;
    grad.decode(&y)
}

/// Mean squared error over every element.
pub fn mse_loss(pred: &Tensor, target: &Tensor) -> Result<Tensor> {
    if pred.shape() != target.shape() {
        return Err(dim_err!("loss operands {:?} and {:?}", pred.shape(), target.shape()));
    }
    Ok(pred.sub(target)?.square().mean())
}

/// Relative L2 error `sqrt(sum (p - t)^2 / sum t^2)`.
pub fn darcy_loss(pred: &Tensor, target: &Tensor) -> Result<Tensor> {
    if pred.shape() != target.shape() {
        return Err(dim_err!("loss operands {:?} and {:?}", pred.shape(), target.shape()));
    }
    let denom = target.data().iter().map(|t| t * t).sum::<f64>() + DARCY_EPS;
    Ok(pred.sub(target)?.square().sum().scale(1.0 / denom).sqrt())
}

/// One epoch of the history.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub lr: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters with the lowest validation loss seen (including the start).
    pub model: Model,
    pub history: Vec<EpochRecord>,
    pub optimizer: Adam,
    /// 0 when no epoch improved on the starting model.
    pub best_epoch: usize,
    pub best_val: f64,
}

impl TrainOutcome {
    pub fn checkpoint(&self, regime: Option<QuantRegime>, seed: u64) -> Checkpoint {
        Checkpoint {
            model: self.model.clone(),
            history: self.history.clone(),
            optimizer: Some(self.optimizer.clone()),
            regime,
            seed,
        }
    }
}

struct Phase {
    epochs: usize,
    lr: f64,
    weight_decay: f64,
    clip: Option<f64>,
    seed: u64,
}

fn check_data(model: &Model, ds: &Dataset, need: usize, what: &str) -> Result<()> {
    if ds.is_empty() {
        return Err(config_err!("{what} set is empty"));
    }
    if ds.shape.len() != 3 {
        return Err(config_err!("{what} set has shape {:?}, only 1D time series are trainable", ds.shape));
    }
    let spec = &model.spec;
    if ds.fields() != spec.in_fields {
        return Err(config_err!("{what} set has {} fields, model expects {}", ds.fields(), spec.in_fields));
    }
    if ds.nx() != model.scale().input_size {
        return Err(config_err!("{what} set has {} points, model expects {}", ds.nx(), model.scale().input_size));
    }
    if ds.n_t() < need {
        return Err(config_err!("{what} trajectories have {} snapshots, {need} needed", ds.n_t()));
    }
    Ok(())
}

fn check_setup(model: &Model, train: &Dataset, val: &Dataset, cfg: &TrainConfig) -> Result<()> {
    cfg.validate()?;
    check_recurrent(model)?;
    let spec = &model.spec;
    if spec.input_steps != cfg.input_steps || spec.output_steps != cfg.output_steps {
        return Err(config_err!(
            "model maps {} -> {} steps, config asks {} -> {}",
            spec.input_steps,
            spec.output_steps,
            cfg.input_steps,
            cfg.output_steps
        ));
    }
    check_data(model, train, cfg.input_steps + cfg.train_steps, "training")?;
    check_data(model, val, cfg.input_steps + cfg.test_steps, "validation")
}

/// Summed squared error and per-parameter gradients of `sse / norm` for
/// one batch, accumulated over [`GRAD_SHARDS`] fixed shards in order.
fn batch_gradient(
    model: &Model,
    ds: &Dataset,
    batch: &[usize],
    starts: &[usize],
    cfg: &TrainConfig,
) -> Result<(f64, Vec<Option<Vec<f64>>>)> {
    let per = batch.len().div_ceil(GRAD_SHARDS);
    let elements = (batch.len() * cfg.train_steps * ds.frame_len()) as f64;
    let shards: Vec<(f64, Vec<Option<Vec<f64>>>)> = (0..GRAD_SHARDS)
        .into_par_iter()
        .filter_map(|s| {
            let lo = (s * per).min(batch.len());
            let hi = ((s + 1) * per).min(batch.len());
            (lo < hi).then_some((lo, hi))
        })
        .map(|(lo, hi)| {
            let grad = model.bind(true);
            let frozen = model.bind(false);
            let st = &starts[lo..hi];
            let x = window_tensor(ds, &batch[lo..hi], st, cfg.input_steps)?;
            let tstarts: Vec<usize> = st.iter().map(|s| s + cfg.input_steps).collect();
            let target = window_tensor(ds, &batch[lo..hi], &tstarts, cfg.train_steps)?;
            let pred = rollout_pushforward(&grad, &frozen, &x, cfg.train_steps, cfg.pushforward())?;
            let sse = pred.sub(&target)?.square().sum();
            sse.scale(1.0 / elements).backward()?;
            Ok((sse.item(), grad.leaves().map(|(_, t)| t.grad()).collect()))
        })
        .collect::<Result<_>>()?;
    let mut total = 0.0;
    let mut grads: Vec<Option<Vec<f64>>> = vec![None; model.params().len()];
    for (sse, g) in shards {
        total += sse;
        for (acc, part) in grads.iter_mut().zip(g) {
            match (acc.as_mut(), part) {
                (Some(a), Some(p)) => a.iter_mut().zip(&p).for_each(|(a, p)| *a += p),
                (None, Some(p)) => *acc = Some(p),
                _ => {}
            }
        }
    }
    Ok((total / elements, grads))
}

/// Validation MSE of `test_steps`-long rollouts started at `t = 0`.
pub fn evaluate(model: &Model, ds: &Dataset, cfg: &TrainConfig) -> Result<f64> {
    check_recurrent(model)?;
    check_data(model, ds, cfg.input_steps + cfg.test_steps, "evaluation")?;
    let idx: Vec<usize> = (0..ds.len()).collect();
    let parts: Vec<f64> = idx
        .par_chunks(EVAL_CHUNK)
        .map(|chunk| {
            let bound = model.bind(false);
            let zeros = vec![0; chunk.len()];
            let x = window_tensor(ds, chunk, &zeros, cfg.input_steps)?;
            let target = window_tensor(ds, chunk, &vec![cfg.input_steps; chunk.len()], cfg.test_steps)?;
            let pred = rollout(&bound, &x, cfg.test_steps)?;
            Ok(pred.data().iter().zip(target.data()).map(|(p, t)| (p - t) * (p - t)).sum::<f64>())
        })
        .collect::<Result<_>>()?;
    Ok(parts.iter().sum::<f64>() / (ds.len() * cfg.test_steps * ds.frame_len()) as f64)
}

/// MSE of repeating the last input snapshot over the `test_steps` validation targets.
pub fn persistence_mse(ds: &Dataset, input_steps: usize, test_steps: usize) -> Result<f64> {
    if ds.is_empty() || input_steps == 0 || ds.n_t() < input_steps + test_steps {
        return Err(config_err!("dataset cannot hold {input_steps} + {test_steps} snapshots"));
    }
    let frame = ds.frame_len();
    let mut sse = 0.0;
    for tr in &ds.trajectories {
        let last = &tr[(input_steps - 1) * frame..input_steps * frame];
        for t in input_steps..input_steps + test_steps {
            sse += tr[t * frame..(t + 1) * frame].iter().zip(last).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        }
    }
    Ok(sse / (ds.len() * test_steps * frame) as f64)
}

fn fit(mut model: Model, train: &Dataset, val: &Dataset, cfg: &TrainConfig, phase: Phase) -> Result<TrainOutcome> {
    check_setup(&model, train, val, cfg)?;
    let reps = epoch_plan(train.n_t(), cfg.input_steps, cfg.train_steps);
    let batches = train.len().div_ceil(cfg.batch_size);
    let schedule = Schedule::new(phase.lr, phase.epochs * reps * batches, cfg.warmup_fraction);
    let mut opt = Adam::new(phase.weight_decay);
    let mut rng = ChaCha8Rng::seed_from_u64(phase.seed);
    let mut best_val = evaluate(&model, val, cfg)?;
    let mut best = model.clone();
    let mut best_epoch = 0;
    let mut history = Vec::with_capacity(phase.epochs);
    let mut step = 0;
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 1..=phase.epochs {
        let mut loss_sum = 0.0;
        let mut lr = 0.0;
        for _ in 0..reps {
            order.shuffle(&mut rng);
            for batch in order.chunks(cfg.batch_size) {
                let starts = batch
                    .iter()
                    .map(|_| sample_window(train.n_t(), cfg, &mut rng).map(|w| w.start()))
                    .collect::<Result<Vec<_>>>()?;
                let (loss, mut grads) = batch_gradient(&model, train, batch, &starts, cfg)?;
                let norm = grads.iter().flatten().flatten().map(|g| g * g).sum::<f64>().sqrt();
                if !loss.is_finite() || !norm.is_finite() {
                    return Err(Error::Diverged { epoch, step, loss });
                }
                if let Some(max) = phase.clip {
                    if norm > max {
                        let f = max / norm;
                        grads.iter_mut().flatten().flatten().for_each(|g| *g *= f);
                    }
                }
                lr = schedule.lr(step);
                opt.begin_step();
                let updates: Vec<(String, Vec<f64>)> = model
                    .params()
                    .iter()
                    .zip(&grads)
                    .filter_map(|(p, g)| g.as_ref().map(|g| (p.name.clone(), opt.update(&p.name, &p.data, g, lr))))
                    .collect();
                for (name, data) in updates {
                    model.set_param(&name, data)?;
                }
                model.project_quantizer_params();
                loss_sum += loss * batch.len() as f64;
                step += 1;
            }
        }
        let val_loss = evaluate(&model, val, cfg)?;
        if !val_loss.is_finite() {
            return Err(Error::Diverged { epoch, step, loss: val_loss });
        }
        history.push(EpochRecord { epoch, train_loss: loss_sum / (reps * train.len()) as f64, val_loss, lr });
        if val_loss < best_val {
            best_val = val_loss;
            best = model.clone();
            best_epoch = epoch;
        }
    }
    Ok(TrainOutcome { model: best, history, optimizer: opt, best_epoch, best_val })
}

/// Float training with Adam, L2 weight decay and warmup + cosine decay.
pub fn train(model: Model, train: &Dataset, val: &Dataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    let phase = Phase {
        epochs: cfg.epochs,
        lr: cfg.learning_rate,
        weight_decay: cfg.weight_decay,
        clip: None,
        seed: cfg.seed,
    };
    fit(model, train, val, cfg, phase)
}

/// Trajectories used for range calibration: the first
/// `ceil(CALIBRATION_FRACTION * n)` of a permutation drawn from `seed`.
pub fn calibration_indices(n: usize, seed: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(trajectory_seed(seed, u64::MAX)));
    idx.truncate(((n as f64 * CALIBRATION_FRACTION).ceil() as usize).clamp(1, n.max(1)));
    idx
}

/// Input windows for calibration: every disjoint `input_steps` window of
/// the calibration trajectories.
pub fn calibration_batch(ds: &Dataset, cfg: &TrainConfig) -> Result<Tensor> {
    let idx = calibration_indices(ds.len(), cfg.seed);
    let starts: Vec<usize> = (0..).map(|k| k * cfg.input_steps).take_while(|s| s + cfg.input_steps <= ds.n_t()).collect();
    let trajs: Vec<usize> = idx.iter().flat_map(|&i| starts.iter().map(move |_| i)).collect();
    let all_starts: Vec<usize> = idx.iter().flat_map(|_| starts.iter().copied()).collect();
    window_tensor(ds, &trajs, &all_starts, cfg.input_steps)
}

/// Calibrate, attach quantizers, then fine-tune weights and ranges with the
/// QAT learning rate, no weight decay and gradient clipping.
pub fn qat_finetune(model: &Model, regime: QuantRegime, train: &Dataset, val: &Dataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    check_setup(model, train, val, cfg)?;
    let calibration = calibration_batch(train, cfg)?;
    let quantized = attach_quantizers(model, regime, &calibration)?;
    let phase = Phase {
        epochs: cfg.qat_epochs,
        lr: cfg.qat_learning_rate,
        weight_decay: 0.0,
        clip: cfg.qat_clip_norm,
        seed: trajectory_seed(cfg.seed, 1),
    };
    fit(quantized, train, val, cfg, phase)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{build_model, ModelSpec};

    fn cfg(input: usize, out: usize, train: usize) -> TrainConfig {
        TrainConfig { input_steps: input, output_steps: out, train_steps: train, test_steps: train, ..TrainConfig::burgers() }
    }

    #[test]
    fn epoch_plan_examples() {
        assert_eq!(epoch_plan(101, 1, 1), 100);
        assert_eq!(epoch_plan(40, 5, 20), 2);
        assert_eq!(epoch_plan(6, 5, 1), 1);
    }

    #[test]
    fn forced_window() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..20 {
            let w = sample_window(25, &cfg(5, 5, 20), &mut rng).unwrap();
            assert_eq!(w.input, vec![0, 1, 2, 3, 4]);
            assert_eq!(w.target, (5..25).collect::<Vec<_>>());
        }
        assert!(sample_window(24, &cfg(5, 5, 20), &mut rng).is_err());
    }

    #[test]
    fn pushforward_default() {
        assert_eq!(cfg(5, 5, 20).pushforward(), 20);
        assert_eq!(cfg(1, 1, 1).pushforward(), 1);
        assert!(TrainConfig { pushforward_steps: Some(5), ..cfg(5, 5, 20) }.validate().is_ok());
        let bad = TrainConfig { pushforward_steps: Some(3), ..cfg(5, 5, 20) };
        assert!(bad.validate().is_err());
        assert!(cfg(5, 5, 12).validate().is_err());
    }

    #[test]
    fn rollout_counts_passes() {
        let x = Tensor::new((0..5 * 4).map(|v| v as f64).collect(), &[1, 5, 4]).unwrap();
        let mut passes = 0;
        let y = rollout_with(&x, 20, 5, 5, 1, |_, w| {
            passes += 1;
            Ok(w.clone())
        })
        .unwrap();
        assert_eq!(passes, 4);
        assert_eq!(y.shape(), &[1, 20, 4]);
        assert!(rollout_with(&x, 12, 5, 5, 1, |_, w| Ok(w.clone())).is_err());
    }

    #[test]
    fn identity_rollout_is_constant() {
        let x = Tensor::new((0..3 * 4).map(|v| v as f64).collect(), &[1, 3, 4]).unwrap();
        let last = x.narrow(1, 2, 1).unwrap();
        let y = rollout_with(&x, 6, 3, 2, 1, |_, w| {
            let l = w.narrow(1, 2, 1)?;
            Tensor::concat(&[&l, &l], 1)
        })
        .unwrap();
        for t in 0..6 {
            assert_eq!(y.narrow(1, t, 1).unwrap().data(), last.data());
        }
    }

    #[test]
    fn single_bundle_rollout_equals_step() {
        let spec = ModelSpec { width: 4, modes: 2, layers: 1, projection: 8, ..ModelSpec::fno1d(1, 5, 5, 16) };
        let model = build_model(&spec, 1).unwrap();
        let b = model.bind(false);
        let x = Tensor::new((0..80).map(|v| (v as f64 * 0.1).sin()).collect(), &[1, 5, 16]).unwrap();
        assert_eq!(rollout(&b, &x, 5).unwrap().data(), b.step(&x).unwrap().data());
    }

    #[test]
    fn losses() {
        let t = Tensor::new(vec![1.0, 2.0, -3.0], &[3]).unwrap();
        assert_eq!(mse_loss(&t, &t).unwrap().item(), 0.0);
        let u = Tensor::new(vec![1.0], &[1]).unwrap();
        let h = Tensor::new(vec![0.5], &[1]).unwrap();
        assert_eq!(mse_loss(&h, &u).unwrap().item(), 0.25);
        assert_eq!(darcy_loss(&t, &t).unwrap().item(), 0.0);
        assert!((darcy_loss(&t.scale(2.0), &t).unwrap().item() - 1.0).abs() < 1e-12);
        assert!(mse_loss(&t, &u).is_err());
    }

    #[test]
    fn calibration_subset_is_deterministic() {
        let a = calibration_indices(256, 7);
        assert_eq!(a.len(), 52);
        assert_eq!(a, calibration_indices(256, 7));
        assert_ne!(a, calibration_indices(256, 8));
        assert_eq!(calibration_indices(3, 0).len(), 1);
    }
}
