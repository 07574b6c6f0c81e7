use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

/// Adam with L2 weight decay folded into the gradient.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Steps taken so far.
    pub t: u64,
    #[serde(skip)]
    pub m: BTreeMap<String, Vec<f64>>,
    #[serde(skip)]
    pub v: BTreeMap<String, Vec<f64>>,
}

impl Adam {
    pub fn new(weight_decay: f64) -> Adam {
        Adam { beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay, t: 0, m: BTreeMap::new(), v: BTreeMap::new() }
    }

    /// Starts a new step; call [`Adam::update`] for every parameter after.
    pub fn begin_step(&mut self) {
        self.t += 1;
    }

    /// Updated copy of `param` given its gradient.
    pub fn update(&mut self, name: &str, param: &[f64], grad: &[f64], lr: f64) -> Vec<f64> {
        let n = param.len();
        let m = self.m.entry(name.to_string()).or_insert_with(|| vec![0.0; n]);
        let v = self.v.entry(name.to_string()).or_insert_with(|| vec![0.0; n]);
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        let mut out = Vec::with_capacity(n);
        for i in 0..n {
            let g = grad[i] + self.weight_decay * param[i];
            m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
            v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
            let mhat = m[i] / bc1;
            let vhat = v[i] / bc2;
            out.push(param[i] - lr * mhat / (vhat.sqrt() + self.eps));
        }
        out
    }
}

/// Linear warmup over `ceil(warmup_fraction * total)` steps, then cosine
/// decay to zero at `total`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Schedule {
    pub lr_max: f64,
    pub total: usize,
    pub warmup: usize,
}

impl Schedule {
    pub fn new(lr_max: f64, total: usize, warmup_fraction: f64) -> Schedule {
        let warmup = ((warmup_fraction * total as f64).ceil() as usize).clamp(1, total.max(1));
        Schedule { lr_max, total: total.max(1), warmup }
    }

    pub fn lr(&self, step: usize) -> f64 {
        if step < self.warmup {
            return self.lr_max * (step + 1) as f64 / self.warmup as f64;
        }
        let span = (self.total - self.warmup).max(1) as f64;
        let progress = ((step - self.warmup) as f64 / span).min(1.0);
        0.5 * self.lr_max * (1.0 + (std::f64::consts::PI * progress).cos())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_endpoints() {
        let s = Schedule::new(1e-3, 100, 0.05);
        assert_eq!(s.warmup, 5);
        assert!((s.lr(0) - 1e-3 / 5.0).abs() < 1e-18);
        assert!((s.lr(4) - 1e-3).abs() < 1e-18);
        assert!((s.lr(5) - 1e-3).abs() < 1e-18);
        assert!(s.lr(99) < 1e-6);
        assert!((s.lr(5 + 95 / 2) - 0.5e-3).abs() < 2e-5);
    }
}
