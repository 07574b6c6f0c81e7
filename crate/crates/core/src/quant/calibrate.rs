//! Grid-search range calibration.
//!
//! Candidate range endpoints are `alpha * observed` for 101 values of alpha
//! spaced linearly in `[0.1, 1.2]`. The candidate with the lowest mean
//! squared fake-quantization error wins; ties go to the earliest candidate.
//! Candidates whose range excludes the sample mean are skipped.

use super::QuantizerParams;

pub const CALIBRATION_CANDIDATES: usize = 101;
pub const CALIBRATION_MIN_FACTOR: f64 = 0.1;
pub const CALIBRATION_MAX_FACTOR: f64 = 1.2;

/// Scoring uses at most this many samples (a deterministic stride subset).
const MAX_SCORED: usize = 8192;

fn factor(i: usize) -> f64 {
    CALIBRATION_MIN_FACTOR
        + (CALIBRATION_MAX_FACTOR - CALIBRATION_MIN_FACTOR) * i as f64 / (CALIBRATION_CANDIDATES - 1) as f64
}

fn scored_subset(samples: &[f64]) -> Vec<f64> {
    if samples.len() <= MAX_SCORED {
        return samples.to_vec();
    }
    (0..MAX_SCORED).map(|i| samples[i * samples.len() / MAX_SCORED]).collect()
}

fn mse(p: &QuantizerParams, xs: &[f64]) -> f64 {
    xs.iter().map(|&x| (p.fake(x) - x).powi(2)).sum::<f64>() / xs.len() as f64
}

/// Symmetric candidate `i`: positive endpoint `alpha_i * max|x|`.
pub(crate) fn symmetric_candidate(abs_max: f64, i: usize, bits: u32) -> Option<QuantizerParams> {
    let a = factor(i) * abs_max;
    let s = a / ((1u64 << (bits - 1)) - 1) as f64;
    QuantizerParams::symmetric(s, bits).ok()
}

/// Asymmetric candidate from the scaled endpoints `(lo, hi)`, `lo <= 0 <= hi`.
pub(crate) fn asymmetric_candidate(lo: f64, hi: f64, bits: u32) -> Option<QuantizerParams> {
    if hi - lo <= 0.0 {
        return None;
    }
    let levels = ((1u64 << bits) - 1) as f64;
    let s = (hi - lo) / levels;
    let z = (-lo / s).round().clamp(0.0, levels);
    QuantizerParams::asymmetric(s, z as u32, bits).ok()
}

/// Per-tensor range minimizing mean squared fake-quantization error over the
/// candidate grid. All-zero (or empty) samples fall back to `s = 1` with the
/// default zero-point (`0`, or `2^(b-1)` when symmetric).
pub fn calibrate_range(samples: &[f64], bits: u32, symmetric: bool) -> QuantizerParams {
    let fallback = || {
        if symmetric {
            QuantizerParams::symmetric(1.0, bits)
        } else {
            QuantizerParams::asymmetric(1.0, 0, bits)
        }
        .expect("fallback quantizer is valid for supported bitwidths")
    };
    let finite: Vec<f64> = samples.iter().copied().filter(|v| v.is_finite()).collect();
    if finite.is_empty() || finite.iter().all(|&v| v == 0.0) {
        return fallback();
    }
    let mean = finite.iter().sum::<f64>() / finite.len() as f64;
    let scored = scored_subset(&finite);
    let keeps_mean = |p: &QuantizerParams| p.q_min() <= mean && mean <= p.q_max();

    let mut best: Option<(f64, QuantizerParams)> = None;
    let mut consider = |p: QuantizerParams| {
        if !keeps_mean(&p) {
            return;
        }
        let e = mse(&p, &scored);
        if best.as_ref().is_none_or(|(b, _)| e < *b) {
            best = Some((e, p));
        }
    };

    if symmetric {
        let abs_max = finite.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for i in 0..CALIBRATION_CANDIDATES {
            if let Some(p) = symmetric_candidate(abs_max, i, bits) {
                consider(p);
            }
        }
    } else {
        let lo_obs = finite.iter().fold(0.0f64, |m, &v| m.min(v));
        let hi_obs = finite.iter().fold(0.0f64, |m, &v| m.max(v));
        // A zero endpoint has one distinct candidate; skip the repeats.
        let his = if hi_obs == 0.0 { 1 } else { CALIBRATION_CANDIDATES };
        let los = if lo_obs == 0.0 { 1 } else { CALIBRATION_CANDIDATES };
        for i in 0..his {
            for j in 0..los {
                if let Some(p) = asymmetric_candidate(factor(j) * lo_obs, factor(i) * hi_obs, bits) {
                    consider(p);
                }
            }
        }
    }
    best.map(|(_, p)| p).unwrap_or_else(fallback)
}
