//! Closed-form node-level aggregation statistics and their Monte-Carlo
//! oracles.
//!
//! For a node with profile `(d+, d-, d)` under the two-class CSBM, one
//! self-inclusive mean aggregation scales the class-mean separation by
//! `α = (1 + d+ - d-)/(d + 1)` and the noise variance by `1/(d + 1)`.
//! Iterating `n` times (with fresh, independent inputs at each layer) gives
//! signal `α^{2n} Δ²` and noise `σ² / (d + 1)^n`.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::csbm::{sample_neighborhood, stream_rng, ClassStats, FeatureModel};
use crate::error::{invalid, Error, Result};
use crate::graph::NodeProfile;

/// Feature dimension used by the Monte-Carlo oracles.
pub const ORACLE_DIM: usize = 8;
/// Minimum trial count accepted by the oracles.
pub const MIN_TRIALS: usize = 1000;
const CHUNK: usize = 2048;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AggregationStats {
    pub signal_variance: f64,
    pub noise_variance: f64,
    pub quality: f64,
}

impl AggregationStats {
    fn from_parts(signal: f64, noise: f64) -> Self {
        let quality = if noise > 0.0 {
            signal / noise
        } else if signal > 0.0 {
            f64::INFINITY
        } else {
            0.0
        };
        Self {
            signal_variance: signal,
            noise_variance: noise,
            quality,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationFactors {
    pub beta: f64,
    pub gamma: f64,
}

impl CalibrationFactors {
    pub const IDEAL: Self = Self {
        beta: 1.0,
        gamma: 1.0,
    };

    pub fn validate(&self) -> Result<()> {
        if !(self.beta.is_finite() && self.beta > 0.0) {
            return Err(invalid(format!("beta must be finite and > 0, got {}", self.beta)));
        }
        if !(self.gamma.is_finite() && self.gamma > 0.0) {
            return Err(invalid(format!("gamma must be finite and > 0, got {}", self.gamma)));
        }
        Ok(())
    }
}

pub fn signal_preservation_factor(p: NodeProfile) -> f64 {
    (1.0 + p.d_plus as f64 - p.d_minus as f64) / (p.degree as f64 + 1.0)
}

fn check_noise(s: ClassStats) -> Result<()> {
    if !(s.delta_sq.is_finite() && s.delta_sq >= 0.0) {
        return Err(invalid("delta_sq must be finite and >= 0"));
    }
    if !(s.sigma_sq_intra.is_finite() && s.sigma_sq_intra > 0.0) {
        return Err(invalid("sigma_sq_intra must be > 0 for a defined quality"));
    }
    Ok(())
}

pub fn single_layer_stats(p: NodeProfile, s: ClassStats) -> Result<AggregationStats> {
    multi_layer_stats(p, s, 1)
}

pub fn multi_layer_stats(p: NodeProfile, s: ClassStats, n: u32) -> Result<AggregationStats> {
    if n == 0 {
        return Err(invalid("layer count must be >= 1"));
    }
    check_noise(s)?;
    let a2 = signal_preservation_factor(p).powi(2);
    let k = p.degree as f64 + 1.0;
    let signal = a2.powi(n as i32) * s.delta_sq;
    let noise = s.sigma_sq_intra / k.powi(n as i32);
    Ok(AggregationStats {
        signal_variance: signal,
        noise_variance: noise,
        quality: (a2 * k).powi(n as i32) * s.delta_sq / s.sigma_sq_intra,
    })
}

/// `(α²(d+1))^n`. Overflows to `+inf` for hubs at large `n`; use
/// [`log_depth_benefit`] there.
pub fn depth_benefit(p: NodeProfile, n: u32) -> f64 {
    let a = signal_preservation_factor(p);
    (a * a * (p.degree as f64 + 1.0)).powi(n as i32)
}

/// `n · (2 ln|α| + ln(d+1))`; `-inf` when `α = 0` and `n > 0`, and `0` at `n = 0`.
pub fn log_depth_benefit(p: NodeProfile, n: u32) -> f64 {
    if n == 0 {
        return 0.0;
    }
    log_benefit_from_alpha(signal_preservation_factor(p), p.degree as f64, n as f64)
}

/// Log depth benefit for a (possibly fractional) `α` and degree.
pub fn log_benefit_from_alpha(alpha: f64, degree: f64, n: f64) -> f64 {
    if alpha == 0.0 {
        return f64::NEG_INFINITY;
    }
    n * (2.0 * alpha.abs().ln() + (degree + 1.0).ln())
}

/// `(β α² (d+1) / γ)^n`.
pub fn modified_depth_benefit(p: NodeProfile, c: CalibrationFactors, n: u32) -> Result<f64> {
    if !(c.gamma > 0.0) || !c.gamma.is_finite() {
        return Err(invalid(format!("gamma must be finite and > 0, got {}", c.gamma)));
    }
    if !(c.beta >= 0.0) || !c.beta.is_finite() {
        return Err(invalid(format!("beta must be finite and >= 0, got {}", c.beta)));
    }
    let a = signal_preservation_factor(p);
    Ok((c.beta * a * a * (p.degree as f64 + 1.0) / c.gamma).powi(n as i32))
}

/// Mean and average per-dimension variance of a row-major sample block,
/// computed around the first row so that identical rows give exactly zero.
fn moments(data: &[f64], dim: usize) -> (Vec<f64>, f64) {
    let rows = data.len() / dim;
    let shift = &data[..dim];
    let mut sum = vec![0.0; dim];
    let mut sum_sq = vec![0.0; dim];
    for row in data.chunks_exact(dim) {
        for k in 0..dim {
            let x = row[k] - shift[k];
            sum[k] += x;
            sum_sq[k] += x * x;
        }
    }
    let nf = rows as f64;
    let mean = (0..dim).map(|k| shift[k] + sum[k] / nf).collect();
    let var = (0..dim)
        .map(|k| {
            let m = sum[k] / nf;
            (sum_sq[k] / nf - m * m).max(0.0)
        })
        .sum::<f64>()
        / dim as f64;
    (mean, var)
}

/// Signal and noise of paired class-conditional samples.
fn pooled_stats(class0: &[f64], class1: &[f64], dim: usize) -> AggregationStats {
    let (m0, v0) = moments(class0, dim);
    let (m1, v1) = moments(class1, dim);
    let signal = m0.iter().zip(&m1).map(|(a, b)| (a - b) * (a - b)).sum();
    AggregationStats::from_parts(signal, 0.5 * (v0 + v1))
}

fn check_trials(trials: usize) -> Result<()> {
    if trials < MIN_TRIALS {
        return Err(invalid(format!("at least {MIN_TRIALS} trials required, got {trials}")));
    }
    Ok(())
}

fn check_stats(s: ClassStats) -> Result<()> {
    if !(s.delta_sq.is_finite() && s.delta_sq >= 0.0)
        || !(s.sigma_sq_intra.is_finite() && s.sigma_sq_intra >= 0.0)
    {
        return Err(invalid("class statistics must be finite and >= 0"));
    }
    Ok(())
}

/// Empirical one-layer statistics of the self-inclusive mean aggregation.
///
/// Each trial samples a neighborhood with [`sample_neighborhood`] for both
/// center labels from the same random state (common random numbers), so the
/// class-mean difference carries no sampling noise and near-zero signals are
/// still resolved to relative accuracy. Noise is the average per-dimension
/// variance over both classes. Trials are split into chunks with their own
/// generator streams; the result does not depend on scheduling.
pub fn mc_single_layer_stats(
    p: NodeProfile,
    s: ClassStats,
    trials: usize,
    seed: u64,
) -> Result<AggregationStats> {
    check_trials(trials)?;
    check_stats(s)?;
    if !p.is_consistent() {
        return Err(invalid("inconsistent profile"));
    }
    let model = FeatureModel::from_stats(s, ORACLE_DIM);
    let dim = ORACLE_DIM;
    let k = p.degree as f64 + 1.0;
    let mut h0 = vec![0.0; trials * dim];
    let mut h1 = vec![0.0; trials * dim];
    h0.par_chunks_mut(CHUNK * dim)
        .zip(h1.par_chunks_mut(CHUNK * dim))
        .enumerate()
        .for_each(|(chunk, (out0, out1))| {
            let mut rng = stream_rng(seed, chunk as u64);
            for (r0, r1) in out0.chunks_exact_mut(dim).zip(out1.chunks_exact_mut(dim)) {
                let mut twin = rng.clone();
                for (y, out) in [(0usize, r0), (1usize, r1)] {
                    let rng = if y == 0 { &mut twin } else { &mut rng };
                    let nb = sample_neighborhood(p, &model, y, rng);
                    for (j, o) in out.iter_mut().enumerate() {
                        let total: f64 = nb.center[j] + nb.neighbors.iter().map(|x| x[j]).sum::<f64>();
                        *o = total / k;
                    }
                }
            }
        });
    Ok(pooled_stats(&h0, &h1, dim))
}

/// Empirical statistics of `n` iterated aggregations, with per-layer stats
/// for layers `0..=n` (index 0 is the raw feature distribution).
///
/// Two coupled pools of `trials` representations (one per center label)
/// model the layer-`t` distribution. Layer `t+1` is formed per pool entry by
/// averaging an independently resampled self entry, `d+` same-class entries
/// and `d-` opposite-class entries from the layer-`t` pools, so every input
/// to an aggregation is a fresh independent draw, as the iterated analysis
/// assumes. Resampled indices are shared between the two pools, which keeps
/// the class-mean difference free of sampling noise.
pub fn mc_iterated_layer_stats(
    p: NodeProfile,
    s: ClassStats,
    n: u32,
    trials: usize,
    seed: u64,
) -> Result<Vec<AggregationStats>> {
    if n == 0 {
        return Err(invalid("layer count must be >= 1"));
    }
    check_trials(trials)?;
    check_stats(s)?;
    if !p.is_consistent() {
        return Err(invalid("inconsistent profile"));
    }
    let model = FeatureModel::from_stats(s, ORACLE_DIM);
    let dim = ORACLE_DIM;
    let sigma = model.sigma_intra;
    let mut pool0 = vec![0.0; trials * dim];
    let mut pool1 = vec![0.0; trials * dim];
    pool0
        .par_chunks_mut(CHUNK * dim)
        .zip(pool1.par_chunks_mut(CHUNK * dim))
        .enumerate()
        .for_each(|(chunk, (out0, out1))| {
            let mut rng = stream_rng(seed, chunk as u64);
            for (r0, r1) in out0.chunks_exact_mut(dim).zip(out1.chunks_exact_mut(dim)) {
                for j in 0..dim {
                    let z: f64 = rng.sample(StandardNormal);
                    r0[j] = model.mu[0][j] + sigma * z;
                    r1[j] = model.mu[1][j] + sigma * z;
                }
            }
        });
    let mut out = vec![pooled_stats(&pool0, &pool1, dim)];
    let k = p.degree as f64 + 1.0;
    let chunks_per_layer = trials.div_ceil(CHUNK) as u64;
    for layer in 1..=n as u64 {
        let mut next0 = vec![0.0; trials * dim];
        let mut next1 = vec![0.0; trials * dim];
        let (src0, src1) = (&pool0, &pool1);
        next0
            .par_chunks_mut(CHUNK * dim)
            .zip(next1.par_chunks_mut(CHUNK * dim))
            .enumerate()
            .for_each(|(chunk, (out0, out1))| {
                let stream = layer * chunks_per_layer + chunk as u64;
                let mut rng = stream_rng(seed, stream);
                for (r0, r1) in out0.chunks_exact_mut(dim).zip(out1.chunks_exact_mut(dim)) {
                    let mut add = |from0: &[f64], from1: &[f64], i: usize| {
                        let span = i * dim..(i + 1) * dim;
                        for (o, x) in r0.iter_mut().zip(&from0[span.clone()]) {
                            *o += x;
                        }
                        for (o, x) in r1.iter_mut().zip(&from1[span]) {
                            *o += x;
                        }
                    };
                    add(src0, src1, rng.random_range(0..trials));
                    for _ in 0..p.d_plus {
                        add(src0, src1, rng.random_range(0..trials));
                    }
                    for _ in 0..p.d_minus {
                        add(src1, src0, rng.random_range(0..trials));
                    }
                    r0.iter_mut().chain(r1.iter_mut()).for_each(|x| *x /= k);
                }
            });
        pool0 = next0;
        pool1 = next1;
        out.push(pooled_stats(&pool0, &pool1, dim));
    }
    Ok(out)
}

/// Statistics after `n` iterated aggregations (last entry of
/// [`mc_iterated_layer_stats`]).
pub fn mc_iterated_stats(
    p: NodeProfile,
    s: ClassStats,
    n: u32,
    trials: usize,
    seed: u64,
) -> Result<AggregationStats> {
    Ok(*mc_iterated_layer_stats(p, s, n, trials, seed)?
        .last()
        .expect("n >= 1 layers"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationEstimate {
    /// `(β_{v,n}, γ_{v,n})` for layers `n = 1..`.
    pub per_layer: Vec<CalibrationFactors>,
    /// Geometric means across layers.
    pub mean: CalibrationFactors,
}

/// Per-layer calibration factors from layerwise signal and noise variances
/// (index 0 is the pre-aggregation layer):
/// `β_n = S_n / (α² S_{n-1})`, `γ_n = (d+1) N_n / N_{n-1}`.
pub fn estimate_calibration_factors(
    signal: &[f64],
    noise: &[f64],
    alpha: f64,
    degree: usize,
) -> Result<CalibrationEstimate> {
    if signal.len() != noise.len() {
        return Err(Error::LengthMismatch {
            what: "layerwise noise variances",
            expected: signal.len(),
            actual: noise.len(),
        });
    }
    if signal.len() < 2 {
        return Err(invalid("need statistics for at least layers 0 and 1"));
    }
    if alpha == 0.0 {
        return Err(Error::ZeroDenominator("signal calibration (alpha = 0)"));
    }
    let a2 = alpha * alpha;
    let k = degree as f64 + 1.0;
    let mut per_layer = Vec::with_capacity(signal.len() - 1);
    for t in 1..signal.len() {
        if signal[t - 1] == 0.0 {
            return Err(Error::ZeroDenominator("signal calibration (previous signal = 0)"));
        }
        if noise[t - 1] == 0.0 {
            return Err(Error::ZeroDenominator("noise evolution (previous noise = 0)"));
        }
        let c = CalibrationFactors {
            beta: signal[t] / (a2 * signal[t - 1]),
            gamma: k * noise[t] / noise[t - 1],
        };
        c.validate()?;
        per_layer.push(c);
    }
    let m = per_layer.len() as f64;
    let geo = |f: fn(&CalibrationFactors) -> f64| {
        (per_layer.iter().map(|c| f(c).ln()).sum::<f64>() / m).exp()
    };
    let mean = CalibrationFactors {
        beta: geo(|c| c.beta),
        gamma: geo(|c| c.gamma),
    };
    Ok(CalibrationEstimate { per_layer, mean })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    StrongHomophily,
    StrongHeterophily,
    Mixed,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegimeThresholds {
    /// `d+/d` at or above this is strongly homophilic.
    pub homophilic: f64,
    /// `d+/d` at or below this is strongly heterophilic.
    pub heterophilic: f64,
}

impl Default for RegimeThresholds {
    fn default() -> Self {
        Self {
            homophilic: 0.8,
            heterophilic: 0.2,
        }
    }
}

/// Isolated nodes have `α = 1` and count as strongly homophilic.
pub fn corollary_regime(p: NodeProfile, t: RegimeThresholds) -> Regime {
    if p.degree == 0 {
        return Regime::StrongHomophily;
    }
    let r = p.d_plus as f64 / p.degree as f64;
    if r >= t.homophilic {
        Regime::StrongHomophily
    } else if r <= t.heterophilic {
        Regime::StrongHeterophily
    } else {
        Regime::Mixed
    }
}
