//! Depth-benefit scores, the monotone threshold, and stopping depths.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::graph::Graph;
use crate::ndiff::{scalar_sigmoid, scalar_softplus, CustomOp};

use super::similarity::minmax_normalize;

/// `τ(t) = λ + (1 - λ) θ(t)` with `θ(t) = sigmoid(softplus(slope_raw) t + intercept_raw)`.
/// The slope is non-negative by construction, so `τ` never decreases in `t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdFunction {
    pub lambda: f64,
    pub slope_raw: f64,
    pub intercept_raw: f64,
}

impl ThresholdFunction {
    pub const INIT_SLOPE_RAW: f64 = 0.0;
    pub const INIT_INTERCEPT_RAW: f64 = -2.0;

    pub fn new(lambda: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&lambda) {
            return Err(invalid(format!("lambda {lambda} outside [0, 1]")));
        }
        Ok(Self {
            lambda,
            slope_raw: Self::INIT_SLOPE_RAW,
            intercept_raw: Self::INIT_INTERCEPT_RAW,
        })
    }

    pub fn theta(&self, t: usize) -> f64 {
        scalar_sigmoid(scalar_softplus(self.slope_raw) * t as f64 + self.intercept_raw)
    }

    pub fn tau(&self, t: usize) -> f64 {
        self.lambda + (1.0 - self.lambda) * self.theta(t)
    }
}

/// `[τ(1), …, τ(t_max)]`.
pub fn threshold_values(tf: &ThresholdFunction, t_max: usize) -> Vec<f64> {
    (1..=t_max).map(|t| tf.tau(t)).collect()
}

/// Stopping depths and the layer masks they induce.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepthPlan {
    pub stopping_depth: Vec<usize>,
    pub normalized_scores: Vec<f64>,
    pub thresholds: Vec<f64>,
}

impl DepthPlan {
    /// Plan with externally fixed depths (each clamped to `t_max`).
    pub fn forced(depths: &[usize], t_max: usize) -> Self {
        Self {
            stopping_depth: depths.iter().map(|&d| d.min(t_max)).collect(),
            normalized_scores: vec![f64::NAN; depths.len()],
            thresholds: vec![f64::NAN; t_max],
        }
    }

    pub fn t_max(&self) -> usize {
        self.thresholds.len()
    }

    pub fn num_nodes(&self) -> usize {
        self.stopping_depth.len()
    }

    /// Nodes that receive fresh messages at layer `t` (`T(v) ≥ t`).
    pub fn active_nodes(&self, t: usize) -> Vec<bool> {
        self.stopping_depth.iter().map(|&d| d >= t).collect()
    }

    /// Edges whose endpoints are both active at layer `t`.
    pub fn active_edges(&self, g: &Graph, t: usize) -> Vec<bool> {
        g.edges()
            .iter()
            .map(|&(u, v)| self.stopping_depth[u] >= t && self.stopping_depth[v] >= t)
            .collect()
    }

    /// `1.0` for nodes active at layer `t`, else `0.0`, as an `n × 1` column.
    pub fn gate_column(&self, t: usize) -> Array2<f64> {
        Array2::from_shape_fn((self.num_nodes(), 1), |(v, _)| {
            if self.stopping_depth[v] >= t {
                1.0
            } else {
                0.0
            }
        })
    }

    pub fn mean_depth(&self) -> f64 {
        if self.stopping_depth.is_empty() {
            return 0.0;
        }
        self.stopping_depth.iter().sum::<usize>() as f64 / self.num_nodes() as f64
    }

    /// Node counts per stopping depth `0..=t_max`.
    pub fn histogram(&self) -> Vec<usize> {
        let mut h = vec![0; self.t_max() + 1];
        for &d in &self.stopping_depth {
            h[d.min(self.t_max())] += 1;
        }
        h
    }
}

/// `T(v) = #{t : ε̃_v ≥ τ(t)}`, which is the largest qualifying `t` (or 0)
/// whenever `τ` is non-decreasing, and keeps the layer masks nested
/// regardless.
pub fn assign_stopping_depths(scores: &[f64], thresholds: &[f64]) -> DepthPlan {
    let stopping_depth = scores
        .iter()
        .map(|&e| thresholds.iter().filter(|&&tau| e >= tau).count())
        .collect();
    DepthPlan {
        stopping_depth,
        normalized_scores: scores.to_vec(),
        thresholds: thresholds.to_vec(),
    }
}

/// Log-domain depth-benefit scores from expected same-label counts,
/// `s_v = t_max (2 ln|α̂_v| + ln(d_v + 1) + offset_v)`, min-max normalized
/// across nodes. Nodes with `α̂ = 0` score `-inf` and normalize to 0.
#[derive(Debug, Clone)]
pub struct DepthScore {
    degree: Vec<f64>,
    t_max: f64,
    alpha: Vec<f64>,
    log_score: Vec<f64>,
    argmin: usize,
    argmax: usize,
    range: f64,
}

impl DepthScore {
    /// Evaluates the op for `d_plus` (`n × 1`). Returns the op (holding the
    /// saved forward state) and `(α̂, raw log scores, normalized scores)`.
    pub fn evaluate(
        d_plus: &Array2<f64>,
        degree: &[usize],
        offsets: Option<&[f64]>,
        t_max: usize,
    ) -> Result<(Self, Vec<f64>, Vec<f64>, Vec<f64>)> {
        let n = degree.len();
        if d_plus.dim() != (n, 1) {
            return Err(Error::ShapeMismatch {
                op: "depth score",
                lhs: d_plus.dim(),
                rhs: (n, 1),
            });
        }
        if let Some(o) = offsets {
            if o.len() != n {
                return Err(Error::LengthMismatch {
                    what: "depth score offsets",
                    expected: n,
                    actual: o.len(),
                });
            }
        }
        let tm = t_max as f64;
        let deg: Vec<f64> = degree.iter().map(|&d| d as f64).collect();
        let alpha: Vec<f64> = (0..n)
            .map(|v| super::similarity::estimated_alpha(d_plus[[v, 0]], deg[v] - d_plus[[v, 0]], degree[v]))
            .collect();
        let log_score: Vec<f64> = (0..n)
            .map(|v| {
                if alpha[v] == 0.0 {
                    f64::NEG_INFINITY
                } else {
                    let off = offsets.map_or(0.0, |o| o[v]);
                    tm * (2.0 * alpha[v].abs().ln() + (deg[v] + 1.0).ln() + off)
                }
            })
            .collect();
        let normalized = minmax_normalize(&log_score);
        let (mut argmin, mut argmax) = (usize::MAX, usize::MAX);
        for (v, &s) in log_score.iter().enumerate() {
            if !s.is_finite() {
                continue;
            }
            if argmin == usize::MAX || s < log_score[argmin] {
                argmin = v;
            }
            if argmax == usize::MAX || s > log_score[argmax] {
                argmax = v;
            }
        }
        let range = if argmin == usize::MAX {
            0.0
        } else {
            log_score[argmax] - log_score[argmin]
        };
        let op = Self {
            degree: deg,
            t_max: tm,
            alpha: alpha.clone(),
            log_score: log_score.clone(),
            argmin,
            argmax,
            range,
        };
        Ok((op, alpha, log_score, normalized))
    }
}

impl CustomOp for DepthScore {
    fn name(&self) -> &'static str {
        "depth_score"
    }

    fn backward(
        &self,
        _inputs: &[&Array2<f64>],
        _output: &Array2<f64>,
        grad_out: &Array2<f64>,
    ) -> Vec<Option<Array2<f64>>> {
        let n = self.alpha.len();
        let mut g_s = vec![0.0; n];
        if self.range > 0.0 {
            let r = self.range;
            let (lo, hi) = (self.log_score[self.argmin], self.log_score[self.argmax]);
            let (mut to_min, mut to_max) = (0.0, 0.0);
            for v in 0..n {
                let s = self.log_score[v];
                if !s.is_finite() {
                    continue;
                }
                let g = grad_out[[v, 0]];
                g_s[v] += g / r;
                to_min += g * (s - hi) / (r * r);
                to_max -= g * (s - lo) / (r * r);
            }
            g_s[self.argmin] += to_min;
            g_s[self.argmax] += to_max;
        }
        // ds/dd̂+ = t_max · 2/α̂ · dα̂/dd̂+ with dα̂/dd̂+ = 2/(d+1).
        let grad = Array2::from_shape_fn((n, 1), |(v, _)| {
            if g_s[v] == 0.0 {
                0.0
            } else {
                g_s[v] * self.t_max * 2.0 / self.alpha[v] * 2.0 / (self.degree[v] + 1.0)
            }
        });
        vec![Some(grad)]
    }
}
