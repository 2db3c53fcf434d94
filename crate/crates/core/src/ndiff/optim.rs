//! Parameter storage and the Adam optimizer.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Named trainable arrays. `decay[i]` marks entries subject to weight decay.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    values: Vec<Array2<f64>>,
    names: Vec<String>,
    decay: Vec<bool>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a parameter and returns its slot index.
    pub fn push(&mut self, name: impl Into<String>, value: Array2<f64>, decay: bool) -> usize {
        self.values.push(value);
        self.names.push(name.into());
        self.decay.push(decay);
        self.values.len() - 1
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, i: usize) -> &Array2<f64> {
        &self.values[i]
    }

    pub fn get_mut(&mut self, i: usize) -> &mut Array2<f64> {
        &mut self.values[i]
    }

    pub fn name(&self, i: usize) -> &str {
        &self.names[i]
    }

    pub fn decays(&self, i: usize) -> bool {
        self.decay[i]
    }

    pub fn values(&self) -> &[Array2<f64>] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Array2<f64>] {
        &mut self.values
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(|v| v.len()).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Decoupled decay, applied only to parameters flagged in the store.
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// Adam with bias-corrected moments.
#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    m: Vec<Array2<f64>>,
    v: Vec<Array2<f64>>,
    step: u64,
}

impl Adam {
    pub fn new(config: AdamConfig, params: &ParamStore) -> Self {
        let zeros = |p: &Array2<f64>| Array2::zeros(p.dim());
        Self {
            config,
            m: params.values().iter().map(zeros).collect(),
            v: params.values().iter().map(zeros).collect(),
            step: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, params: &mut ParamStore, grads: &[Array2<f64>]) -> Result<()> {
        if grads.len() != params.len() {
            return Err(Error::LengthMismatch {
                what: "gradients",
                expected: params.len(),
                actual: grads.len(),
            });
        }
        for (i, g) in grads.iter().enumerate() {
            if g.dim() != params.get(i).dim() || g.dim() != self.m[i].dim() {
                return Err(Error::ShapeMismatch {
                    op: "adam_step",
                    lhs: params.get(i).dim(),
                    rhs: g.dim(),
                });
            }
        }
        self.step += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
            weight_decay,
        } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for (i, g) in grads.iter().enumerate() {
            let decay = weight_decay > 0.0 && params.decays(i);
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            let p = params.get_mut(i);
            ndarray::Zip::from(p)
                .and(m)
                .and(v)
                .and(g)
                .for_each(|p, m, v, &g| {
                    *m = beta1 * *m + (1.0 - beta1) * g;
                    *v = beta2 * *v + (1.0 - beta2) * g * g;
                    let m_hat = *m / bc1;
                    let v_hat = *v / bc2;
                    if decay {
                        *p -= lr * weight_decay * *p;
                    }
                    *p -= lr * m_hat / (v_hat.sqrt() + eps);
                });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn store(v: Array2<f64>) -> ParamStore {
        let mut s = ParamStore::new();
        s.push("w", v, true);
        s
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = store(array![[1.0, -2.0]]);
        let mut adam = Adam::new(AdamConfig::default(), &p);
        adam.step(&mut p, &[Array2::zeros((1, 2))]).unwrap();
        assert_eq!(p.get(0), &array![[1.0, -2.0]]);
        assert_eq!(adam.steps(), 1);
    }

    #[test]
    fn first_step_moves_by_lr() {
        for g in [0.003, -5.0, 120.0] {
            let mut p = store(array![[0.0]]);
            let mut adam = Adam::new(AdamConfig::default(), &p);
            adam.step(&mut p, &[array![[g]]]).unwrap();
            let delta = p.get(0)[[0, 0]];
            assert!((delta.abs() - 0.01).abs() < 1e-6, "g={g} delta={delta}");
            assert_eq!(delta.signum(), -g.signum());
        }
    }

    #[test]
    fn identical_runs_identical_trajectories() {
        let run = || {
            let mut p = store(array![[0.5, 0.25]]);
            let mut adam = Adam::new(AdamConfig::default(), &p);
            for k in 0..20 {
                let g = array![[(k as f64).sin(), (k as f64 * 0.3).cos()]];
                adam.step(&mut p, &[g]).unwrap();
            }
            p.get(0).clone()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut p = store(array![[0.0, 0.0]]);
        let mut adam = Adam::new(AdamConfig::default(), &p);
        assert!(adam.step(&mut p, &[array![[1.0]]]).is_err());
        assert!(adam.step(&mut p, &[]).is_err());
    }

    #[test]
    fn decay_skips_unflagged_params() {
        let mut p = ParamStore::new();
        p.push("w", array![[1.0]], true);
        p.push("b", array![[1.0]], false);
        let cfg = AdamConfig {
            weight_decay: 0.5,
            ..Default::default()
        };
        let mut adam = Adam::new(cfg, &p);
        adam.step(&mut p, &[array![[0.0]], array![[0.0]]]).unwrap();
        assert!(p.get(0)[[0, 0]] < 1.0);
        assert_eq!(p.get(1)[[0, 0]], 1.0);
    }
}
