//! GCN and mean-aggregator backbones on the tape engine.
//!
//! Every backbone has the same skeleton: an input transform
//! `H⁰ = relu(X W_in + b_in)`, `layers` aggregation layers mapping
//! `hidden → hidden`, and a linear classifier head (the only layer without an
//! activation). The adaptive model reuses [`BackboneParams::input_layer`],
//! [`BackboneParams::layer`] and [`BackboneParams::head`] unchanged.

use std::sync::Arc;

use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::csbm::stream_rng;
use crate::error::{invalid, Result};
use crate::graph::{FeatureMatrix, Graph};
use crate::ndiff::optim::ParamStore;
use crate::ndiff::sparse::{mean_self_matrix, neighbor_mean_matrix, symnorm_matrix, SparseMatrix};
use crate::ndiff::{Tape, Tensor};

pub(crate) const STREAM_INIT: u64 = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackboneKind {
    GcnSymnorm,
    GcnRownorm,
    SageMean,
}

impl BackboneKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::GcnSymnorm => "gcn_symnorm",
            Self::GcnRownorm => "gcn_rownorm",
            Self::SageMean => "sage_mean",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackboneConfig {
    pub kind: BackboneKind,
    /// Number of aggregation layers.
    pub layers: usize,
    pub hidden_dim: usize,
    pub dropout: f64,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        Self {
            kind: BackboneKind::GcnSymnorm,
            layers: 2,
            hidden_dim: 32,
            dropout: 0.5,
        }
    }
}

impl BackboneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 {
            return Err(invalid("backbone needs at least one layer"));
        }
        if self.hidden_dim == 0 {
            return Err(invalid("hidden_dim must be > 0"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(invalid(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }
}

/// Training phase (dropout active, driven by `rng`) or evaluation.
pub enum Phase<'a> {
    Eval,
    Train(&'a mut ChaCha8Rng),
}

impl Phase<'_> {
    pub fn dropout(&mut self, tape: &mut Tape, x: Tensor, rate: f64) -> Tensor {
        match self {
            Phase::Eval => x,
            Phase::Train(rng) => tape.dropout(x, rate, *rng),
        }
    }

    pub fn is_train(&self) -> bool {
        matches!(self, Phase::Train(_))
    }
}

/// Fixed propagation matrices of one backbone kind over a graph.
#[derive(Debug, Clone)]
pub struct Propagation {
    kind: BackboneKind,
    matrix: Arc<SparseMatrix>,
}

impl Propagation {
    /// `edge_mask` restricts aggregation to the marked undirected edges.
    pub fn new(kind: BackboneKind, g: &Graph, edge_mask: Option<&[bool]>) -> Result<Self> {
        let matrix = match kind {
            BackboneKind::GcnSymnorm => symnorm_matrix(g, edge_mask)?,
            BackboneKind::GcnRownorm => mean_self_matrix(g, edge_mask)?,
            BackboneKind::SageMean => neighbor_mean_matrix(g, edge_mask)?,
        };
        Ok(Self {
            kind,
            matrix: Arc::new(matrix),
        })
    }

    pub fn kind(&self) -> BackboneKind {
        self.kind
    }

    pub fn matrix(&self) -> &Arc<SparseMatrix> {
        &self.matrix
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
struct Linear {
    w: usize,
    b: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
struct Layer {
    w: usize,
    w_nbr: Option<usize>,
    b: usize,
}

/// Indices of a backbone's parameters inside a [`ParamStore`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackboneParams {
    pub config: BackboneConfig,
    pub in_dim: usize,
    pub num_classes: usize,
    input: Linear,
    layers: Vec<Layer>,
    head: Linear,
}

/// Glorot-uniform `fan_in × fan_out` matrix.
pub fn glorot<R: Rng + ?Sized>(fan_in: usize, fan_out: usize, rng: &mut R) -> Array2<f64> {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Array2::from_shape_fn((fan_in, fan_out), |_| rng.random_range(-a..a))
}

impl BackboneParams {
    /// Appends freshly initialized parameters to `store`. Weights decay,
    /// biases do not.
    pub fn init<R: Rng + ?Sized>(
        config: &BackboneConfig,
        in_dim: usize,
        num_classes: usize,
        store: &mut ParamStore,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        if in_dim == 0 || num_classes == 0 {
            return Err(invalid("input dimension and class count must be > 0"));
        }
        let h = config.hidden_dim;
        let linear = |name: &str, i: usize, o: usize, store: &mut ParamStore, rng: &mut R| Linear {
            w: store.push(format!("{name}.w"), glorot(i, o, rng), true),
            b: store.push(format!("{name}.b"), Array2::zeros((1, o)), false),
        };
        // The head is drawn before the layers so that models differing only
        // in depth share their input and output weights.
        let input = linear("input", in_dim, h, store, rng);
        let head = linear("head", h, num_classes, store, rng);
        let layers = (0..config.layers)
            .map(|l| {
                let w = store.push(format!("layer{l}.w"), glorot(h, h, rng), true);
                let w_nbr = (config.kind == BackboneKind::SageMean)
                    .then(|| store.push(format!("layer{l}.w_nbr"), glorot(h, h, rng), true));
                let b = store.push(format!("layer{l}.b"), Array2::zeros((1, h)), false);
                Layer { w, w_nbr, b }
            })
            .collect();
        Ok(Self {
            config: config.clone(),
            in_dim,
            num_classes,
            input,
            layers,
            head,
        })
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    /// `H⁰ = relu(dropout(X) W_in + b_in)`.
    pub fn input_layer(
        &self,
        tape: &mut Tape,
        vars: &[Tensor],
        x: Tensor,
        phase: &mut Phase<'_>,
    ) -> Result<Tensor> {
        let xd = phase.dropout(tape, x, self.config.dropout);
        let z = tape.matmul(xd, vars[self.input.w])?;
        let z = tape.add_row(z, vars[self.input.b])?;
        Ok(tape.relu(z))
    }

    /// Aggregation layer `l` applied to every node:
    /// gcn kinds `relu(S · (dropout(H) W) + b)`,
    /// sage `relu(dropout(H) W + mean_nbr(dropout(H)) W_nbr + b)`.
    pub fn layer(
        &self,
        l: usize,
        tape: &mut Tape,
        vars: &[Tensor],
        prop: &Propagation,
        h: Tensor,
        phase: &mut Phase<'_>,
    ) -> Result<Tensor> {
        let p = self.layers[l];
        let hd = phase.dropout(tape, h, self.config.dropout);
        let z = match p.w_nbr {
            None => {
                let hw = tape.matmul(hd, vars[p.w])?;
                tape.spmm(prop.matrix.clone(), hw)?
            }
            Some(w_nbr) => {
                let own = tape.matmul(hd, vars[p.w])?;
                let agg = tape.spmm(prop.matrix.clone(), hd)?;
                let nbr = tape.matmul(agg, vars[w_nbr])?;
                tape.add(own, nbr)?
            }
        };
        let z = tape.add_row(z, vars[p.b])?;
        Ok(tape.relu(z))
    }

    /// Linear classifier `dropout(H) W_out + b_out`.
    pub fn head(&self, tape: &mut Tape, vars: &[Tensor], h: Tensor, phase: &mut Phase<'_>) -> Result<Tensor> {
        let hd = phase.dropout(tape, h, self.config.dropout);
        let z = tape.matmul(hd, vars[self.head.w])?;
        tape.add_row(z, vars[self.head.b])
    }

    /// Full non-adaptive forward: input layer, all aggregation layers, head.
    pub fn forward(
        &self,
        tape: &mut Tape,
        vars: &[Tensor],
        prop: &Propagation,
        x: Tensor,
        phase: &mut Phase<'_>,
    ) -> Result<Tensor> {
        let mut h = self.input_layer(tape, vars, x, phase)?;
        for l in 0..self.layers.len() {
            h = self.layer(l, tape, vars, prop, h, phase)?;
        }
        self.head(tape, vars, h, phase)
    }
}

/// Registers every array of `store` as a trainable leaf, in store order.
pub fn bind(tape: &mut Tape, store: &ParamStore) -> Vec<Tensor> {
    store.values().iter().map(|v| tape.param(v.clone())).collect()
}

/// Parameters for a standalone backbone, deterministic in `seed`.
pub fn init_params(
    config: &BackboneConfig,
    in_dim: usize,
    num_classes: usize,
    seed: u64,
) -> Result<(ParamStore, BackboneParams)> {
    let mut store = ParamStore::new();
    let mut rng = stream_rng(seed, STREAM_INIT);
    let params = BackboneParams::init(config, in_dim, num_classes, &mut store, &mut rng)?;
    Ok((store, params))
}

/// One aggregation layer evaluated outside training, restricted to
/// `active_edges` when given.
pub fn layer_forward(
    params: &BackboneParams,
    store: &ParamStore,
    l: usize,
    g: &Graph,
    active_edges: Option<&[bool]>,
    h: &Array2<f64>,
) -> Result<Array2<f64>> {
    if l >= params.num_layers() {
        return Err(invalid(format!("layer {l} out of range")));
    }
    let prop = Propagation::new(params.config.kind, g, active_edges)?;
    let mut tape = Tape::new();
    let vars = bind(&mut tape, store);
    let x = tape.constant(h.clone());
    let out = params.layer(l, &mut tape, &vars, &prop, x, &mut Phase::Eval)?;
    Ok(tape.value(out).clone())
}

/// Evaluation-mode logits of the plain backbone with every edge active.
pub fn plain_forward(
    params: &BackboneParams,
    store: &ParamStore,
    g: &Graph,
    x: &FeatureMatrix,
) -> Result<Array2<f64>> {
    let prop = Propagation::new(params.config.kind, g, None)?;
    let mut tape = Tape::new();
    let vars = bind(&mut tape, store);
    let xt = tape.constant(x.values().clone());
    let out = params.forward(&mut tape, &vars, &prop, xt, &mut Phase::Eval)?;
    Ok(tape.value(out).clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ndiff::gradcheck::check_gradients;
    use ndarray::array;
    use rand::SeedableRng;

    fn cfg(kind: BackboneKind, layers: usize) -> BackboneConfig {
        BackboneConfig {
            kind,
            layers,
            hidden_dim: 6,
            dropout: 0.0,
        }
    }

    fn random_graph(n: usize, m: usize, seed: u64) -> Graph {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let edges: Vec<_> = (0..m)
            .map(|_| (rng.random_range(0..n), rng.random_range(0..n)))
            .collect();
        Graph::build(n, &edges).unwrap()
    }

    fn random_features(n: usize, d: usize, seed: u64) -> FeatureMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        FeatureMatrix::new(Array2::from_shape_fn((n, d), |_| rng.random_range(-1.0..1.0))).unwrap()
    }

    #[test]
    fn init_is_deterministic_and_rejects_zero_layers() {
        let c = cfg(BackboneKind::GcnSymnorm, 2);
        let (a, _) = init_params(&c, 5, 3, 7).unwrap();
        let (b, _) = init_params(&c, 5, 3, 7).unwrap();
        assert_eq!(a, b);
        let (other, _) = init_params(&c, 5, 3, 8).unwrap();
        assert_ne!(a, other);
        assert!(init_params(&cfg(BackboneKind::GcnSymnorm, 0), 5, 3, 7).is_err());
    }

    #[test]
    fn glorot_std_matches_fan_rule() {
        let (fi, fo) = (40, 24);
        let target = (2.0 / (fi + fo) as f64).sqrt();
        for seed in 0..10 {
            let w = glorot(fi, fo, &mut stream_rng(seed, 0));
            let mean = w.mean().unwrap();
            let std = (w.mapv(|x| (x - mean).powi(2)).mean().unwrap()).sqrt();
            assert!((std / target - 1.0).abs() < 0.2, "std {std} vs {target}");
        }
    }

    #[test]
    fn rownorm_without_edges_is_self_only() {
        let g = Graph::build(3, &[(0, 1), (1, 2)]).unwrap();
        let (store, p) = init_params(&cfg(BackboneKind::GcnRownorm, 1), 6, 2, 1).unwrap();
        let h = random_features(3, 6, 2).into_inner();
        let out = layer_forward(&p, &store, 0, &g, Some(&[false, false]), &h).unwrap();
        let w = store.get(p.layers[0].w);
        let expected = h.dot(w).mapv(|x: f64| x.max(0.0));
        assert_eq!(out, expected);
    }

    #[test]
    fn rownorm_identity_weight_keeps_constant_rows() {
        let g = random_graph(8, 12, 3);
        let (mut store, p) = init_params(&cfg(BackboneKind::GcnRownorm, 1), 6, 2, 1).unwrap();
        *store.get_mut(p.layers[0].w) = Array2::eye(6);
        let h = Array2::from_shape_fn((8, 6), |(_, j)| j as f64 - 2.0);
        let out = layer_forward(&p, &store, 0, &g, None, &h).unwrap();
        for (a, b) in out.iter().zip(h.mapv(|x: f64| x.max(0.0)).iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_features_fixed_under_row_mean() {
        let g = random_graph(10, 20, 4);
        let s = mean_self_matrix(&g, None).unwrap();
        let mut h = Array2::from_elem((10, 3), 0.75);
        for _ in 0..16 {
            h = s.matmul(h.view()).unwrap();
        }
        assert!(h.iter().all(|&x| (x - 0.75).abs() < 1e-12));
    }

    #[test]
    fn one_layer_two_nodes_by_hand() {
        let g = Graph::build(2, &[(0, 1)]).unwrap();
        let c = BackboneConfig {
            kind: BackboneKind::GcnSymnorm,
            layers: 1,
            hidden_dim: 2,
            dropout: 0.0,
        };
        let (mut store, p) = init_params(&c, 2, 2, 0).unwrap();
        for i in [p.input.w, p.layers[0].w, p.head.w] {
            *store.get_mut(i) = Array2::eye(2);
        }
        *store.get_mut(p.head.b) = array![[0.5, -0.5]];
        let x = FeatureMatrix::new(array![[1.0, 0.0], [0.0, 1.0]]).unwrap();
        let logits = plain_forward(&p, &store, &g, &x).unwrap();
        assert_eq!(logits, array![[1.0, 0.0], [1.0, 0.0]]);
    }

    #[test]
    fn permutation_equivariance() {
        for kind in [BackboneKind::GcnSymnorm, BackboneKind::GcnRownorm, BackboneKind::SageMean] {
            let g = random_graph(12, 25, 5);
            let x = random_features(12, 4, 6);
            let (store, p) = init_params(&cfg(kind, 3), 4, 3, 9).unwrap();
            let base = plain_forward(&p, &store, &g, &x).unwrap();
            let mut perm: Vec<usize> = (0..12).collect();
            perm.reverse();
            perm.swap(0, 5);
            let gp = g.permute(&perm).unwrap();
            let mut xp = Array2::zeros(x.values().dim());
            for v in 0..12 {
                xp.row_mut(perm[v]).assign(&x.values().row(v));
            }
            let out = plain_forward(&p, &store, &gp, &FeatureMatrix::new(xp).unwrap()).unwrap();
            for v in 0..12 {
                for c in 0..3 {
                    assert!((out[[perm[v], c]] - base[[v, c]]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn deep_stack_stays_finite() {
        let g = random_graph(30, 60, 7);
        let x = random_features(30, 5, 8);
        for kind in [BackboneKind::GcnSymnorm, BackboneKind::GcnRownorm, BackboneKind::SageMean] {
            let (store, p) = init_params(&cfg(kind, 64), 5, 2, 1).unwrap();
            let logits = plain_forward(&p, &store, &g, &x).unwrap();
            assert!(logits.iter().all(|v| v.is_finite()));
        }
    }

    #[test]
    fn layer_gradients_match_finite_differences() {
        let g = random_graph(10, 18, 11);
        for kind in [BackboneKind::GcnSymnorm, BackboneKind::GcnRownorm, BackboneKind::SageMean] {
            let prop = Propagation::new(kind, &g, None).unwrap();
            let (store, p) = init_params(&cfg(kind, 1), 8, 2, 3).unwrap();
            let h = random_features(10, 6, 12).into_inner();
            let mut inputs = vec![h];
            inputs.extend(store.values().iter().cloned());
            let report = check_gradients(
                |tape, leaves| {
                    let vars = &leaves[1..];
                    let out = p.layer(0, tape, vars, &prop, leaves[0], &mut Phase::Eval)?;
                    let sq = tape.mul(out, out)?;
                    Ok(tape.mean_all(sq))
                },
                &inputs,
                1e-4,
            )
            .unwrap();
            assert!(report.max_rel_error() < 1e-4, "{kind:?}: {report:?}");
        }
    }
}
