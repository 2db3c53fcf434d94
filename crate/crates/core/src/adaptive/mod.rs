//! Adaptive-depth message passing.
//!
//! A forward pass computes input embeddings `H⁰`, per-edge same-label
//! probabilities, per-node expected signal preservation `α̂` and its log
//! depth benefit, min-max normalizes the benefits to `ε̃ ∈ [0, 1]`, and
//! compares them with a monotone threshold `τ(t)` to obtain each node's
//! stopping depth `T(v)`. Layer `t` then updates only nodes with
//! `T(v) ≥ t`; every other row is carried forward unchanged, so a stopped
//! node's frozen embedding is what its neighbors read from then on.
//!
//! During training the binary layer mask is relaxed to
//! `sigmoid((ε̃ - τ(t)) / temperature)`, which lets gradients reach the
//! similarity head and the threshold parameters.

pub mod depth;
pub mod similarity;

use std::sync::Arc;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::backbones::{BackboneConfig, BackboneParams, Phase, Propagation};
use crate::csbm::{stream_rng, ClassStats};
use crate::error::{invalid, Result};
use crate::graph::{Graph, LabelVector, SplitMask};
use crate::ndiff::optim::ParamStore;
use crate::ndiff::{Tape, Tensor};
use crate::theory::{
    estimate_calibration_factors, mc_iterated_layer_stats,
    signal_preservation_factor, CalibrationFactors, Regime, RegimeThresholds,
};

pub use depth::{assign_stopping_depths, threshold_values, DepthPlan, DepthScore, ThresholdFunction};
pub use similarity::{
    degree_similarity, estimated_alpha, expected_label_counts, heuristic_raw_scores,
    heuristic_similarity, minmax_normalize, pair_probability, HeuristicName, SimilarityHead,
};

const STREAM_HEAD: u64 = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Learned pair head trained with the same-label regularizer.
    Learned,
    /// Degree-product similarity; no trainable similarity parameters.
    FastDegree,
    /// Normalized structural heuristic (see [`HeuristicConfig`]).
    Heuristic,
    /// Learned head with calibration offsets `ln(β/γ)` on the log benefit.
    Modified,
}

impl Variant {
    pub fn is_learned(self) -> bool {
        matches!(self, Self::Learned | Self::Modified)
    }

    /// Whether the total loss includes the same-label regularizer.
    pub fn uses_regularization(self) -> bool {
        self.is_learned()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GateMode {
    Hard,
    Soft,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GatingConfig {
    /// Gate type used while training; evaluation always uses hard gates.
    pub mode: GateMode,
    pub temperature: f64,
    /// Multiply the temperature by `anneal_factor` every `anneal_every`
    /// epochs (0 disables annealing), never going below `min_temperature`.
    pub anneal_every: usize,
    pub anneal_factor: f64,
    pub min_temperature: f64,
}

impl Default for GatingConfig {
    fn default() -> Self {
        Self {
            mode: GateMode::Soft,
            temperature: 0.1,
            anneal_every: 100,
            anneal_factor: 0.5,
            min_temperature: 1e-3,
        }
    }
}

impl GatingConfig {
    pub fn temperature_at(&self, epoch: usize) -> f64 {
        if self.anneal_every == 0 {
            return self.temperature;
        }
        let k = (epoch / self.anneal_every) as i32;
        (self.temperature * self.anneal_factor.powi(k)).max(self.min_temperature)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HeuristicConfig {
    pub name: HeuristicName,
}

impl Default for HeuristicConfig {
    fn default() -> Self {
        Self {
            name: HeuristicName::CommonNeighbors,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CalibrationSource {
    /// One `(β, γ)` pair from the config for every node.
    Global,
    /// Per-regime factors estimated by simulating matching CSBM
    /// neighborhoods (see [`regime_calibration`]).
    Regime,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModifiedConfig {
    pub beta: f64,
    pub gamma: f64,
    pub source: CalibrationSource,
}

impl Default for ModifiedConfig {
    fn default() -> Self {
        Self {
            beta: 1.0,
            gamma: 1.0,
            source: CalibrationSource::Global,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdGnnConfig {
    /// Maximum depth; also the number of aggregation layers.
    pub t_max: usize,
    pub lambda: f64,
    pub variant: Variant,
    pub gating: GatingConfig,
    pub heuristic: HeuristicConfig,
    pub modified: ModifiedConfig,
    /// `backbone.layers` is replaced by `t_max`.
    pub backbone: BackboneConfig,
}

impl Default for AdGnnConfig {
    fn default() -> Self {
        Self {
            t_max: 4,
            lambda: 0.0,
            variant: Variant::Learned,
            gating: GatingConfig::default(),
            heuristic: HeuristicConfig::default(),
            modified: ModifiedConfig::default(),
            backbone: BackboneConfig::default(),
        }
    }
}

impl AdGnnConfig {
    pub fn validate(&self) -> Result<()> {
        if self.t_max == 0 {
            return Err(invalid("t_max must be >= 1"));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(invalid(format!("lambda {} outside [0, 1]", self.lambda)));
        }
        let g = &self.gating;
        if !(g.temperature > 0.0 && g.temperature.is_finite()) {
            return Err(invalid("gating temperature must be > 0"));
        }
        if !(g.min_temperature > 0.0) || !(g.anneal_factor > 0.0 && g.anneal_factor <= 1.0) {
            return Err(invalid("annealing needs min_temperature > 0 and factor in (0, 1]"));
        }
        if self.variant == Variant::Modified {
            CalibrationFactors {
                beta: self.modified.beta,
                gamma: self.modified.gamma,
            }
            .validate()?;
        }
        self.backbone_config().validate()
    }

    pub fn backbone_config(&self) -> BackboneConfig {
        BackboneConfig {
            layers: self.t_max,
            ..self.backbone.clone()
        }
    }
}

/// Calibration factors per neighborhood regime.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegimeCalibration {
    pub strong_homophily: CalibrationFactors,
    pub strong_heterophily: CalibrationFactors,
    pub mixed: CalibrationFactors,
    pub thresholds: RegimeThresholds,
}

impl RegimeCalibration {
    pub fn factors(&self, r: Regime) -> CalibrationFactors {
        match r {
            Regime::StrongHomophily => self.strong_homophily,
            Regime::StrongHeterophily => self.strong_heterophily,
            Regime::Mixed => self.mixed,
        }
    }

    /// `ln(β/γ)` for a node with expected same-label count `d_plus`.
    pub fn log_offset(&self, d_plus: f64, degree: usize) -> f64 {
        let regime = if degree == 0 {
            Regime::StrongHomophily
        } else {
            let r = d_plus / degree as f64;
            if r >= self.thresholds.homophilic {
                Regime::StrongHomophily
            } else if r <= self.thresholds.heterophilic {
                Regime::StrongHeterophily
            } else {
                Regime::Mixed
            }
        };
        let c = self.factors(regime);
        (c.beta / c.gamma).ln()
    }
}

/// Estimates `(β, γ)` for one representative profile per regime (same-label
/// fractions 0.9, 0.1 and 0.5 at the given degree) from iterated
/// aggregation statistics. Profiles with `α = 0` keep the ideal factors.
pub fn regime_calibration(
    stats: ClassStats,
    degree: usize,
    layers: u32,
    trials: usize,
    seed: u64,
) -> Result<RegimeCalibration> {
    let degree = degree.max(1);
    let estimate = |frac: f64, stream: u64| -> Result<CalibrationFactors> {
        let d_plus = ((frac * degree as f64).round() as usize).min(degree);
        let p = crate::graph::NodeProfile::new(d_plus, degree - d_plus);
        let alpha = signal_preservation_factor(p);
        if alpha == 0.0 {
            return Ok(CalibrationFactors::IDEAL);
        }
        let ls = mc_iterated_layer_stats(p, stats, layers.max(1), trials, seed ^ stream)?;
        let signal: Vec<f64> = ls.iter().map(|s| s.signal_variance).collect();
        let noise: Vec<f64> = ls.iter().map(|s| s.noise_variance).collect();
        Ok(estimate_calibration_factors(&signal, &noise, alpha, degree)?.mean)
    };
    let thresholds = RegimeThresholds::default();
    Ok(RegimeCalibration {
        strong_homophily: estimate(0.9, 1)?,
        strong_heterophily: estimate(0.1, 2)?,
        mixed: estimate(0.5, 3)?,
        thresholds,
    })
}

/// Graph-dependent constants of a forward pass.
#[derive(Debug, Clone)]
pub struct GraphContext {
    num_nodes: usize,
    prop: Propagation,
    edge_u: Arc<Vec<usize>>,
    edge_v: Arc<Vec<usize>>,
    arc_edge: Arc<Vec<usize>>,
    arc_owner: Arc<Vec<usize>>,
    degree: Vec<usize>,
    fixed_probs: Option<Array2<f64>>,
}

impl GraphContext {
    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn num_edges(&self) -> usize {
        self.edge_u.len()
    }

    pub fn degree(&self) -> &[usize] {
        &self.degree
    }
}

/// Regularizer inputs: ids of edges between training nodes and their
/// same-label indicators.
#[derive(Debug, Clone, PartialEq)]
pub struct RegTargets {
    pub edge_ids: Arc<Vec<usize>>,
    pub targets: Arc<Vec<f64>>,
}

impl RegTargets {
    pub fn new(g: &Graph, split: &SplitMask, y: &LabelVector) -> Self {
        let (ids, targets): (Vec<usize>, Vec<f64>) = g
            .edges()
            .iter()
            .enumerate()
            .filter(|(_, &(u, v))| split.is_train(u) && split.is_train(v))
            .map(|(i, &(u, v))| (i, if y.get(u) == y.get(v) { 1.0 } else { 0.0 }))
            .unzip();
        Self {
            edge_ids: Arc::new(ids),
            targets: Arc::new(targets),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.edge_ids.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Gating {
    Hard,
    Soft(f64),
}

pub struct ForwardOutput {
    pub logits: Tensor,
    /// Per-edge probabilities (`E × 1`), absent for edgeless graphs.
    pub edge_probs: Option<Tensor>,
    /// `H⁰, H¹, …` as computed (hard mode may stop early once every node is
    /// frozen; later layers would be identical).
    pub embeddings: Vec<Tensor>,
    pub plan: DepthPlan,
    pub alpha_hat: Vec<f64>,
    pub log_scores: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct AdGnn {
    pub config: AdGnnConfig,
    pub store: ParamStore,
    pub backbone: BackboneParams,
    head: Option<SimilarityHead>,
    slope: usize,
    intercept: usize,
    forced_depths: Option<Vec<usize>>,
    calibration: Option<RegimeCalibration>,
}

impl AdGnn {
    pub fn new(config: &AdGnnConfig, in_dim: usize, num_classes: usize, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new();
        // Same stream as a standalone backbone, so equal seeds give equal
        // backbone weights.
        let mut rng = stream_rng(seed, crate::backbones::STREAM_INIT);
        let bcfg = config.backbone_config();
        let backbone = BackboneParams::init(&bcfg, in_dim, num_classes, &mut store, &mut rng)?;
        let mut rng = stream_rng(seed, STREAM_HEAD);
        let head = config
            .variant
            .is_learned()
            .then(|| SimilarityHead::init(bcfg.hidden_dim, bcfg.hidden_dim, &mut store, &mut rng));
        let slope = store.push(
            "threshold.slope_raw",
            Array2::from_elem((1, 1), ThresholdFunction::INIT_SLOPE_RAW),
            false,
        );
        let intercept = store.push(
            "threshold.intercept_raw",
            Array2::from_elem((1, 1), ThresholdFunction::INIT_INTERCEPT_RAW),
            false,
        );
        Ok(Self {
            config: config.clone(),
            store,
            backbone,
            head,
            slope,
            intercept,
            forced_depths: None,
            calibration: None,
        })
    }

    pub fn similarity_head(&self) -> Option<&SimilarityHead> {
        self.head.as_ref()
    }

    /// Bypass scoring and use these stopping depths for every forward pass.
    pub fn force_depths(&mut self, depths: Option<Vec<usize>>) {
        self.forced_depths = depths;
    }

    /// Per-regime calibration used by the modified variant when the config
    /// selects [`CalibrationSource::Regime`].
    pub fn set_calibration(&mut self, c: RegimeCalibration) {
        self.calibration = Some(c);
    }

    pub fn threshold(&self) -> ThresholdFunction {
        ThresholdFunction {
            lambda: self.config.lambda,
            slope_raw: self.store.get(self.slope)[[0, 0]],
            intercept_raw: self.store.get(self.intercept)[[0, 0]],
        }
    }

    pub fn set_threshold_params(&mut self, slope_raw: f64, intercept_raw: f64) {
        self.store.get_mut(self.slope)[[0, 0]] = slope_raw;
        self.store.get_mut(self.intercept)[[0, 0]] = intercept_raw;
    }

    pub fn context(&self, g: &Graph) -> Result<GraphContext> {
        let prop = Propagation::new(self.config.backbone.kind, g, None)?;
        let (us, vs): (Vec<usize>, Vec<usize>) = g.edges().iter().copied().unzip();
        let mut owner = Vec::with_capacity(g.num_arcs());
        for v in 0..g.num_nodes() {
            owner.extend(std::iter::repeat_n(v, g.degree(v)));
        }
        let fixed = if g.num_edges() == 0 {
            None
        } else {
            match self.config.variant {
                Variant::FastDegree => Some(degree_similarity(g)?),
                Variant::Heuristic => Some(heuristic_similarity(g, self.config.heuristic.name)?),
                Variant::Learned | Variant::Modified => None,
            }
        };
        Ok(GraphContext {
            num_nodes: g.num_nodes(),
            prop,
            edge_u: Arc::new(us),
            edge_v: Arc::new(vs),
            arc_edge: Arc::new(g.arc_edges().to_vec()),
            arc_owner: Arc::new(owner),
            degree: g.degrees(),
            fixed_probs: fixed.map(|p| Array2::from_shape_vec((g.num_edges(), 1), p).expect("column")),
        })
    }

    fn offsets(&self, d_plus: &Array2<f64>, degree: &[usize]) -> Option<Vec<f64>> {
        if self.config.variant != Variant::Modified {
            return None;
        }
        let m = &self.config.modified;
        Some(match (m.source, &self.calibration) {
            (CalibrationSource::Regime, Some(c)) => degree
                .iter()
                .enumerate()
                .map(|(v, &d)| c.log_offset(d_plus[[v, 0]], d))
                .collect(),
            _ => vec![(m.beta / m.gamma).ln(); degree.len()],
        })
    }

    /// Full adaptive forward pass on `tape`. `vars` are the store's arrays
    /// bound to the tape in store order.
    pub fn forward(
        &self,
        tape: &mut Tape,
        vars: &[Tensor],
        ctx: &GraphContext,
        x: Tensor,
        phase: &mut Phase<'_>,
        gating: Gating,
    ) -> Result<ForwardOutput> {
        let n = ctx.num_nodes;
        let t_max = self.config.t_max;
        let h0 = self.backbone.input_layer(tape, vars, x, phase)?;

        let edge_probs = match (&ctx.fixed_probs, &self.head) {
            _ if ctx.num_edges() == 0 => None,
            (Some(p), _) => Some(tape.constant(p.clone())),
            (None, Some(head)) => Some(head.pair_probabilities(
                tape,
                vars,
                h0,
                ctx.edge_u.clone(),
                ctx.edge_v.clone(),
            )?),
            (None, None) => return Err(invalid("variant has neither fixed probabilities nor a head")),
        };
        let d_plus = match edge_probs {
            Some(p) => {
                let per_arc = tape.row_gather(p, ctx.arc_edge.clone())?;
                tape.segment_sum(per_arc, ctx.arc_owner.clone(), n)?
            }
            None => tape.constant(Array2::zeros((n, 1))),
        };

        let offsets = self.offsets(tape.value(d_plus), &ctx.degree);
        let (op, alpha_hat, log_scores, normalized) =
            DepthScore::evaluate(tape.value(d_plus), &ctx.degree, offsets.as_deref(), t_max)?;
        let eps_value = Array2::from_shape_vec((n, 1), normalized.clone()).expect("column");
        let eps = tape.custom(Arc::new(op), &[d_plus], eps_value);

        let ones_row = tape.constant(Array2::ones((1, t_max)));
        let steps = tape.constant(Array2::from_shape_fn((1, t_max), |(_, t)| (t + 1) as f64));
        let slope = tape.softplus(vars[self.slope]);
        let st = tape.matmul(slope, steps)?;
        let it = tape.matmul(vars[self.intercept], ones_row)?;
        let z = tape.add(st, it)?;
        let theta = tape.sigmoid(z);
        let lambda = self.config.lambda;
        let scaled = tape.scalar_mul(theta, 1.0 - lambda);
        let tau = tape.add_scalar(scaled, lambda);
        let tau_values: Vec<f64> = tape.value(tau).iter().copied().collect();

        let plan = match &self.forced_depths {
            Some(d) => {
                if d.len() != n {
                    return Err(crate::error::Error::LengthMismatch {
                        what: "forced depths",
                        expected: n,
                        actual: d.len(),
                    });
                }
                DepthPlan {
                    normalized_scores: normalized.clone(),
                    thresholds: tau_values,
                    ..DepthPlan::forced(d, t_max)
                }
            }
            None => assign_stopping_depths(&normalized, &tau_values),
        };

        let soft_gates = match (gating, &self.forced_depths) {
            (Gating::Soft(temp), None) => {
                if !(temp > 0.0) {
                    return Err(invalid("soft gating needs temperature > 0"));
                }
                let spread = tape.matmul(eps, ones_row)?;
                let ones_col = tape.constant(Array2::ones((n, 1)));
                let tau_rows = tape.matmul(ones_col, tau)?;
                let diff = tape.sub(spread, tau_rows)?;
                let diff = tape.scalar_mul(diff, 1.0 / temp);
                Some(tape.sigmoid(diff))
            }
            _ => None,
        };

        let mut h = h0;
        let mut embeddings = vec![h0];
        for t in 1..=t_max {
            let gate = match soft_gates {
                Some(all) => {
                    let pick = tape.constant(Array2::from_shape_fn((t_max, 1), |(r, _)| {
                        if r + 1 == t {
                            1.0
                        } else {
                            0.0
                        }
                    }));
                    tape.matmul(all, pick)?
                }
                None => {
                    let col = plan.gate_column(t);
                    if col.iter().all(|&g| g == 0.0) {
                        break;
                    }
                    tape.constant(col)
                }
            };
            let candidate = self.backbone.layer(t - 1, tape, vars, &ctx.prop, h, phase)?;
            h = tape.blend(gate, candidate, h)?;
            embeddings.push(h);
        }
        let logits = self.backbone.head(tape, vars, h, phase)?;
        Ok(ForwardOutput {
            logits,
            edge_probs,
            embeddings,
            plan,
            alpha_hat,
            log_scores,
        })
    }

    /// Evaluation-mode forward with hard gates.
    pub fn predict(&self, ctx: &GraphContext, x: &Array2<f64>) -> Result<Prediction> {
        let mut tape = Tape::new();
        let vars = crate::backbones::bind(&mut tape, &self.store);
        let xt = tape.constant(x.clone());
        let out = self.forward(&mut tape, &vars, ctx, xt, &mut Phase::Eval, Gating::Hard)?;
        Ok(Prediction {
            logits: tape.value(out.logits).clone(),
            edge_probs: out
                .edge_probs
                .map(|p| tape.value(p).iter().copied().collect())
                .unwrap_or_default(),
            plan: out.plan,
            alpha_hat: out.alpha_hat,
            log_scores: out.log_scores,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub logits: Array2<f64>,
    pub edge_probs: Vec<f64>,
    pub plan: DepthPlan,
    pub alpha_hat: Vec<f64>,
    pub log_scores: Vec<f64>,
}

/// Mean binary cross-entropy of the predicted same-label probabilities on
/// edges between training nodes; `None` when there are no such edges.
pub fn regularization_loss(
    tape: &mut Tape,
    edge_probs: Option<Tensor>,
    reg: &RegTargets,
) -> Result<Option<Tensor>> {
    let Some(p) = edge_probs else {
        return Ok(None);
    };
    if reg.is_empty() {
        return Ok(None);
    }
    let picked = tape.row_gather(p, reg.edge_ids.clone())?;
    Ok(Some(tape.binary_cross_entropy(picked, reg.targets.clone())?))
}

/// `L_task + L_reg` for variants with a learned head, `L_task` otherwise.
pub fn total_loss(tape: &mut Tape, task: Tensor, reg: Option<Tensor>, variant: Variant) -> Result<Tensor> {
    match reg {
        Some(r) if variant.uses_regularization() => tape.add(task, r),
        _ => Ok(task),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backbones::{bind, plain_forward, BackboneKind};
    use crate::graph::FeatureMatrix;
    use crate::ndiff::gradcheck::check_gradients;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn instance(n: usize, m: usize, d: usize, seed: u64) -> (Graph, Array2<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let edges: Vec<_> = (0..m)
            .map(|_| (rng.random_range(0..n), rng.random_range(0..n)))
            .collect();
        let g = Graph::build(n, &edges).unwrap();
        let x = Array2::from_shape_fn((n, d), |_| rng.random_range(-1.0..1.0));
        (g, x)
    }

    fn config(variant: Variant, t_max: usize, kind: BackboneKind) -> AdGnnConfig {
        AdGnnConfig {
            t_max,
            variant,
            backbone: BackboneConfig {
                kind,
                layers: t_max,
                hidden_dim: 5,
                dropout: 0.0,
            },
            ..AdGnnConfig::default()
        }
    }

    #[test]
    fn config_json_roundtrip_and_defaults() {
        let c: AdGnnConfig = serde_json::from_str(
            r#"{"t_max": 3, "lambda": 0.2, "variant": "heuristic",
                "gating": {"temperature": 0.05}, "heuristic": {"name": "jaccard"},
                "modified": {"beta": 0.9, "gamma": 1.1}}"#,
        )
        .unwrap();
        assert_eq!(c.t_max, 3);
        assert_eq!(c.heuristic.name, HeuristicName::Jaccard);
        assert_eq!(c.gating.mode, GateMode::Soft);
        assert_eq!(c.modified.gamma, 1.1);
        let back: AdGnnConfig = serde_json::from_str(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(back, c);
        assert!(serde_json::from_str::<AdGnnConfig>(r#"{"t_maks": 3}"#).is_err());
        let bad = AdGnnConfig {
            t_max: 0,
            ..AdGnnConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn annealing_schedule() {
        let g = GatingConfig::default();
        assert_eq!(g.temperature_at(0), 0.1);
        assert_eq!(g.temperature_at(99), 0.1);
        assert_eq!(g.temperature_at(100), 0.05);
        assert_eq!(g.temperature_at(10_000), 1e-3);
    }

    #[test]
    fn regular_graph_fast_variant_reduces_to_plain() {
        // A cycle is regular: every degree product is equal, so every score
        // normalizes to 1 and every node runs all layers.
        let n = 8;
        let edges: Vec<_> = (0..n).map(|i| (i, (i + 1) % n)).collect();
        let g = Graph::build(n, &edges).unwrap();
        let x = instance(n, 0, 4, 1).1;
        let cfg = config(Variant::FastDegree, 3, BackboneKind::GcnSymnorm);
        let model = AdGnn::new(&cfg, 4, 2, 5).unwrap();
        let ctx = model.context(&g).unwrap();
        let pred = model.predict(&ctx, &x).unwrap();
        assert!(pred.plan.stopping_depth.iter().all(|&t| t == 3));
        let plain = plain_forward(&model.backbone, &model.store, &g, &FeatureMatrix::new(x).unwrap()).unwrap();
        assert_eq!(pred.logits, plain);
    }

    #[test]
    fn lambda_one_only_top_nodes_aggregate() {
        let (g, x) = instance(20, 30, 4, 2);
        let mut cfg = config(Variant::FastDegree, 3, BackboneKind::GcnRownorm);
        cfg.lambda = 1.0;
        let model = AdGnn::new(&cfg, 4, 2, 5).unwrap();
        let pred = model.predict(&model.context(&g).unwrap(), &x).unwrap();
        for (v, &t) in pred.plan.stopping_depth.iter().enumerate() {
            let top = pred.plan.normalized_scores[v] == 1.0;
            assert_eq!(t, if top { 3 } else { 0 });
        }
    }

    #[test]
    fn frozen_rows_stay_fixed() {
        let (g, x) = instance(25, 50, 4, 3);
        let model = AdGnn::new(&config(Variant::Learned, 4, BackboneKind::GcnSymnorm), 4, 3, 1).unwrap();
        let ctx = model.context(&g).unwrap();
        let mut tape = Tape::new();
        let vars = bind(&mut tape, &model.store);
        let xt = tape.constant(x);
        let out = model
            .forward(&mut tape, &vars, &ctx, xt, &mut Phase::Eval, Gating::Hard)
            .unwrap();
        for (v, &tv) in out.plan.stopping_depth.iter().enumerate() {
            let frozen = tape.value(out.embeddings[tv.min(out.embeddings.len() - 1)]).row(v).to_owned();
            for e in &out.embeddings[tv.min(out.embeddings.len() - 1)..] {
                assert_eq!(tape.value(*e).row(v), frozen);
            }
        }
    }

    #[test]
    fn regularization_reference_values() {
        let mut tape = Tape::new();
        let p = tape.constant(Array2::from_elem((4, 1), 0.5));
        let reg = RegTargets {
            edge_ids: Arc::new(vec![0, 2, 3]),
            targets: Arc::new(vec![1.0, 0.0, 1.0]),
        };
        let l = regularization_loss(&mut tape, Some(p), &reg).unwrap().unwrap();
        assert!((tape.scalar(l) - 2f64.ln()).abs() < 1e-12);
        let empty = RegTargets {
            edge_ids: Arc::new(vec![]),
            targets: Arc::new(vec![]),
        };
        assert!(regularization_loss(&mut tape, Some(p), &empty).unwrap().is_none());
        let task = tape.constant(Array2::from_elem((1, 1), 1.0));
        let r = tape.constant(Array2::from_elem((1, 1), 0.5));
        let learned = total_loss(&mut tape, task, Some(r), Variant::Learned).unwrap();
        assert_eq!(tape.scalar(learned), 1.5);
        let fast = total_loss(&mut tape, task, Some(r), Variant::FastDegree).unwrap();
        assert_eq!(tape.scalar(fast), 1.0);
    }

    #[test]
    fn soft_forward_gradients() {
        let (g, x) = instance(9, 14, 3, 4);
        let cfg = config(Variant::Learned, 2, BackboneKind::GcnRownorm);
        let model = AdGnn::new(&cfg, 3, 2, 2).unwrap();
        let ctx = model.context(&g).unwrap();
        let labels = Arc::new((0..9).map(|v| v % 2).collect::<Vec<_>>());
        let rows = Arc::new((0..9).collect::<Vec<_>>());
        let report = check_gradients(
            |tape, leaves| {
                let xt = tape.constant(x.clone());
                let out = model.forward(tape, leaves, &ctx, xt, &mut Phase::Eval, Gating::Soft(0.5))?;
                tape.softmax_cross_entropy(out.logits, labels.clone(), rows.clone())
            },
            model.store.values(),
            1e-4,
        )
        .unwrap();
        assert!(report.max_rel_error() < 1e-4, "{report:?}");
    }
}
