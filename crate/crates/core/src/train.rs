//! Training loop, accuracy, and multi-seed statistics.

use std::io::Write;
use std::sync::Arc;

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adaptive::{
    regularization_loss, total_loss, AdGnn, AdGnnConfig, DepthPlan, GateMode, Gating, GraphContext,
    RegTargets,
};
use crate::backbones::{bind, init_params, BackboneConfig, BackboneParams, Phase, Propagation};
use crate::csbm::stream_rng;
use crate::error::{invalid, Error, Result};
use crate::graph::{make_split, FeatureMatrix, Graph, LabelVector, Role, SplitMask};
use crate::ndiff::optim::{Adam, AdamConfig, ParamStore};
use crate::ndiff::Tape;

const STREAM_DROPOUT: u64 = 30;

/// Graph, features and labels of one node-classification task.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub graph: Graph,
    pub features: FeatureMatrix,
    pub labels: LabelVector,
}

impl Dataset {
    pub fn new(graph: Graph, features: FeatureMatrix, labels: LabelVector) -> Result<Self> {
        let n = graph.num_nodes();
        for (what, len) in [("feature rows", features.rows()), ("labels", labels.len())] {
            if len != n {
                return Err(Error::LengthMismatch {
                    what,
                    expected: n,
                    actual: len,
                });
            }
        }
        Ok(Self {
            graph,
            features,
            labels,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub dropout: f64,
    pub hidden_dim: usize,
    pub seeds: Vec<u64>,
    /// Stop after this many epochs without a validation improvement.
    pub early_stop_patience: Option<usize>,
    /// Train/validation/test fractions of the per-seed random split.
    pub split: (f64, f64, f64),
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            lr: 0.01,
            weight_decay: 5e-4,
            dropout: 0.5,
            hidden_dim: 32,
            seeds: vec![0, 1, 2, 3, 4],
            early_stop_patience: None,
            split: (0.6, 0.2, 0.2),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(invalid("epochs must be >= 1"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(invalid("lr must be > 0"));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(invalid("weight_decay must be >= 0"));
        }
        if self.hidden_dim == 0 {
            return Err(invalid("hidden_dim must be > 0"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(invalid("dropout must be in [0, 1)"));
        }
        Ok(())
    }
}

/// Which model to train.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "model")]
pub enum ModelSpec {
    Plain(BackboneConfig),
    Adaptive(AdGnnConfig),
}

impl ModelSpec {
    /// Copies the training hyperparameters that live on the backbone.
    pub fn with_train(&self, t: &TrainConfig) -> Self {
        let patch = |b: &BackboneConfig| BackboneConfig {
            hidden_dim: t.hidden_dim,
            dropout: t.dropout,
            ..b.clone()
        };
        match self {
            Self::Plain(b) => Self::Plain(patch(b)),
            Self::Adaptive(a) => Self::Adaptive(AdGnnConfig {
                backbone: patch(&a.backbone),
                ..a.clone()
            }),
        }
    }
}

/// Outcome of one seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    pub test_acc: f64,
    pub val_acc: f64,
    pub best_epoch: usize,
    pub epochs_run: usize,
    /// Mean stopping depth at the selected epoch (adaptive models only).
    pub mean_depth: Option<f64>,
    pub depth_histogram: Option<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub per_seed: Vec<SeedResult>,
    pub mean: f64,
    /// Population standard deviation of the per-seed test accuracies.
    pub std: f64,
}

impl RunResult {
    pub fn from_seeds(per_seed: Vec<SeedResult>) -> Result<Self> {
        let accs: Vec<f64> = per_seed.iter().map(|r| r.test_acc).collect();
        let (mean, std) = mean_std(&accs)?;
        Ok(Self {
            per_seed,
            mean,
            std,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// One CSV row per seed.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["seed", "test_acc", "val_acc", "best_epoch", "epochs_run", "mean_depth"])?;
        for r in &self.per_seed {
            out.write_record([
                r.seed.to_string(),
                format!("{:.6}", r.test_acc),
                format!("{:.6}", r.val_acc),
                r.best_epoch.to_string(),
                r.epochs_run.to_string(),
                r.mean_depth.map(|d| format!("{d:.4}")).unwrap_or_default(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> Result<(f64, f64)> {
    if values.is_empty() {
        return Err(invalid("need at least one value"));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    Ok((mean, var.sqrt()))
}

/// Fraction of masked rows whose argmax (ties to the lowest class index)
/// equals the label.
pub fn accuracy(logits: &Array2<f64>, labels: &LabelVector, mask: &[bool]) -> Result<f64> {
    if mask.len() != logits.nrows() || labels.len() != logits.nrows() {
        return Err(Error::LengthMismatch {
            what: "accuracy inputs",
            expected: logits.nrows(),
            actual: if mask.len() != logits.nrows() { mask.len() } else { labels.len() },
        });
    }
    let mut hits = 0usize;
    let mut total = 0usize;
    for (v, row) in logits.rows().into_iter().enumerate() {
        if !mask[v] {
            continue;
        }
        total += 1;
        let mut best = 0;
        for (c, &x) in row.iter().enumerate() {
            if x > row[best] {
                best = c;
            }
        }
        hits += usize::from(best == labels.get(v));
    }
    if total == 0 {
        return Err(Error::EmptyMask("accuracy"));
    }
    Ok(hits as f64 / total as f64)
}

enum Model {
    Plain {
        store: ParamStore,
        params: BackboneParams,
        prop: Propagation,
    },
    Adaptive {
        model: Box<AdGnn>,
        ctx: GraphContext,
        reg: RegTargets,
    },
}

impl Model {
    fn store(&self) -> &ParamStore {
        match self {
            Model::Plain { store, .. } => store,
            Model::Adaptive { model, .. } => &model.store,
        }
    }

    fn store_mut(&mut self) -> &mut ParamStore {
        match self {
            Model::Plain { store, .. } => store,
            Model::Adaptive { model, .. } => &mut model.store,
        }
    }

    fn predict(&self, x: &Array2<f64>) -> Result<(Array2<f64>, Option<DepthPlan>)> {
        match self {
            Model::Plain { store, params, prop } => {
                let mut tape = Tape::new();
                let vars = bind(&mut tape, store);
                let xt = tape.constant(x.clone());
                let out = params.forward(&mut tape, &vars, prop, xt, &mut Phase::Eval)?;
                Ok((tape.value(out).clone(), None))
            }
            Model::Adaptive { model, ctx, .. } => {
                let p = model.predict(ctx, x)?;
                Ok((p.logits, Some(p.plan)))
            }
        }
    }
}

/// Optional hook applied to a freshly built adaptive model (for example to
/// force stopping depths or install calibration factors).
pub type AdaptiveHook = Arc<dyn Fn(&mut AdGnn) + Send + Sync>;

/// Trains one model on one split with Adam, evaluating hard-gated accuracy
/// after every update and reporting the test accuracy at the epoch of best
/// validation accuracy (earliest on ties).
pub fn train_model(
    spec: &ModelSpec,
    data: &Dataset,
    split: &SplitMask,
    cfg: &TrainConfig,
    seed: u64,
    hook: Option<&AdaptiveHook>,
) -> Result<SeedResult> {
    fit(spec, data, split, cfg, seed, hook).map(|(_, r)| r)
}

/// Like [`train_model`] for an adaptive model, also returning the model with
/// the parameters of the selected epoch.
pub fn train_adaptive(
    config: &AdGnnConfig,
    data: &Dataset,
    split: &SplitMask,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<(AdGnn, SeedResult)> {
    let (model, r) = fit(&ModelSpec::Adaptive(config.clone()), data, split, cfg, seed, None)?;
    match model {
        Model::Adaptive { model, .. } => Ok((*model, r)),
        Model::Plain { .. } => unreachable!("adaptive spec builds an adaptive model"),
    }
}

fn fit(
    spec: &ModelSpec,
    data: &Dataset,
    split: &SplitMask,
    cfg: &TrainConfig,
    seed: u64,
    hook: Option<&AdaptiveHook>,
) -> Result<(Model, SeedResult)> {
    cfg.validate()?;
    if split.len() != data.graph.num_nodes() {
        return Err(Error::LengthMismatch {
            what: "split",
            expected: data.graph.num_nodes(),
            actual: split.len(),
        });
    }
    let train_rows: Arc<Vec<usize>> = Arc::new(
        (0..split.len()).filter(|&v| split.roles()[v] == Role::Train).collect(),
    );
    if train_rows.is_empty() {
        return Err(Error::EmptyMask("training nodes"));
    }
    let val_mask = split.mask(Role::Val);
    let test_mask = split.mask(Role::Test);
    let labels = Arc::new(data.labels.labels().to_vec());
    let x = data.features.values();
    let (in_dim, classes) = (data.features.cols(), data.labels.num_classes());

    let spec = spec.with_train(cfg);
    let mut model = match &spec {
        ModelSpec::Plain(b) => {
            let (store, params) = init_params(b, in_dim, classes, seed)?;
            Model::Plain {
                store,
                params,
                prop: Propagation::new(b.kind, &data.graph, None)?,
            }
        }
        ModelSpec::Adaptive(a) => {
            let mut m = AdGnn::new(a, in_dim, classes, seed)?;
            if let Some(h) = hook {
                h(&mut m);
            }
            let ctx = m.context(&data.graph)?;
            Model::Adaptive {
                model: Box::new(m),
                ctx,
                reg: RegTargets::new(&data.graph, split, &data.labels),
            }
        }
    };
    let mut adam = Adam::new(
        AdamConfig {
            lr: cfg.lr,
            weight_decay: cfg.weight_decay,
            ..AdamConfig::default()
        },
        model.store(),
    );
    let mut rng = stream_rng(seed, STREAM_DROPOUT);

    let mut best: Option<(f64, f64, usize, Option<DepthPlan>)> = None;
    let mut best_params = Vec::new();
    let mut epochs_run = 0;
    for epoch in 0..cfg.epochs {
        epochs_run = epoch + 1;
        let mut tape = Tape::new();
        let vars = bind(&mut tape, model.store());
        let xt = tape.constant(x.clone());
        let mut phase = Phase::Train(&mut rng);
        let loss = match &model {
            Model::Plain { params, prop, .. } => {
                let logits = params.forward(&mut tape, &vars, prop, xt, &mut phase)?;
                tape.softmax_cross_entropy(logits, labels.clone(), train_rows.clone())?
            }
            Model::Adaptive { model, ctx, reg } => {
                let gating = match model.config.gating.mode {
                    GateMode::Hard => Gating::Hard,
                    GateMode::Soft => Gating::Soft(model.config.gating.temperature_at(epoch)),
                };
                let out = model.forward(&mut tape, &vars, ctx, xt, &mut phase, gating)?;
                let task = tape.softmax_cross_entropy(out.logits, labels.clone(), train_rows.clone())?;
                let r = if model.config.variant.uses_regularization() {
                    regularization_loss(&mut tape, out.edge_probs, reg)?
                } else {
                    None
                };
                total_loss(&mut tape, task, r, model.config.variant)?
            }
        };
        let value = tape.scalar(loss);
        if !value.is_finite() {
            return Err(Error::Divergence { epoch, loss: value });
        }
        let grads = tape.backward(loss)?;
        let grad_list: Vec<Array2<f64>> = vars
            .iter()
            .zip(model.store().values())
            .map(|(&t, v)| grads.get_or_zeros(t, v.dim()))
            .collect();
        adam.step(model.store_mut(), &grad_list)?;

        let (logits, plan) = model.predict(x)?;
        if logits.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence { epoch, loss: f64::NAN });
        }
        let val = accuracy(&logits, &data.labels, &val_mask)?;
        if best.as_ref().is_none_or(|b| val > b.0) {
            let test = accuracy(&logits, &data.labels, &test_mask)?;
            best = Some((val, test, epoch, plan));
            best_params = model.store().values().to_vec();
        }
        if let (Some(p), Some(b)) = (cfg.early_stop_patience, &best) {
            if epoch - b.2 >= p {
                break;
            }
        }
    }
    let (val_acc, test_acc, best_epoch, plan) = best.expect("at least one epoch");
    for (dst, src) in model.store_mut().values_mut().iter_mut().zip(best_params) {
        *dst = src;
    }
    let result = SeedResult {
        seed,
        test_acc,
        val_acc,
        best_epoch,
        epochs_run,
        mean_depth: plan.as_ref().map(|p| p.mean_depth()),
        depth_histogram: plan.map(|p| p.histogram()),
    };
    Ok((model, result))
}

/// Trains one model per seed (each with its own random split and
/// initialization), in parallel, and aggregates test accuracy.
pub fn multi_seed(
    spec: &ModelSpec,
    data: &Dataset,
    cfg: &TrainConfig,
    hook: Option<&AdaptiveHook>,
) -> Result<RunResult> {
    if cfg.seeds.is_empty() {
        return Err(invalid("at least one seed required"));
    }
    let per_seed = cfg
        .seeds
        .par_iter()
        .map(|&seed| {
            let split = make_split(data.graph.num_nodes(), cfg.split, seed)?;
            train_model(spec, data, &split, cfg, seed, hook)
        })
        .collect::<Result<Vec<_>>>()?;
    RunResult::from_seeds(per_seed)
}
