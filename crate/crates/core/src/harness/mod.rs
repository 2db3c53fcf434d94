//! Experiment drivers, result tables, and the command-line front end.
//!
//! Every driver takes a JSON-deserializable config whose fields all have
//! defaults, validates it, and returns a [`Table`] with a fixed header.
//! Drivers are deterministic in their seeds.

pub mod cli;
pub mod io;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;
use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adaptive::{degree_similarity, AdGnn, AdGnnConfig, HeuristicName, Variant};
use crate::backbones::{BackboneConfig, BackboneKind};
use crate::csbm::{sample_graph, stream_rng, trial_seed, ClassStats, CsbmParams};
use crate::error::{Error, Result};
use crate::graph::{make_split, neighborhood_profiles, NodeProfile};
use crate::theory::{
    log_benefit_from_alpha, mc_iterated_stats, mc_single_layer_stats, multi_layer_stats,
    signal_preservation_factor,
};
use crate::train::{multi_seed, train_adaptive, AdaptiveHook, Dataset, ModelSpec, RunResult, TrainConfig};

const STREAM_PROFILES: u64 = 40;

fn config_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

/// One table cell.
#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Int(i64),
    Float(f64),
    Text(String),
}

impl Cell {
    fn csv(&self) -> String {
        match self {
            Cell::Int(i) => i.to_string(),
            Cell::Float(x) if x.is_finite() => format!("{x:.6}"),
            Cell::Float(x) => x.to_string(),
            Cell::Text(s) => s.clone(),
        }
    }

    fn json(&self) -> serde_json::Value {
        match self {
            Cell::Int(i) => (*i).into(),
            Cell::Float(x) => serde_json::Number::from_f64(*x).map_or(serde_json::Value::Null, Into::into),
            Cell::Text(s) => s.clone().into(),
        }
    }
}

impl From<f64> for Cell {
    fn from(x: f64) -> Self {
        Cell::Float(x)
    }
}

impl From<usize> for Cell {
    fn from(i: usize) -> Self {
        Cell::Int(i as i64)
    }
}

impl From<&str> for Cell {
    fn from(s: &str) -> Self {
        Cell::Text(s.to_string())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<&'static str>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new(header: &[&'static str]) -> Self {
        Self {
            header: header.to_vec(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header)?;
        for row in &self.rows {
            w.write_record(row.iter().map(Cell::csv))?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    /// Array of objects keyed by column name.
    pub fn to_json(&self) -> Result<String> {
        let rows: Vec<serde_json::Map<String, serde_json::Value>> = self
            .rows
            .iter()
            .map(|r| {
                self.header
                    .iter()
                    .zip(r)
                    .map(|(h, c)| (h.to_string(), c.json()))
                    .collect()
            })
            .collect();
        Ok(serde_json::to_string_pretty(&rows)? + "\n")
    }

    pub fn render(&self, format: OutputFormat) -> Result<String> {
        match format {
            OutputFormat::Csv => self.to_csv(),
            OutputFormat::Json => self.to_json(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    #[default]
    Csv,
    Json,
}

/// Balanced two-class CSBM description used by every synthetic driver.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CsbmConfig {
    pub n_per_class: usize,
    pub dim: usize,
    /// Distance between the class means.
    pub delta: f64,
    /// Per-coordinate feature standard deviation.
    pub sigma: f64,
    /// Target edge homophily.
    pub homophily: f64,
    pub mean_degree: f64,
    pub seed: u64,
}

impl Default for CsbmConfig {
    fn default() -> Self {
        Self {
            n_per_class: 1000,
            dim: 8,
            delta: 2.0,
            sigma: 1.0,
            homophily: 0.9,
            mean_degree: 10.0,
            seed: 0,
        }
    }
}

impl CsbmConfig {
    pub fn params(&self) -> Result<CsbmParams> {
        CsbmParams::balanced(
            self.n_per_class,
            self.dim,
            self.delta,
            self.sigma,
            self.homophily,
            self.mean_degree,
            self.seed,
        )
    }

    pub fn sample(&self) -> Result<Dataset> {
        let (g, x, y) = sample_graph(&self.params()?)?;
        Dataset::new(g, x, y)
    }

    fn heterophilic(mean_degree: f64) -> Self {
        Self {
            homophily: 0.0,
            mean_degree,
            ..Self::default()
        }
    }
}

/// A dataset directory if given, otherwise a sampled CSBM.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub dataset: Option<PathBuf>,
    pub csbm: CsbmConfig,
}

impl DataConfig {
    pub fn load(&self) -> Result<Dataset> {
        match &self.dataset {
            Some(dir) => {
                let (data, summary) = io::load_dataset(dir)?;
                eprintln!("loaded {}: {summary}", dir.display());
                Ok(data)
            }
            None => self.csbm.sample(),
        }
    }
}

fn check_unit_grid(name: &str, grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(config_err(format!("{name} grid is empty")));
    }
    if let Some(bad) = grid.iter().find(|x| !(0.0..=1.0).contains(*x)) {
        return Err(config_err(format!("{name} value {bad} outside [0, 1]")));
    }
    Ok(())
}

fn check_train(t: &TrainConfig) -> Result<()> {
    t.validate().map_err(|e| config_err(e.to_string()))?;
    if t.seeds.is_empty() {
        return Err(config_err("at least one seed required"));
    }
    Ok(())
}

fn acc_row(key: Cell, r: &RunResult) -> Vec<Cell> {
    vec![key, r.mean.into(), r.std.into()]
}

// ---------------------------------------------------------------- theory

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TheoryValidateConfig {
    pub num_profiles: usize,
    pub min_degree: usize,
    pub max_degree: usize,
    pub delta_sq: f64,
    pub sigma_sq: f64,
    pub trials: usize,
    /// Number of aggregation layers; above 1 uses the iterated oracle.
    pub layers: u32,
    pub seed: u64,
}

impl Default for TheoryValidateConfig {
    fn default() -> Self {
        Self {
            num_profiles: 50,
            min_degree: 1,
            max_degree: 20,
            delta_sq: 4.0,
            sigma_sq: 1.0,
            trials: 100_000,
            layers: 1,
            seed: 0,
        }
    }
}

pub const THEORY_HEADER: [&str; 10] = [
    "d_plus",
    "d_minus",
    "degree",
    "alpha",
    "analytic_signal",
    "mc_signal",
    "analytic_noise",
    "mc_noise",
    "rel_err_signal",
    "rel_err_noise",
];

/// `|mc - exact| / |exact|`, or the absolute error when `exact` is 0.
pub fn relative_error(mc: f64, exact: f64) -> f64 {
    let err = (mc - exact).abs();
    if exact == 0.0 {
        err
    } else {
        err / exact.abs()
    }
}

/// Random profiles with degree uniform in `[min, max]` and `d+` uniform in
/// `[0, degree]`.
pub fn random_profiles(count: usize, min_degree: usize, max_degree: usize, seed: u64) -> Vec<NodeProfile> {
    let mut rng = stream_rng(seed, STREAM_PROFILES);
    (0..count)
        .map(|_| {
            let d = rng.random_range(min_degree..=max_degree);
            let dp = rng.random_range(0..=d);
            NodeProfile::new(dp, d - dp)
        })
        .collect()
}

pub fn theory_validate(cfg: &TheoryValidateConfig) -> Result<Table> {
    if cfg.num_profiles == 0 || cfg.min_degree > cfg.max_degree || cfg.layers == 0 {
        return Err(config_err(
            "theory-validate needs num_profiles >= 1, min_degree <= max_degree, layers >= 1",
        ));
    }
    if !(cfg.delta_sq >= 0.0 && cfg.sigma_sq > 0.0) {
        return Err(config_err("delta_sq must be >= 0 and sigma_sq > 0"));
    }
    let stats = ClassStats {
        delta_sq: cfg.delta_sq,
        sigma_sq_intra: cfg.sigma_sq,
    };
    let mut table = Table::new(&THEORY_HEADER);
    for (i, p) in random_profiles(cfg.num_profiles, cfg.min_degree, cfg.max_degree, cfg.seed)
        .into_iter()
        .enumerate()
    {
        let seed = trial_seed(cfg.seed, i as u64);
        let exact = multi_layer_stats(p, stats, cfg.layers)?;
        let mc = if cfg.layers == 1 {
            mc_single_layer_stats(p, stats, cfg.trials, seed)?
        } else {
            mc_iterated_stats(p, stats, cfg.layers, cfg.trials, seed)?
        };
        table.push(vec![
            p.d_plus.into(),
            p.d_minus.into(),
            p.degree.into(),
            signal_preservation_factor(p).into(),
            exact.signal_variance.into(),
            mc.signal_variance.into(),
            exact.noise_variance.into(),
            mc.noise_variance.into(),
            relative_error(mc.signal_variance, exact.signal_variance).into(),
            relative_error(mc.noise_variance, exact.noise_variance).into(),
        ]);
    }
    Ok(table)
}

// ------------------------------------------------------------- homophily

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepHomophilyConfig {
    pub csbm: CsbmConfig,
    pub homophily: Vec<f64>,
    pub backbone: BackboneConfig,
    pub train: TrainConfig,
}

impl Default for SweepHomophilyConfig {
    fn default() -> Self {
        Self {
            csbm: CsbmConfig::default(),
            homophily: (0..=10).map(|i| i as f64 / 10.0).collect(),
            backbone: BackboneConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

pub const HOMOPHILY_HEADER: [&str; 3] = ["h", "acc_mean", "acc_std"];

pub fn sweep_homophily(cfg: &SweepHomophilyConfig) -> Result<Table> {
    check_unit_grid("homophily", &cfg.homophily)?;
    check_train(&cfg.train)?;
    let spec = ModelSpec::Plain(cfg.backbone.clone());
    let results = cfg
        .homophily
        .par_iter()
        .map(|&h| {
            let data = CsbmConfig {
                homophily: h,
                ..cfg.csbm.clone()
            }
            .sample()?;
            multi_seed(&spec, &data, &cfg.train, None)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut table = Table::new(&HOMOPHILY_HEADER);
    for (&h, r) in cfg.homophily.iter().zip(&results) {
        table.push(acc_row(h.into(), r));
    }
    Ok(table)
}

// ------------------------------------------------------ degree threshold

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepDegreeThresholdConfig {
    pub data: DataConfig,
    pub thresholds: Vec<usize>,
    /// Depth given to nodes above the threshold.
    pub depth: usize,
    pub backbone: BackboneConfig,
    pub train: TrainConfig,
}

impl Default for SweepDegreeThresholdConfig {
    fn default() -> Self {
        Self {
            data: DataConfig {
                dataset: None,
                csbm: CsbmConfig::heterophilic(4.0),
            },
            thresholds: (0..=6).collect(),
            depth: 2,
            backbone: BackboneConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

pub const THRESHOLD_HEADER: [&str; 3] = ["threshold", "acc_mean", "acc_std"];

/// Adaptive model config with stopping depths supplied externally.
fn forced_depth_config(backbone: &BackboneConfig, depth: usize) -> AdGnnConfig {
    AdGnnConfig {
        t_max: depth,
        variant: Variant::FastDegree,
        backbone: backbone.clone(),
        ..AdGnnConfig::default()
    }
}

fn forced_hook(depths: Vec<usize>) -> AdaptiveHook {
    std::sync::Arc::new(move |m: &mut AdGnn| m.force_depths(Some(depths.clone())))
}

pub fn sweep_degree_threshold(cfg: &SweepDegreeThresholdConfig) -> Result<Table> {
    if cfg.thresholds.is_empty() {
        return Err(config_err("threshold grid is empty"));
    }
    if cfg.depth == 0 {
        return Err(config_err("depth must be >= 1"));
    }
    check_train(&cfg.train)?;
    let data = cfg.data.load()?;
    let degrees = data.graph.degrees();
    let spec = ModelSpec::Adaptive(forced_depth_config(&cfg.backbone, cfg.depth));
    let results = cfg
        .thresholds
        .par_iter()
        .map(|&th| {
            let depths = degrees
                .iter()
                .map(|&d| if d <= th { 0 } else { cfg.depth })
                .collect();
            multi_seed(&spec, &data, &cfg.train, Some(&forced_hook(depths)))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut table = Table::new(&THRESHOLD_HEADER);
    for (&th, r) in cfg.thresholds.iter().zip(&results) {
        table.push(acc_row(th.into(), r));
    }
    Ok(table)
}

/// Accuracy of a classifier on raw features alone: the adaptive model with
/// every stopping depth forced to 0 (input layer and head only).
pub fn raw_feature_accuracy(data: &Dataset, backbone: &BackboneConfig, train: &TrainConfig) -> Result<RunResult> {
    let spec = ModelSpec::Adaptive(forced_depth_config(backbone, 1));
    let hook = forced_hook(vec![0; data.graph.num_nodes()]);
    multi_seed(&spec, data, train, Some(&hook))
}

// ----------------------------------------------------------------- depth

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DepthModel {
    Plain,
    Adaptive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepDepthConfig {
    pub data: DataConfig,
    pub depths: Vec<usize>,
    pub models: Vec<DepthModel>,
    pub backbone: BackboneConfig,
    /// Adaptive settings; `t_max` and the backbone are taken from the sweep.
    pub adaptive: AdGnnConfig,
    pub train: TrainConfig,
}

impl Default for SweepDepthConfig {
    fn default() -> Self {
        Self {
            data: DataConfig::default(),
            depths: vec![1, 2, 4, 8, 16, 32],
            models: vec![DepthModel::Plain, DepthModel::Adaptive],
            backbone: BackboneConfig::default(),
            adaptive: AdGnnConfig::default(),
            // deep plain stacks cost ~0.3 s per epoch at n = 2000; by 100
            // epochs validation accuracy has long plateaued
            train: TrainConfig {
                epochs: 100,
                ..TrainConfig::default()
            },
        }
    }
}

pub const DEPTH_HEADER: [&str; 4] = ["depth", "model", "acc_mean", "acc_std"];

fn model_label(m: DepthModel, kind: BackboneKind) -> String {
    match m {
        DepthModel::Plain => kind.name().to_string(),
        DepthModel::Adaptive => format!("ad_{}", kind.name()),
    }
}

pub fn sweep_depth(cfg: &SweepDepthConfig) -> Result<Table> {
    if cfg.depths.is_empty() || cfg.depths.contains(&0) {
        return Err(config_err("depth grid must be nonempty with depths >= 1"));
    }
    if cfg.models.is_empty() {
        return Err(config_err("model list is empty"));
    }
    check_train(&cfg.train)?;
    let data = cfg.data.load()?;
    let jobs: Vec<(usize, DepthModel)> = cfg
        .depths
        .iter()
        .flat_map(|&d| cfg.models.iter().map(move |&m| (d, m)))
        .collect();
    let results = jobs
        .par_iter()
        .map(|&(depth, m)| {
            let spec = match m {
                DepthModel::Plain => ModelSpec::Plain(BackboneConfig {
                    layers: depth,
                    ..cfg.backbone.clone()
                }),
                DepthModel::Adaptive => ModelSpec::Adaptive(AdGnnConfig {
                    t_max: depth,
                    backbone: cfg.backbone.clone(),
                    ..cfg.adaptive.clone()
                }),
            };
            multi_seed(&spec, &data, &cfg.train, None)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut table = Table::new(&DEPTH_HEADER);
    for (&(depth, m), r) in jobs.iter().zip(&results) {
        table.push(vec![
            depth.into(),
            Cell::Text(model_label(m, cfg.backbone.kind)),
            r.mean.into(),
            r.std.into(),
        ]);
    }
    Ok(table)
}

// ---------------------------------------------------------------- lambda

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepLambdaConfig {
    pub data: DataConfig,
    pub lambdas: Vec<f64>,
    pub adaptive: AdGnnConfig,
    pub train: TrainConfig,
}

impl Default for SweepLambdaConfig {
    fn default() -> Self {
        Self {
            data: DataConfig::default(),
            lambdas: (0..=5).map(|i| i as f64 / 10.0).collect(),
            adaptive: AdGnnConfig {
                t_max: 2,
                ..AdGnnConfig::default()
            },
            train: TrainConfig::default(),
        }
    }
}

pub const LAMBDA_HEADER: [&str; 3] = ["lambda", "acc_mean", "acc_std"];

pub fn sweep_lambda(cfg: &SweepLambdaConfig) -> Result<Table> {
    check_unit_grid("lambda", &cfg.lambdas)?;
    check_train(&cfg.train)?;
    cfg.adaptive.validate().map_err(|e| config_err(e.to_string()))?;
    let data = cfg.data.load()?;
    let results = cfg
        .lambdas
        .par_iter()
        .map(|&lambda| {
            let spec = ModelSpec::Adaptive(AdGnnConfig {
                lambda,
                ..cfg.adaptive.clone()
            });
            multi_seed(&spec, &data, &cfg.train, None)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut table = Table::new(&LAMBDA_HEADER);
    for (&l, r) in cfg.lambdas.iter().zip(&results) {
        table.push(acc_row(l.into(), r));
    }
    Ok(table)
}

// --------------------------------------------------------- depth profile

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProfileSource {
    /// Exact neighborhood profiles from the true labels.
    Labels,
    /// Estimated profiles from a trained adaptive model (first seed).
    Trained,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProfileDepthBenefitConfig {
    pub data: DataConfig,
    /// Number of layers `n` in the log depth benefit.
    pub layers: u32,
    pub source: ProfileSource,
    pub adaptive: AdGnnConfig,
    pub train: TrainConfig,
}

impl Default for ProfileDepthBenefitConfig {
    fn default() -> Self {
        Self {
            data: DataConfig::default(),
            layers: 2,
            source: ProfileSource::Labels,
            adaptive: AdGnnConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

pub const PROFILE_HEADER: [&str; 3] = ["degree", "mean_log_benefit", "node_count"];

/// Per-degree mean of the log depth benefit. Nodes whose signal is fully
/// cancelled (`α = 0`, log benefit `-inf`) contribute the sentinel value 0;
/// degrees without nodes are omitted.
pub fn degree_profile(degrees: &[usize], alphas: &[f64], layers: u32) -> Vec<(usize, f64, usize)> {
    let mut buckets: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
    for (&d, &a) in degrees.iter().zip(alphas) {
        let s = log_benefit_from_alpha(a, d as f64, layers as f64);
        let s = if s.is_finite() { s } else { 0.0 };
        let e = buckets.entry(d).or_insert((0.0, 0));
        e.0 += s;
        e.1 += 1;
    }
    buckets
        .into_iter()
        .map(|(d, (sum, count))| (d, sum / count as f64, count))
        .collect()
}

pub fn profile_depth_benefit(cfg: &ProfileDepthBenefitConfig) -> Result<Table> {
    if cfg.layers == 0 {
        return Err(config_err("layers must be >= 1"));
    }
    let data = cfg.data.load()?;
    let degrees = data.graph.degrees();
    let alphas: Vec<f64> = match cfg.source {
        ProfileSource::Labels => neighborhood_profiles(&data.graph, &data.labels)?
            .into_iter()
            .map(signal_preservation_factor)
            .collect(),
        ProfileSource::Trained => {
            check_train(&cfg.train)?;
            let seed = cfg.train.seeds[0];
            let split = make_split(data.graph.num_nodes(), cfg.train.split, seed)?;
            let (model, _) = train_adaptive(&cfg.adaptive, &data, &split, &cfg.train, seed)?;
            let ctx = model.context(&data.graph)?;
            model.predict(&ctx, data.features.values())?.alpha_hat
        }
    };
    let mut table = Table::new(&PROFILE_HEADER);
    for (d, mean, count) in degree_profile(&degrees, &alphas, cfg.layers) {
        table.push(vec![d.into(), mean.into(), count.into()]);
    }
    Ok(table)
}

// ------------------------------------------------------------ heuristics

/// Edge-similarity source for the non-learned variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScoreSource {
    Degree,
    Heuristic(HeuristicName),
}

impl ScoreSource {
    pub fn all() -> Vec<Self> {
        HeuristicName::ALL
            .into_iter()
            .map(Self::Heuristic)
            .chain([Self::Degree])
            .collect()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Degree => "degree",
            Self::Heuristic(h) => h.as_str(),
        }
    }
}

impl FromStr for ScoreSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "degree" {
            return Ok(Self::Degree);
        }
        s.parse().map(Self::Heuristic)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompareHeuristicsConfig {
    pub data: DataConfig,
    /// Names from `common_neighbors, jaccard, adamic_adar,
    /// betweenness_product, kshell_product, clustering_product, degree`.
    pub heuristics: Vec<String>,
    pub adaptive: AdGnnConfig,
    pub train: TrainConfig,
}

impl Default for CompareHeuristicsConfig {
    fn default() -> Self {
        Self {
            data: DataConfig::default(),
            heuristics: ScoreSource::all().iter().map(|s| s.as_str().to_string()).collect(),
            adaptive: AdGnnConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

pub const HEURISTIC_HEADER: [&str; 4] = ["heuristic", "acc_mean", "acc_std", "score_compute_ms"];

/// Wall-clock milliseconds to compute the normalized edge scores.
pub fn score_compute_ms(data: &Dataset, source: ScoreSource) -> Result<f64> {
    let start = Instant::now();
    match source {
        ScoreSource::Degree => degree_similarity(&data.graph).map(drop)?,
        ScoreSource::Heuristic(h) => crate::adaptive::heuristic_similarity(&data.graph, h).map(drop)?,
    }
    Ok(start.elapsed().as_secs_f64() * 1e3)
}

pub fn compare_heuristics(cfg: &CompareHeuristicsConfig) -> Result<Table> {
    if cfg.heuristics.is_empty() {
        return Err(config_err("heuristic list is empty"));
    }
    let sources = cfg
        .heuristics
        .iter()
        .map(|s| s.parse::<ScoreSource>().map_err(|e| config_err(e.to_string())))
        .collect::<Result<Vec<_>>>()?;
    check_train(&cfg.train)?;
    let data = cfg.data.load()?;
    let mut table = Table::new(&HEURISTIC_HEADER);
    for src in sources {
        let mut ad = cfg.adaptive.clone();
        match src {
            ScoreSource::Degree => ad.variant = Variant::FastDegree,
            ScoreSource::Heuristic(h) => {
                ad.variant = Variant::Heuristic;
                ad.heuristic.name = h;
            }
        }
        let ms = score_compute_ms(&data, src)?;
        let r = multi_seed(&ModelSpec::Adaptive(ad), &data, &cfg.train, None)?;
        table.push(vec![src.as_str().into(), r.mean.into(), r.std.into(), ms.into()]);
    }
    Ok(table)
}

// ------------------------------------------------------- train / generate

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainCommandConfig {
    pub data: DataConfig,
    pub model: ModelSpec,
    pub train: TrainConfig,
}

impl Default for TrainCommandConfig {
    fn default() -> Self {
        Self {
            data: DataConfig::default(),
            model: ModelSpec::Adaptive(AdGnnConfig::default()),
            train: TrainConfig::default(),
        }
    }
}

pub fn train_command(cfg: &TrainCommandConfig) -> Result<RunResult> {
    check_train(&cfg.train)?;
    let data = cfg.data.load()?;
    multi_seed(&cfg.model, &data, &cfg.train, None)
}

/// Samples a CSBM and writes it as a dataset directory.
pub fn generate(cfg: &CsbmConfig, out: &std::path::Path) -> Result<io::DatasetSummary> {
    let params = cfg.params().map_err(|e| config_err(e.to_string()))?;
    let (g, x, y) = sample_graph(&params)?;
    let data = Dataset::new(g, x, y)?;
    let meta = io::DatasetMeta::describe(&data, Some(params));
    io::write_dataset(out, &data, &meta)?;
    Ok(io::DatasetSummary::of(&data))
}

/// Human-readable list of per-seed results.
pub fn describe_run(r: &RunResult) -> String {
    let mut s = String::new();
    for p in &r.per_seed {
        let _ = write!(s, "seed {}: test {:.4} (epoch {})", p.seed, p.test_acc, p.best_epoch);
        if let Some(d) = p.mean_depth {
            let _ = write!(s, ", mean depth {d:.3}");
        }
        s.push('\n');
    }
    let _ = writeln!(s, "mean {:.4} std {:.4}", r.mean, r.std);
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_train() -> TrainConfig {
        TrainConfig {
            epochs: 5,
            seeds: vec![0, 1],
            ..TrainConfig::default()
        }
    }

    fn tiny_csbm(h: f64) -> CsbmConfig {
        CsbmConfig {
            n_per_class: 40,
            homophily: h,
            mean_degree: 4.0,
            ..CsbmConfig::default()
        }
    }

    #[test]
    fn csv_and_json_rendering() {
        let mut t = Table::new(&["a", "b", "c"]);
        t.push(vec![1usize.into(), 0.5.into(), "x".into()]);
        assert_eq!(t.to_csv().unwrap(), "a,b,c\n1,0.500000,x\n");
        let v: serde_json::Value = serde_json::from_str(&t.to_json().unwrap()).unwrap();
        assert_eq!(v[0]["b"], 0.5);
        assert_eq!(v[0]["c"], "x");
    }

    #[test]
    fn relative_error_falls_back_to_absolute() {
        assert_eq!(relative_error(1.1, 1.0), 0.10000000000000009);
        assert_eq!(relative_error(0.01, 0.0), 0.01);
    }

    #[test]
    fn degree_profile_buckets() {
        let rows = degree_profile(&[1, 1, 3, 3], &[0.0, 1.0, 1.0, 0.5], 1);
        assert_eq!(rows.len(), 2);
        // degree 1: sentinel 0 and ln 2
        assert!((rows[0].1 - 2f64.ln() / 2.0).abs() < 1e-12);
        assert_eq!(rows[0].2, 2);
        let expect = (4f64.ln() + (0.25f64.ln() + 4f64.ln())) / 2.0;
        assert!((rows[1].1 - expect).abs() < 1e-12);
    }

    #[test]
    fn score_source_names_round_trip() {
        let all = ScoreSource::all();
        assert_eq!(all.len(), 7);
        for s in all {
            assert_eq!(s.as_str().parse::<ScoreSource>().unwrap(), s);
        }
        assert!("pagerank".parse::<ScoreSource>().is_err());
    }

    #[test]
    fn single_point_grids_give_single_rows() {
        let t = sweep_homophily(&SweepHomophilyConfig {
            csbm: tiny_csbm(0.5),
            homophily: vec![0.5],
            train: tiny_train(),
            ..SweepHomophilyConfig::default()
        })
        .unwrap();
        assert_eq!(t.rows.len(), 1);
        let t = sweep_lambda(&SweepLambdaConfig {
            data: DataConfig {
                dataset: None,
                csbm: tiny_csbm(0.9),
            },
            lambdas: vec![0.0],
            train: tiny_train(),
            ..SweepLambdaConfig::default()
        })
        .unwrap();
        assert_eq!(t.rows.len(), 1);
    }

    #[test]
    fn invalid_grids_are_config_errors() {
        let bad = SweepHomophilyConfig {
            homophily: vec![1.5],
            ..SweepHomophilyConfig::default()
        };
        assert!(matches!(sweep_homophily(&bad), Err(Error::Config(_))));
        let bad = CompareHeuristicsConfig {
            heuristics: vec!["nope".into()],
            ..CompareHeuristicsConfig::default()
        };
        assert!(matches!(compare_heuristics(&bad), Err(Error::Config(_))));
    }

    #[test]
    fn depth_sweep_has_grid_times_models_rows() {
        let t = sweep_depth(&SweepDepthConfig {
            data: DataConfig {
                dataset: None,
                csbm: tiny_csbm(0.9),
            },
            depths: vec![1, 3],
            train: tiny_train(),
            ..SweepDepthConfig::default()
        })
        .unwrap();
        assert_eq!(t.rows.len(), 4);
        assert_eq!(t.rows[0][1], Cell::Text("gcn_symnorm".into()));
        assert_eq!(t.rows[1][1], Cell::Text("ad_gcn_symnorm".into()));
    }

    #[test]
    fn threshold_above_max_degree_matches_raw_features() {
        let cfg = SweepDegreeThresholdConfig {
            data: DataConfig {
                dataset: None,
                csbm: tiny_csbm(0.0),
            },
            thresholds: vec![1000],
            train: tiny_train(),
            ..SweepDegreeThresholdConfig::default()
        };
        let t = sweep_degree_threshold(&cfg).unwrap();
        let data = cfg.data.load().unwrap();
        let raw = raw_feature_accuracy(&data, &cfg.backbone, &cfg.train).unwrap();
        assert_eq!(t.rows[0][1], Cell::Float(raw.mean));
        assert_eq!(t.rows[0][2], Cell::Float(raw.std));
    }

    #[test]
    fn config_defaults_round_trip_through_json() {
        let c = SweepDepthConfig::default();
        let s = serde_json::to_string(&c).unwrap();
        assert_eq!(serde_json::from_str::<SweepDepthConfig>(&s).unwrap(), c);
        let t = TrainCommandConfig::default();
        let s = serde_json::to_string(&t).unwrap();
        assert_eq!(serde_json::from_str::<TrainCommandConfig>(&s).unwrap(), t);
        let partial: SweepLambdaConfig = serde_json::from_str(r#"{"lambdas": [0.0, 0.2]}"#).unwrap();
        assert_eq!(partial.lambdas, vec![0.0, 0.2]);
        assert!(serde_json::from_str::<SweepLambdaConfig>(r#"{"lamdas": []}"#).is_err());
    }
}
