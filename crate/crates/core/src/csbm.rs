//! Two-class contextual stochastic block model (CSBM).
//!
//! Structure and features are drawn from separate ChaCha8 streams of the
//! same seed ([`STREAM_STRUCTURE`], [`STREAM_FEATURES`]), so either can be
//! redrawn without disturbing the other.

use ndarray::Array2;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::graph::{FeatureMatrix, Graph, LabelVector, NodeProfile};

pub const STREAM_STRUCTURE: u64 = 1;
pub const STREAM_FEATURES: u64 = 2;

/// Seeded ChaCha8 generator positioned on `stream`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Seed of the `index`-th independent trial derived from a base seed.
pub fn trial_seed(seed: u64, index: u64) -> u64 {
    seed ^ index
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsbmParams {
    pub n0: usize,
    pub n1: usize,
    pub mu0: Vec<f64>,
    pub mu1: Vec<f64>,
    /// Standard deviation of the isotropic feature noise.
    pub sigma_intra: f64,
    pub p_in: f64,
    pub p_out: f64,
    pub seed: u64,
}

/// Class prototypes `μ⁰ = −μ¹ = (Δ/2, 0, …, 0)`, so `‖μ⁰ − μ¹‖² = Δ²`.
pub fn symmetric_prototypes(delta: f64, dim: usize) -> (Vec<f64>, Vec<f64>) {
    let mut mu0 = vec![0.0; dim.max(1)];
    mu0[0] = delta / 2.0;
    let mu1 = mu0.iter().map(|x| -x).collect();
    (mu0, mu1)
}

impl CsbmParams {
    /// Balanced CSBM with symmetric prototypes and edge probabilities solved
    /// from a homophily target and mean degree.
    pub fn balanced(
        n_per_class: usize,
        dim: usize,
        delta: f64,
        sigma_intra: f64,
        homophily: f64,
        mean_degree: f64,
        seed: u64,
    ) -> Result<Self> {
        let (p_in, p_out) = homophily_from_target(homophily, mean_degree, n_per_class, n_per_class)?;
        let (mu0, mu1) = symmetric_prototypes(delta, dim);
        let p = Self {
            n0: n_per_class,
            n1: n_per_class,
            mu0,
            mu1,
            sigma_intra,
            p_in,
            p_out,
            seed,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn num_nodes(&self) -> usize {
        self.n0 + self.n1
    }

    pub fn dim(&self) -> usize {
        self.mu0.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.n0 + self.n1 < 2 {
            return Err(invalid("CSBM needs at least 2 nodes"));
        }
        if self.mu0.is_empty() || self.mu0.len() != self.mu1.len() {
            return Err(invalid("prototypes must be nonempty and of equal dimension"));
        }
        if !(self.sigma_intra.is_finite() && self.sigma_intra >= 0.0) {
            return Err(invalid("sigma_intra must be finite and >= 0"));
        }
        for (name, p) in [("p_in", self.p_in), ("p_out", self.p_out)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(invalid(format!("{name} = {p} outside [0, 1]")));
            }
        }
        Ok(())
    }

    pub fn class_stats(&self) -> ClassStats {
        ClassStats {
            delta_sq: self
                .mu0
                .iter()
                .zip(&self.mu1)
                .map(|(a, b)| (a - b) * (a - b))
                .sum(),
            sigma_sq_intra: self.sigma_intra * self.sigma_intra,
        }
    }

    pub fn labels(&self) -> LabelVector {
        let mut y = vec![0; self.n0];
        y.extend(std::iter::repeat_n(1, self.n1));
        LabelVector::new(y, 2).expect("binary labels")
    }
}

/// Signal (`Δ²`) and noise (`σ²`) variances of a CSBM.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassStats {
    pub delta_sq: f64,
    pub sigma_sq_intra: f64,
}

/// Draws graph, features and labels. Nodes `0..n0` are class 0.
pub fn sample_graph(p: &CsbmParams) -> Result<(Graph, FeatureMatrix, LabelVector)> {
    p.validate()?;
    let labels = p.labels();
    let graph = sample_structure(p, &labels)?;
    let features = sample_features(p, &labels)?;
    Ok((graph, features, labels))
}

/// Independent Bernoulli edge for every unordered pair (structure stream).
pub fn sample_structure(p: &CsbmParams, labels: &LabelVector) -> Result<Graph> {
    let n = p.num_nodes();
    let mut rng = stream_rng(p.seed, STREAM_STRUCTURE);
    let mut edges = Vec::new();
    for u in 0..n {
        for v in (u + 1)..n {
            let prob = if labels.get(u) == labels.get(v) {
                p.p_in
            } else {
                p.p_out
            };
            if rng.random::<f64>() < prob {
                edges.push((u, v));
            }
        }
    }
    Graph::build(n, &edges)
}

/// `x_v = μ^{y_v} + ε_v`, `ε_v ~ N(0, σ² I)` (feature stream).
pub fn sample_features(p: &CsbmParams, labels: &LabelVector) -> Result<FeatureMatrix> {
    let mut rng = stream_rng(p.seed, STREAM_FEATURES);
    let d = p.dim();
    let mut x = Array2::zeros((p.num_nodes(), d));
    for (v, mut row) in x.rows_mut().into_iter().enumerate() {
        let mu = if labels.get(v) == 0 { &p.mu0 } else { &p.mu1 };
        for (k, e) in row.iter_mut().enumerate() {
            let z: f64 = rng.sample(StandardNormal);
            *e = mu[k] + p.sigma_intra * z;
        }
    }
    FeatureMatrix::new(x)
}

/// Edge probabilities giving an expected same-class edge fraction `h` and
/// expected mean degree `mean_degree`, using exact pair counts.
pub fn homophily_from_target(h: f64, mean_degree: f64, n0: usize, n1: usize) -> Result<(f64, f64)> {
    if !(0.0..=1.0).contains(&h) {
        return Err(Error::Infeasible(format!("homophily {h} outside [0, 1]")));
    }
    if !(mean_degree.is_finite() && mean_degree >= 0.0) {
        return Err(Error::Infeasible(format!("mean degree {mean_degree} invalid")));
    }
    let n = (n0 + n1) as f64;
    let expected_edges = n * mean_degree / 2.0;
    let pairs_in = (n0 * n0.saturating_sub(1) / 2 + n1 * n1.saturating_sub(1) / 2) as f64;
    let pairs_out = (n0 * n1) as f64;
    let solve = |want: f64, pairs: f64, what: &str| -> Result<f64> {
        if want == 0.0 {
            return Ok(0.0);
        }
        if pairs == 0.0 {
            return Err(Error::Infeasible(format!("no {what} pairs available")));
        }
        let p = want / pairs;
        if p > 1.0 {
            return Err(Error::Infeasible(format!(
                "{what} edge probability {p:.4} > 1 (h = {h}, mean degree = {mean_degree})"
            )));
        }
        Ok(p)
    };
    Ok((
        solve(h * expected_edges, pairs_in, "same-class")?,
        solve((1.0 - h) * expected_edges, pairs_out, "cross-class")?,
    ))
}

/// Fraction of undirected edges whose endpoints share a label.
pub fn measured_edge_homophily(g: &Graph, y: &LabelVector) -> Result<f64> {
    if g.num_edges() == 0 {
        return Err(Error::EmptyEdgeSet);
    }
    if y.len() != g.num_nodes() {
        return Err(Error::LengthMismatch {
            what: "labels",
            expected: g.num_nodes(),
            actual: y.len(),
        });
    }
    let same = g
        .edges()
        .iter()
        .filter(|&&(u, v)| y.get(u) == y.get(v))
        .count();
    Ok(same as f64 / g.num_edges() as f64)
}

/// Feature model used by the neighborhood sampler: prototypes and noise.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureModel {
    pub mu: [Vec<f64>; 2],
    pub sigma_intra: f64,
}

impl FeatureModel {
    /// Symmetric prototypes of dimension `dim` realizing `stats`.
    pub fn from_stats(stats: ClassStats, dim: usize) -> Self {
        let (mu0, mu1) = symmetric_prototypes(stats.delta_sq.sqrt(), dim);
        Self {
            mu: [mu0, mu1],
            sigma_intra: stats.sigma_sq_intra.sqrt(),
        }
    }

    pub fn dim(&self) -> usize {
        self.mu[0].len()
    }
}

/// Features of a node and its neighborhood under the CSBM assumptions:
/// the center has label `y_v`, `d_plus` neighbors share it, `d_minus` carry
/// the other label, and every noise term is an independent draw.
#[derive(Debug, Clone, PartialEq)]
pub struct Neighborhood {
    pub center: Vec<f64>,
    pub neighbors: Vec<Vec<f64>>,
}

pub fn sample_neighborhood<R: Rng + ?Sized>(
    profile: NodeProfile,
    model: &FeatureModel,
    y_v: usize,
    rng: &mut R,
) -> Neighborhood {
    let mut draw = |class: usize| -> Vec<f64> {
        model.mu[class]
            .iter()
            .map(|&m| {
                let z: f64 = rng.sample(StandardNormal);
                m + model.sigma_intra * z
            })
            .collect()
    };
    let center = draw(y_v);
    let mut neighbors = Vec::with_capacity(profile.degree);
    for _ in 0..profile.d_plus {
        neighbors.push(draw(y_v));
    }
    for _ in 0..profile.d_minus {
        neighbors.push(draw(1 - y_v));
    }
    Neighborhood { center, neighbors }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(p_in: f64, p_out: f64, sigma: f64) -> CsbmParams {
        let (mu0, mu1) = symmetric_prototypes(2.0, 4);
        CsbmParams {
            n0: 150,
            n1: 150,
            mu0,
            mu1,
            sigma_intra: sigma,
            p_in,
            p_out,
            seed: 11,
        }
    }

    #[test]
    fn no_cross_edges_when_p_out_zero() {
        let (g, _, y) = sample_graph(&params(0.05, 0.0, 1.0)).unwrap();
        assert!(g.num_edges() > 0);
        assert!(g.edges().iter().all(|&(u, v)| y.get(u) == y.get(v)));
    }

    #[test]
    fn zero_noise_features_equal_prototypes() {
        let p = params(0.01, 0.01, 0.0);
        let (_, x, y) = sample_graph(&p).unwrap();
        for v in 0..p.num_nodes() {
            let mu = if y.get(v) == 0 { &p.mu0 } else { &p.mu1 };
            assert_eq!(x.values().row(v).to_vec(), *mu);
        }
    }

    #[test]
    fn deterministic_and_streams_independent() {
        let p = params(0.03, 0.01, 1.0);
        let a = sample_graph(&p).unwrap();
        let b = sample_graph(&p).unwrap();
        assert_eq!(a.0, b.0);
        assert_eq!(a.1, b.1);
        // Changing the noise level changes features only.
        let q = CsbmParams {
            sigma_intra: 2.0,
            ..p.clone()
        };
        let c = sample_graph(&q).unwrap();
        assert_eq!(a.0, c.0);
        assert_ne!(a.1, c.1);
    }

    #[test]
    fn too_small_rejected() {
        let mut p = params(0.1, 0.1, 1.0);
        p.n0 = 1;
        p.n1 = 0;
        assert!(sample_graph(&p).is_err());
    }

    #[test]
    fn homophily_target_extremes() {
        let (p_in, p_out) = homophily_from_target(1.0, 10.0, 500, 500).unwrap();
        assert_eq!(p_out, 0.0);
        assert!(p_in > 0.0);
        let (p_in, p_out) = homophily_from_target(0.0, 10.0, 500, 500).unwrap();
        assert_eq!(p_in, 0.0);
        assert!((p_out - 5000.0 / 250_000.0).abs() < 1e-15);
        assert!(homophily_from_target(1.0, 50.0, 20, 20).is_err());
        assert!(homophily_from_target(1.2, 5.0, 20, 20).is_err());
    }

    #[test]
    fn measured_homophily_examples() {
        let t = Graph::build(3, &[(0, 1), (1, 2), (2, 0)]).unwrap();
        let y = LabelVector::new(vec![0, 0, 1], 2).unwrap();
        assert!((measured_edge_homophily(&t, &y).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        let same = LabelVector::new(vec![1, 1, 1], 2).unwrap();
        assert_eq!(measured_edge_homophily(&t, &same).unwrap(), 1.0);
        let bip = Graph::build(4, &[(0, 2), (0, 3), (1, 2), (1, 3)]).unwrap();
        let yb = LabelVector::new(vec![0, 0, 1, 1], 2).unwrap();
        assert_eq!(measured_edge_homophily(&bip, &yb).unwrap(), 0.0);
        let empty = Graph::build(3, &[]).unwrap();
        assert!(matches!(measured_edge_homophily(&empty, &y), Err(Error::EmptyEdgeSet)));
    }

    #[test]
    fn neighborhood_zero_noise_and_isolated() {
        let model = FeatureModel::from_stats(
            ClassStats {
                delta_sq: 4.0,
                sigma_sq_intra: 0.0,
            },
            3,
        );
        let mut rng = stream_rng(1, 0);
        let nb = sample_neighborhood(NodeProfile::new(2, 0), &model, 0, &mut rng);
        assert_eq!(nb.neighbors.len(), 2);
        for x in std::iter::once(&nb.center).chain(&nb.neighbors) {
            assert_eq!(x, &model.mu[0]);
        }
        let iso = sample_neighborhood(NodeProfile::new(0, 0), &model, 1, &mut rng);
        assert!(iso.neighbors.is_empty());
        assert_eq!(iso.center, model.mu[1]);
    }
}
