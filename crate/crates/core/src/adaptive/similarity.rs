//! Per-edge same-label probabilities: the learned pair head, the degree
//! product, and structural heuristics.

use std::str::FromStr;
use std::sync::Arc;

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::backbones::glorot;
use crate::error::{invalid, Error, Result};
use crate::graph::algo::{
    betweenness_centrality, clustering_coefficients, common_neighbor_count, core_numbers,
    for_each_common_neighbor,
};
use crate::graph::Graph;
use crate::ndiff::optim::ParamStore;
use crate::ndiff::{Tape, Tensor};

/// Two-layer map `p = sigmoid(relu([|h_u - h_v|, h_u ⊙ h_v] W1 + b1) w2 + b2)`.
/// Both pair features are symmetric in `(u, v)`, hence so is `p`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimilarityHead {
    pub embed_dim: usize,
    pub hidden_dim: usize,
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
}

impl SimilarityHead {
    pub fn init<R: Rng + ?Sized>(
        embed_dim: usize,
        hidden_dim: usize,
        store: &mut ParamStore,
        rng: &mut R,
    ) -> Self {
        Self {
            embed_dim,
            hidden_dim,
            w1: store.push("sim.w1", glorot(2 * embed_dim, hidden_dim, rng), true),
            b1: store.push("sim.b1", Array2::zeros((1, hidden_dim)), false),
            w2: store.push("sim.w2", glorot(hidden_dim, 1, rng), true),
            b2: store.push("sim.b2", Array2::zeros((1, 1)), false),
        }
    }

    pub fn param_indices(&self) -> [usize; 4] {
        [self.w1, self.b1, self.w2, self.b2]
    }

    /// Probabilities (`k × 1`) for the pairs `(us[i], vs[i])` of rows of `h`.
    pub fn pair_probabilities(
        &self,
        tape: &mut Tape,
        vars: &[Tensor],
        h: Tensor,
        us: Arc<Vec<usize>>,
        vs: Arc<Vec<usize>>,
    ) -> Result<Tensor> {
        if tape.shape(h).1 != self.embed_dim {
            return Err(Error::ShapeMismatch {
                op: "similarity head",
                lhs: tape.shape(h),
                rhs: (self.embed_dim, self.hidden_dim),
            });
        }
        let hu = tape.row_gather(h, us)?;
        let hv = tape.row_gather(h, vs)?;
        let diff = tape.abs_diff(hu, hv)?;
        let prod = tape.mul(hu, hv)?;
        let feats = tape.concat_cols(diff, prod)?;
        let z = tape.matmul(feats, vars[self.w1])?;
        let z = tape.add_row(z, vars[self.b1])?;
        let z = tape.relu(z);
        let z = tape.matmul(z, vars[self.w2])?;
        let z = tape.add_row(z, vars[self.b2])?;
        Ok(tape.sigmoid(z))
    }
}

/// `f(h_u, h_v)` for two embedding vectors.
pub fn pair_probability(
    head: &SimilarityHead,
    store: &ParamStore,
    h_u: &[f64],
    h_v: &[f64],
) -> Result<f64> {
    if h_u.len() != h_v.len() || h_u.len() != head.embed_dim {
        return Err(Error::LengthMismatch {
            what: "pair embeddings",
            expected: head.embed_dim,
            actual: if h_u.len() != head.embed_dim { h_u.len() } else { h_v.len() },
        });
    }
    let mut tape = Tape::new();
    let vars: Vec<Tensor> = store.values().iter().map(|v| tape.constant(v.clone())).collect();
    let mut rows = Array2::zeros((2, h_u.len()));
    rows.row_mut(0).assign(&ndarray::ArrayView1::from(h_u));
    rows.row_mut(1).assign(&ndarray::ArrayView1::from(h_v));
    let h = tape.constant(rows);
    let p = head.pair_probabilities(&mut tape, &vars, h, Arc::new(vec![0]), Arc::new(vec![1]))?;
    Ok(tape.scalar(p))
}

/// `(d̂+, d̂-)` from one probability per undirected edge:
/// `d̂+_v = Σ_{u ∈ N(v)} p_uv`, `d̂-_v = d_v - d̂+_v`.
pub fn expected_label_counts(g: &Graph, edge_probs: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    if edge_probs.len() != g.num_edges() {
        return Err(Error::LengthMismatch {
            what: "edge probabilities",
            expected: g.num_edges(),
            actual: edge_probs.len(),
        });
    }
    let plus: Vec<f64> = (0..g.num_nodes())
        .map(|v| g.arc_range(v).map(|a| edge_probs[g.arc_edge(a)]).sum())
        .collect();
    let minus = plus
        .iter()
        .enumerate()
        .map(|(v, &p)| g.degree(v) as f64 - p)
        .collect();
    Ok((plus, minus))
}

/// `α̂ = (1 + d̂+ - d̂-)/(d + 1)`.
pub fn estimated_alpha(d_plus: f64, d_minus: f64, degree: usize) -> f64 {
    (1.0 + d_plus - d_minus) / (degree as f64 + 1.0)
}

/// `p_uv = d_u d_v / max_{(i,j) ∈ E} d_i d_j`, one value per edge.
pub fn degree_similarity(g: &Graph) -> Result<Vec<f64>> {
    if g.num_edges() == 0 {
        return Err(Error::EmptyEdgeSet);
    }
    let prod: Vec<f64> = g
        .edges()
        .iter()
        .map(|&(u, v)| (g.degree(u) * g.degree(v)) as f64)
        .collect();
    let max = prod.iter().copied().fold(0.0, f64::max);
    Ok(prod.into_iter().map(|p| p / max).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeuristicName {
    CommonNeighbors,
    Jaccard,
    AdamicAdar,
    BetweennessProduct,
    KshellProduct,
    ClusteringProduct,
}

impl HeuristicName {
    pub const ALL: [HeuristicName; 6] = [
        Self::CommonNeighbors,
        Self::Jaccard,
        Self::AdamicAdar,
        Self::BetweennessProduct,
        Self::KshellProduct,
        Self::ClusteringProduct,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::CommonNeighbors => "common_neighbors",
            Self::Jaccard => "jaccard",
            Self::AdamicAdar => "adamic_adar",
            Self::BetweennessProduct => "betweenness_product",
            Self::KshellProduct => "kshell_product",
            Self::ClusteringProduct => "clustering_product",
        }
    }
}

impl FromStr for HeuristicName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|h| h.as_str() == s)
            .ok_or_else(|| invalid(format!("unknown heuristic '{s}'")))
    }
}

/// Unnormalized per-edge heuristic score.
pub fn heuristic_raw_scores(g: &Graph, name: HeuristicName) -> Result<Vec<f64>> {
    if g.num_edges() == 0 {
        return Err(Error::EmptyEdgeSet);
    }
    let edges = g.edges();
    let product = |vals: &[f64]| -> Vec<f64> { edges.iter().map(|&(u, v)| vals[u] * vals[v]).collect() };
    Ok(match name {
        HeuristicName::CommonNeighbors => edges
            .iter()
            .map(|&(u, v)| common_neighbor_count(g, u, v) as f64)
            .collect(),
        HeuristicName::Jaccard => edges
            .iter()
            .map(|&(u, v)| {
                let inter = common_neighbor_count(g, u, v);
                let union = g.degree(u) + g.degree(v) - inter;
                inter as f64 / union as f64
            })
            .collect(),
        HeuristicName::AdamicAdar => edges
            .iter()
            .map(|&(u, v)| {
                let mut s = 0.0;
                for_each_common_neighbor(g, u, v, |w| {
                    let d = g.degree(w);
                    if d >= 2 {
                        s += 1.0 / (d as f64).ln();
                    }
                });
                s
            })
            .collect(),
        HeuristicName::BetweennessProduct => product(&betweenness_centrality(g)),
        HeuristicName::KshellProduct => {
            let core: Vec<f64> = core_numbers(g).into_iter().map(|c| c as f64).collect();
            product(&core)
        }
        HeuristicName::ClusteringProduct => product(&clustering_coefficients(g)),
    })
}

/// Heuristic score min-max normalized over edges to `[0, 1]`.
pub fn heuristic_similarity(g: &Graph, name: HeuristicName) -> Result<Vec<f64>> {
    Ok(minmax_normalize(&heuristic_raw_scores(g, name)?))
}

/// `(s - min)/(max - min)` over the finite entries. Entries equal to `-inf`
/// map to 0; if all finite entries are equal they all map to 1.
pub fn minmax_normalize(scores: &[f64]) -> Vec<f64> {
    let finite = scores.iter().copied().filter(|s| s.is_finite());
    let (lo, hi) = finite.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), s| {
        (lo.min(s), hi.max(s))
    });
    let range = hi - lo;
    scores
        .iter()
        .map(|&s| {
            if !s.is_finite() {
                0.0
            } else if range > 0.0 {
                (s - lo) / range
            } else {
                1.0
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::csbm::stream_rng;

    fn triangle() -> Graph {
        Graph::build(3, &[(0, 1), (1, 2), (2, 0)]).unwrap()
    }

    #[test]
    fn zero_head_gives_half() {
        let mut store = ParamStore::new();
        let head = SimilarityHead::init(3, 4, &mut store, &mut stream_rng(0, 0));
        for v in store.values_mut() {
            v.fill(0.0);
        }
        let p = pair_probability(&head, &store, &[1.0, -2.0, 0.5], &[0.3, 0.0, 9.0]).unwrap();
        assert_eq!(p, 0.5);
    }

    #[test]
    fn head_is_symmetric() {
        let mut store = ParamStore::new();
        let head = SimilarityHead::init(3, 5, &mut store, &mut stream_rng(1, 0));
        let (a, b) = ([0.2, -1.0, 0.7], [1.5, 0.1, -0.3]);
        let pab = pair_probability(&head, &store, &a, &b).unwrap();
        let pba = pair_probability(&head, &store, &b, &a).unwrap();
        assert_eq!(pab, pba);
        assert!(pab > 0.0 && pab < 1.0);
        assert!(pair_probability(&head, &store, &a, &[1.0]).is_err());
    }

    #[test]
    fn label_count_examples() {
        let star = Graph::build(4, &[(0, 1), (0, 2), (0, 3)]).unwrap();
        let (p, m) = expected_label_counts(&star, &[1.0, 1.0, 1.0]).unwrap();
        assert_eq!((p[0], m[0]), (3.0, 0.0));
        let (p, m) = expected_label_counts(&star, &[1.0, 1.0, 0.0]).unwrap();
        assert_eq!((p[0], m[0]), (2.0, 1.0));
        let (p, _) = expected_label_counts(&star, &[0.5; 3]).unwrap();
        assert_eq!(p[0], 1.5);
        assert!(expected_label_counts(&star, &[0.5]).is_err());
    }

    #[test]
    fn alpha_hat_examples() {
        // Triangle with labels [0, 0, 1]: edge ids follow the sorted edge list.
        let g = triangle();
        let probs: Vec<f64> = g
            .edges()
            .iter()
            .map(|&(u, v)| if (u < 2) == (v < 2) { 1.0 } else { 0.0 })
            .collect();
        let (p, m) = expected_label_counts(&g, &probs).unwrap();
        assert_eq!(estimated_alpha(p[0], m[0], 2), 1.0 / 3.0);
        assert_eq!(estimated_alpha(2.0, 2.0, 4), 0.2);
        assert_eq!(estimated_alpha(0.0, 0.0, 0), 1.0);
    }

    #[test]
    fn degree_similarity_examples() {
        let star = Graph::build(4, &[(0, 1), (0, 2), (0, 3)]).unwrap();
        assert_eq!(degree_similarity(&star).unwrap(), vec![1.0; 3]);
        // a=0, b=1, c=2, d=3 with edges ab, bc, bd, cd.
        let g = Graph::build(4, &[(0, 1), (1, 2), (1, 3), (2, 3)]).unwrap();
        let p = degree_similarity(&g).unwrap();
        assert_eq!(g.edges(), &[(0, 1), (1, 2), (1, 3), (2, 3)]);
        assert_eq!(p[0], 0.5);
        assert_eq!(p[1], 1.0);
        assert_eq!(p[2], 1.0);
        assert!((p[3] - 4.0 / 6.0).abs() < 1e-15);
        let path = Graph::build(3, &[(0, 1), (1, 2)]).unwrap();
        assert_eq!(degree_similarity(&path).unwrap(), vec![1.0, 1.0]);
        assert!(degree_similarity(&Graph::build(2, &[]).unwrap()).is_err());
    }

    #[test]
    fn heuristic_examples() {
        let t = triangle();
        let raw = heuristic_raw_scores(&t, HeuristicName::Jaccard).unwrap();
        assert!(raw.iter().all(|&r| (r - 1.0 / 3.0).abs() < 1e-15));
        assert_eq!(heuristic_similarity(&t, HeuristicName::Jaccard).unwrap(), vec![1.0; 3]);
        let path = Graph::build(3, &[(0, 1), (1, 2)]).unwrap();
        assert_eq!(
            heuristic_raw_scores(&path, HeuristicName::BetweennessProduct).unwrap(),
            vec![0.0, 0.0]
        );
        assert_eq!(
            heuristic_similarity(&path, HeuristicName::BetweennessProduct).unwrap(),
            vec![1.0, 1.0]
        );
        // Edge (0, 2) has sole common neighbor 1 of degree 2.
        let g = Graph::build(4, &[(0, 1), (1, 2), (0, 2), (2, 3)]).unwrap();
        let aa = heuristic_raw_scores(&g, HeuristicName::AdamicAdar).unwrap();
        let id = g.edges().iter().position(|&e| e == (0, 2)).unwrap();
        assert!((aa[id] - 1.0 / 2f64.ln()).abs() < 1e-12);
        for h in HeuristicName::ALL {
            let s = heuristic_similarity(&g, h).unwrap();
            assert!(s.iter().all(|&x| (0.0..=1.0).contains(&x)), "{h:?}");
            assert_eq!(h.as_str().parse::<HeuristicName>().unwrap(), h);
        }
        assert!("pagerank".parse::<HeuristicName>().is_err());
    }

    #[test]
    fn minmax_examples() {
        assert_eq!(minmax_normalize(&[2.0, 4.0, 6.0]), vec![0.0, 0.5, 1.0]);
        assert_eq!(minmax_normalize(&[3.0, 3.0]), vec![1.0, 1.0]);
        assert_eq!(minmax_normalize(&[f64::NEG_INFINITY, 0.0, 1.0]), vec![0.0, 0.0, 1.0]);
    }
}
