//! Immutable undirected graphs in CSR form, plus the label-aware and
//! split-related queries every other module builds on.
//!
//! Self-loops are never stored: a node's degree is the number of *other*
//! nodes it touches, and aggregation operators add the self term explicitly.

pub mod algo;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Counters collected while normalizing a raw edge list.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BuildDiagnostics {
    pub input_pairs: usize,
    pub self_loops_dropped: usize,
    pub duplicates_dropped: usize,
}

/// Undirected, deduplicated graph stored as a symmetric CSR adjacency.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Graph {
    num_nodes: usize,
    offsets: Vec<usize>,
    neighbors: Vec<usize>,
    /// Undirected edge id for every stored arc.
    arc_edge: Vec<usize>,
    /// Endpoints (u < v) of each undirected edge, in lexicographic order.
    edges: Vec<(usize, usize)>,
    diagnostics: BuildDiagnostics,
}

impl Graph {
    /// Builds a graph from `(u, v)` pairs. Both arc directions, repeated
    /// pairs and self-loops are accepted; the latter two are dropped and
    /// counted in [`Graph::diagnostics`].
    pub fn build(num_nodes: usize, edge_list: &[(usize, usize)]) -> Result<Self> {
        let mut diagnostics = BuildDiagnostics {
            input_pairs: edge_list.len(),
            ..Default::default()
        };
        let mut pairs = Vec::with_capacity(edge_list.len());
        for &(u, v) in edge_list {
            for id in [u, v] {
                if id >= num_nodes {
                    return Err(Error::NodeOutOfRange { id, num_nodes });
                }
            }
            if u == v {
                diagnostics.self_loops_dropped += 1;
                continue;
            }
            pairs.push((u.min(v), u.max(v)));
        }
        pairs.sort_unstable();
        let before = pairs.len();
        pairs.dedup();
        diagnostics.duplicates_dropped = before - pairs.len();

        let mut degree = vec![0usize; num_nodes];
        for &(u, v) in &pairs {
            degree[u] += 1;
            degree[v] += 1;
        }
        let mut offsets = Vec::with_capacity(num_nodes + 1);
        offsets.push(0);
        for d in &degree {
            offsets.push(offsets.last().unwrap() + d);
        }
        let mut cursor = offsets[..num_nodes].to_vec();
        let mut neighbors = vec![0usize; 2 * pairs.len()];
        let mut arc_edge = vec![0usize; 2 * pairs.len()];
        // Smaller neighbors first, then larger ones; pairs are sorted, so each
        // row comes out ascending.
        for (eid, &(u, v)) in pairs.iter().enumerate() {
            neighbors[cursor[v]] = u;
            arc_edge[cursor[v]] = eid;
            cursor[v] += 1;
        }
        for (eid, &(u, v)) in pairs.iter().enumerate() {
            neighbors[cursor[u]] = v;
            arc_edge[cursor[u]] = eid;
            cursor[u] += 1;
        }
        Ok(Self {
            num_nodes,
            offsets,
            neighbors,
            arc_edge,
            edges: pairs,
            diagnostics,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    /// Number of undirected edges.
    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    /// Number of stored arcs (`2 * num_edges`).
    pub fn num_arcs(&self) -> usize {
        self.neighbors.len()
    }

    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn neighbor_array(&self) -> &[usize] {
        &self.neighbors
    }

    pub fn neighbors(&self, v: usize) -> &[usize] {
        &self.neighbors[self.offsets[v]..self.offsets[v + 1]]
    }

    /// Range of arc positions belonging to `v`'s row.
    pub fn arc_range(&self, v: usize) -> std::ops::Range<usize> {
        self.offsets[v]..self.offsets[v + 1]
    }

    /// Undirected edge id of the arc stored at position `arc`.
    pub fn arc_edge(&self, arc: usize) -> usize {
        self.arc_edge[arc]
    }

    pub fn arc_edges(&self) -> &[usize] {
        &self.arc_edge
    }

    pub fn degree(&self, v: usize) -> usize {
        self.offsets[v + 1] - self.offsets[v]
    }

    /// Per-node degrees (self excluded).
    pub fn degrees(&self) -> Vec<usize> {
        (0..self.num_nodes).map(|v| self.degree(v)).collect()
    }

    pub fn max_degree(&self) -> usize {
        (0..self.num_nodes).map(|v| self.degree(v)).max().unwrap_or(0)
    }

    /// Undirected edges as `(u, v)` with `u < v`, sorted.
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        u < self.num_nodes && self.neighbors(u).binary_search(&v).is_ok()
    }

    pub fn diagnostics(&self) -> BuildDiagnostics {
        self.diagnostics
    }

    /// Graph on the same node set keeping only edges whose id is set in `mask`.
    pub fn edge_subgraph(&self, mask: &[bool]) -> Result<Self> {
        if mask.len() != self.num_edges() {
            return Err(Error::LengthMismatch {
                what: "edge mask",
                expected: self.num_edges(),
                actual: mask.len(),
            });
        }
        let kept: Vec<_> = self
            .edges
            .iter()
            .zip(mask)
            .filter(|(_, &m)| m)
            .map(|(&e, _)| e)
            .collect();
        Self::build(self.num_nodes, &kept)
    }

    /// Relabels nodes so that old node `v` becomes `perm[v]`.
    pub fn permute(&self, perm: &[usize]) -> Result<Self> {
        if perm.len() != self.num_nodes {
            return Err(Error::LengthMismatch {
                what: "permutation",
                expected: self.num_nodes,
                actual: perm.len(),
            });
        }
        let edges: Vec<_> = self.edges.iter().map(|&(u, v)| (perm[u], perm[v])).collect();
        Self::build(self.num_nodes, &edges)
    }
}

/// Dense row-major node features, one row per node.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix(Array2<f64>);

impl FeatureMatrix {
    pub fn new(values: Array2<f64>) -> Result<Self> {
        if let Some(pos) = values.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFinite(format!(
                "feature entry {pos} is not finite"
            )));
        }
        Ok(Self(values))
    }

    pub fn rows(&self) -> usize {
        self.0.nrows()
    }

    pub fn cols(&self) -> usize {
        self.0.ncols()
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.0
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.0
    }
}

/// Node labels in `0..num_classes`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelVector {
    labels: Vec<usize>,
    num_classes: usize,
}

impl LabelVector {
    pub fn new(labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if num_classes < 2 {
            return Err(invalid(format!("need at least 2 classes, got {num_classes}")));
        }
        if let Some(&bad) = labels.iter().find(|&&c| c >= num_classes) {
            return Err(invalid(format!("label {bad} >= num_classes {num_classes}")));
        }
        Ok(Self {
            labels,
            num_classes,
        })
    }

    /// Infers the class count as `max label + 1` (at least 2).
    pub fn from_labels(labels: Vec<usize>) -> Result<Self> {
        let c = labels.iter().max().map_or(2, |m| (m + 1).max(2));
        Self::new(labels, c)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn get(&self, v: usize) -> usize {
        self.labels[v]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Train,
    Val,
    Test,
}

/// Train/validation/test assignment for every node.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitMask {
    roles: Vec<Role>,
    seed: u64,
}

impl SplitMask {
    pub fn from_roles(roles: Vec<Role>, seed: u64) -> Self {
        Self { roles, seed }
    }

    pub fn roles(&self) -> &[Role] {
        &self.roles
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn len(&self) -> usize {
        self.roles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.roles.is_empty()
    }

    pub fn mask(&self, role: Role) -> Vec<bool> {
        self.roles.iter().map(|&r| r == role).collect()
    }

    pub fn count(&self, role: Role) -> usize {
        self.roles.iter().filter(|&&r| r == role).count()
    }

    pub fn is_train(&self, v: usize) -> bool {
        self.roles[v] == Role::Train
    }
}

/// Same-label / opposite-label / total neighbor counts of a node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct NodeProfile {
    pub d_plus: usize,
    pub d_minus: usize,
    pub degree: usize,
}

impl NodeProfile {
    pub fn new(d_plus: usize, d_minus: usize) -> Self {
        Self {
            d_plus,
            d_minus,
            degree: d_plus + d_minus,
        }
    }

    pub fn is_consistent(&self) -> bool {
        self.d_plus + self.d_minus == self.degree
    }
}

/// Profiles `(d+, d-, d)` of every node. "Opposite" means any different class.
pub fn neighborhood_profiles(g: &Graph, y: &LabelVector) -> Result<Vec<NodeProfile>> {
    if y.len() != g.num_nodes() {
        return Err(Error::LengthMismatch {
            what: "labels",
            expected: g.num_nodes(),
            actual: y.len(),
        });
    }
    Ok((0..g.num_nodes())
        .map(|v| {
            let same = g
                .neighbors(v)
                .iter()
                .filter(|&&u| y.get(u) == y.get(v))
                .count();
            NodeProfile::new(same, g.degree(v) - same)
        })
        .collect())
}

/// Seeded random partition of `0..num_nodes` into train/val/test with the
/// given ratios. Counts are `round(n * r_train)`, `round(n * r_val)` and the
/// remainder.
pub fn make_split(num_nodes: usize, ratios: (f64, f64, f64), seed: u64) -> Result<SplitMask> {
    let (tr, va, te) = ratios;
    let valid = [tr, va, te].iter().all(|r| r.is_finite() && *r >= 0.0)
        && ((tr + va + te) - 1.0).abs() < 1e-9;
    if !valid {
        return Err(invalid(format!("split ratios {ratios:?} must be >= 0 and sum to 1")));
    }
    let n_train = ((num_nodes as f64) * tr).round() as usize;
    let n_val = (((num_nodes as f64) * va).round() as usize).min(num_nodes - n_train);
    let mut order: Vec<usize> = (0..num_nodes).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let mut roles = vec![Role::Test; num_nodes];
    for (rank, &v) in order.iter().enumerate() {
        if rank < n_train {
            roles[v] = Role::Train;
        } else if rank < n_train + n_val {
            roles[v] = Role::Val;
        }
    }
    Ok(SplitMask { roles, seed })
}

/// Undirected edges (`u < v`) whose endpoints are both training nodes.
pub fn train_edge_set(g: &Graph, split: &SplitMask) -> Vec<(usize, usize)> {
    g.edges()
        .iter()
        .copied()
        .filter(|&(u, v)| split.is_train(u) && split.is_train(v))
        .collect()
}
