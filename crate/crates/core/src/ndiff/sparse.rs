//! Fixed sparse propagation matrices over a [`Graph`].

use ndarray::{Array2, ArrayView2, Axis};

use crate::error::{Error, Result};
use crate::graph::Graph;

/// Row-compressed real matrix used as a constant left factor `S · H`.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    rows: usize,
    cols: usize,
    offsets: Vec<usize>,
    indices: Vec<usize>,
    weights: Vec<f64>,
}

impl SparseMatrix {
    pub fn from_rows(cols: usize, rows: Vec<Vec<(usize, f64)>>) -> Self {
        let mut offsets = Vec::with_capacity(rows.len() + 1);
        offsets.push(0);
        let mut indices = Vec::new();
        let mut weights = Vec::new();
        for row in &rows {
            for &(c, w) in row {
                debug_assert!(c < cols);
                indices.push(c);
                weights.push(w);
            }
            offsets.push(indices.len());
        }
        Self {
            rows: rows.len(),
            cols,
            offsets,
            indices,
            weights,
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.offsets[r]..self.offsets[r + 1];
        self.indices[span.clone()]
            .iter()
            .copied()
            .zip(self.weights[span].iter().copied())
    }

    /// `S · h`.
    pub fn matmul(&self, h: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        if h.nrows() != self.cols {
            return Err(Error::ShapeMismatch {
                op: "spmm",
                lhs: self.shape(),
                rhs: h.dim(),
            });
        }
        let mut out = Array2::zeros((self.rows, h.ncols()));
        for (r, mut out_row) in out.axis_iter_mut(Axis(0)).enumerate() {
            for (c, w) in self.row(r) {
                out_row.scaled_add(w, &h.row(c));
            }
        }
        Ok(out)
    }

    /// `Sᵀ · g`.
    pub fn transpose_matmul(&self, g: ArrayView2<'_, f64>) -> Array2<f64> {
        let mut out = Array2::zeros((self.cols, g.ncols()));
        for r in 0..self.rows {
            let gr = g.row(r);
            for (c, w) in self.row(r) {
                out.row_mut(c).scaled_add(w, &gr);
            }
        }
        out
    }

    pub fn to_dense(&self) -> Array2<f64> {
        let mut d = Array2::zeros((self.rows, self.cols));
        for r in 0..self.rows {
            for (c, w) in self.row(r) {
                d[[r, c]] += w;
            }
        }
        d
    }
}

fn check_mask(g: &Graph, mask: Option<&[bool]>) -> Result<()> {
    match mask {
        Some(m) if m.len() != g.num_edges() => Err(Error::LengthMismatch {
            what: "edge mask",
            expected: g.num_edges(),
            actual: m.len(),
        }),
        _ => Ok(()),
    }
}

fn active_degrees(g: &Graph, mask: Option<&[bool]>) -> Vec<usize> {
    match mask {
        None => g.degrees(),
        Some(m) => (0..g.num_nodes())
            .map(|v| g.arc_range(v).filter(|&a| m[g.arc_edge(a)]).count())
            .collect(),
    }
}

fn active_arcs<'a>(
    g: &'a Graph,
    mask: Option<&'a [bool]>,
    v: usize,
) -> impl Iterator<Item = usize> + 'a {
    g.arc_range(v)
        .filter(move |&a| mask.is_none_or(|m| m[g.arc_edge(a)]))
        .map(move |a| g.neighbor_array()[a])
}

/// Self-inclusive uniform mean: row `v` averages `v` and its active neighbors
/// with weight `1 / (active_degree(v) + 1)`.
pub fn mean_self_matrix(g: &Graph, edge_mask: Option<&[bool]>) -> Result<SparseMatrix> {
    check_mask(g, edge_mask)?;
    let deg = active_degrees(g, edge_mask);
    let rows = (0..g.num_nodes())
        .map(|v| {
            let w = 1.0 / (deg[v] + 1) as f64;
            let mut row: Vec<(usize, f64)> =
                active_arcs(g, edge_mask, v).map(|u| (u, w)).collect();
            row.push((v, w));
            row.sort_unstable_by_key(|e| e.0);
            row
        })
        .collect();
    Ok(SparseMatrix::from_rows(g.num_nodes(), rows))
}

/// `D̃^{-1/2} (A + I) D̃^{-1/2}` over the active edges.
pub fn symnorm_matrix(g: &Graph, edge_mask: Option<&[bool]>) -> Result<SparseMatrix> {
    check_mask(g, edge_mask)?;
    let deg = active_degrees(g, edge_mask);
    let rows = (0..g.num_nodes())
        .map(|v| {
            let mut row: Vec<(usize, f64)> = active_arcs(g, edge_mask, v)
                .map(|u| (u, 1.0 / (((deg[u] + 1) * (deg[v] + 1)) as f64).sqrt()))
                .collect();
            row.push((v, 1.0 / (deg[v] + 1) as f64));
            row.sort_unstable_by_key(|e| e.0);
            row
        })
        .collect();
    Ok(SparseMatrix::from_rows(g.num_nodes(), rows))
}

/// Neighbor-only mean (no self term); isolated nodes get a zero row.
pub fn neighbor_mean_matrix(g: &Graph, edge_mask: Option<&[bool]>) -> Result<SparseMatrix> {
    check_mask(g, edge_mask)?;
    let deg = active_degrees(g, edge_mask);
    let rows = (0..g.num_nodes())
        .map(|v| {
            if deg[v] == 0 {
                return Vec::new();
            }
            let w = 1.0 / deg[v] as f64;
            active_arcs(g, edge_mask, v).map(|u| (u, w)).collect()
        })
        .collect();
    Ok(SparseMatrix::from_rows(g.num_nodes(), rows))
}
