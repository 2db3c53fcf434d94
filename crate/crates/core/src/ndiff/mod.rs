//! A small reverse-mode differentiation engine over dense 2-D arrays.
//!
//! Every operation appends a node to a [`Tape`]; node ids are assigned in
//! creation order, so walking the tape backwards is a valid topological
//! order and each node's backward rule runs exactly once.

pub mod gradcheck;
pub mod optim;
pub mod sparse;

use std::fmt;
use std::sync::Arc;

use ndarray::{concatenate, Array2, Axis, Zip};
use rand::Rng;

use crate::error::{Error, Result};
pub use sparse::SparseMatrix;

/// Probabilities are clamped to `[PROB_EPS, 1 - PROB_EPS]` before any log.
pub const PROB_EPS: f64 = 1e-7;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Tensor {
    id: usize,
}

impl Tensor {
    pub fn id(self) -> usize {
        self.id
    }
}

/// User-defined differentiable operation.
pub trait CustomOp: fmt::Debug + Send + Sync {
    fn name(&self) -> &'static str;

    /// Gradients with respect to each input, given the upstream gradient.
    fn backward(
        &self,
        inputs: &[&Array2<f64>],
        output: &Array2<f64>,
        grad_out: &Array2<f64>,
    ) -> Vec<Option<Array2<f64>>>;
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Tensor, Tensor),
    Add(Tensor, Tensor),
    Sub(Tensor, Tensor),
    AddRow(Tensor, Tensor),
    Mul(Tensor, Tensor),
    MulCol(Tensor, Tensor),
    ScalarMul(Tensor, f64),
    AddScalar(Tensor),
    Relu(Tensor),
    Sigmoid(Tensor),
    Softplus(Tensor),
    ConcatCols(Tensor, Tensor),
    AbsDiff(Tensor, Tensor),
    RowGather(Tensor, Arc<Vec<usize>>),
    SegmentSum(Tensor, Arc<Vec<usize>>),
    MeanAll(Tensor),
    SpMM(Arc<SparseMatrix>, Tensor),
    Dropout(Tensor, Arc<Array2<f64>>),
    Blend {
        gate: Tensor,
        on: Tensor,
        off: Tensor,
    },
    SoftmaxCrossEntropy {
        logits: Tensor,
        labels: Arc<Vec<usize>>,
        rows: Arc<Vec<usize>>,
        probs: Array2<f64>,
    },
    BinaryCrossEntropy {
        probs: Tensor,
        targets: Arc<Vec<f64>>,
    },
    Custom(Arc<dyn CustomOp>, Vec<Tensor>),
}

#[derive(Debug)]
struct Node {
    value: Array2<f64>,
    op: Op,
    requires_grad: bool,
}

/// Recording of one forward pass.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    consumed: bool,
    first_non_finite: Option<String>,
}

/// Gradients produced by [`Tape::backward`], indexed by tensor.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Array2<f64>>>,
}

impl Gradients {
    pub fn get(&self, t: Tensor) -> Option<&Array2<f64>> {
        self.grads.get(t.id).and_then(|g| g.as_ref())
    }

    /// Gradient of `t`, or zeros of `shape` when nothing flowed into it.
    pub fn get_or_zeros(&self, t: Tensor, shape: (usize, usize)) -> Array2<f64> {
        self.get(t).cloned().unwrap_or_else(|| Array2::zeros(shape))
    }
}

fn shape_err(op: &'static str, a: &Array2<f64>, b: &Array2<f64>) -> Error {
    Error::ShapeMismatch {
        op,
        lhs: a.dim(),
        rhs: b.dim(),
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

pub fn scalar_sigmoid(x: f64) -> f64 {
    sigmoid(x)
}

pub fn scalar_softplus(x: f64) -> f64 {
    softplus(x)
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, t: Tensor) -> &Array2<f64> {
        &self.nodes[t.id].value
    }

    pub fn shape(&self, t: Tensor) -> (usize, usize) {
        self.nodes[t.id].value.dim()
    }

    /// Scalar value of a `1 × 1` tensor.
    pub fn scalar(&self, t: Tensor) -> f64 {
        self.nodes[t.id].value[[0, 0]]
    }

    pub fn requires_grad(&self, t: Tensor) -> bool {
        self.nodes[t.id].requires_grad
    }

    fn push(&mut self, value: Array2<f64>, op: Op, requires_grad: bool) -> Tensor {
        if self.first_non_finite.is_none() && value.iter().any(|x| !x.is_finite()) {
            self.first_non_finite = Some(format!("{op:?}").chars().take(80).collect());
        }
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Tensor {
            id: self.nodes.len() - 1,
        }
    }

    fn rg(&self, ts: &[Tensor]) -> bool {
        ts.iter().any(|t| self.nodes[t.id].requires_grad)
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Array2<f64>) -> Tensor {
        self.push(value, Op::Leaf, true)
    }

    /// Constant leaf.
    pub fn constant(&mut self, value: Array2<f64>) -> Tensor {
        self.push(value, Op::Leaf, false)
    }

    pub fn constant_col(&mut self, values: &[f64]) -> Tensor {
        let v = Array2::from_shape_vec((values.len(), 1), values.to_vec()).expect("column shape");
        self.constant(v)
    }

    pub fn matmul(&mut self, a: Tensor, b: Tensor) -> Result<Tensor> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.ncols() != vb.nrows() {
            return Err(shape_err("matmul", va, vb));
        }
        let v = va.dot(vb);
        let rg = self.rg(&[a, b]);
        Ok(self.push(v, Op::MatMul(a, b), rg))
    }

    pub fn add(&mut self, a: Tensor, b: Tensor) -> Result<Tensor> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.dim() != vb.dim() {
            return Err(shape_err("add", va, vb));
        }
        let v = va + vb;
        let rg = self.rg(&[a, b]);
        Ok(self.push(v, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Tensor, b: Tensor) -> Result<Tensor> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.dim() != vb.dim() {
            return Err(shape_err("sub", va, vb));
        }
        let v = va - vb;
        let rg = self.rg(&[a, b]);
        Ok(self.push(v, Op::Sub(a, b), rg))
    }

    /// Adds a `1 × c` row to every row of `a`.
    pub fn add_row(&mut self, a: Tensor, row: Tensor) -> Result<Tensor> {
        let (va, vr) = (self.value(a), self.value(row));
        if vr.nrows() != 1 || vr.ncols() != va.ncols() {
            return Err(shape_err("add_row", va, vr));
        }
        let v = va + vr;
        let rg = self.rg(&[a, row]);
        Ok(self.push(v, Op::AddRow(a, row), rg))
    }

    pub fn mul(&mut self, a: Tensor, b: Tensor) -> Result<Tensor> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.dim() != vb.dim() {
            return Err(shape_err("elementwise_mul", va, vb));
        }
        let v = va * vb;
        let rg = self.rg(&[a, b]);
        Ok(self.push(v, Op::Mul(a, b), rg))
    }

    /// Scales row `i` of `a` by `col[i]` (`col` is `n × 1`).
    pub fn mul_col(&mut self, a: Tensor, col: Tensor) -> Result<Tensor> {
        let (va, vc) = (self.value(a), self.value(col));
        if vc.ncols() != 1 || vc.nrows() != va.nrows() {
            return Err(shape_err("mul_col", va, vc));
        }
        let v = va * vc;
        let rg = self.rg(&[a, col]);
        Ok(self.push(v, Op::MulCol(a, col), rg))
    }

    pub fn scalar_mul(&mut self, a: Tensor, s: f64) -> Tensor {
        let v = self.value(a) * s;
        let rg = self.rg(&[a]);
        self.push(v, Op::ScalarMul(a, s), rg)
    }

    pub fn add_scalar(&mut self, a: Tensor, s: f64) -> Tensor {
        let v = self.value(a) + s;
        let rg = self.rg(&[a]);
        self.push(v, Op::AddScalar(a), rg)
    }

    pub fn relu(&mut self, a: Tensor) -> Tensor {
        let v = self.value(a).mapv(|x| x.max(0.0));
        let rg = self.rg(&[a]);
        self.push(v, Op::Relu(a), rg)
    }

    pub fn sigmoid(&mut self, a: Tensor) -> Tensor {
        let v = self.value(a).mapv(sigmoid);
        let rg = self.rg(&[a]);
        self.push(v, Op::Sigmoid(a), rg)
    }

    pub fn softplus(&mut self, a: Tensor) -> Tensor {
        let v = self.value(a).mapv(softplus);
        let rg = self.rg(&[a]);
        self.push(v, Op::Softplus(a), rg)
    }

    pub fn concat_cols(&mut self, a: Tensor, b: Tensor) -> Result<Tensor> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.nrows() != vb.nrows() {
            return Err(shape_err("concat_cols", va, vb));
        }
        let v = concatenate(Axis(1), &[va.view(), vb.view()]).expect("row counts checked");
        let rg = self.rg(&[a, b]);
        Ok(self.push(v, Op::ConcatCols(a, b), rg))
    }

    /// Elementwise `|a - b|`.
    pub fn abs_diff(&mut self, a: Tensor, b: Tensor) -> Result<Tensor> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.dim() != vb.dim() {
            return Err(shape_err("abs_diff", va, vb));
        }
        let v = Zip::from(va).and(vb).map_collect(|x, y| (x - y).abs());
        let rg = self.rg(&[a, b]);
        Ok(self.push(v, Op::AbsDiff(a, b), rg))
    }

    /// Output row `i` is row `index[i]` of `a`.
    pub fn row_gather(&mut self, a: Tensor, index: Arc<Vec<usize>>) -> Result<Tensor> {
        let va = self.value(a);
        if let Some(&bad) = index.iter().find(|&&i| i >= va.nrows()) {
            return Err(Error::NodeOutOfRange {
                id: bad,
                num_nodes: va.nrows(),
            });
        }
        let v = va.select(Axis(0), &index);
        let rg = self.rg(&[a]);
        Ok(self.push(v, Op::RowGather(a, index), rg))
    }

    /// Sums row `i` of `a` into output row `target[i]`; output has
    /// `num_rows` rows.
    pub fn segment_sum(
        &mut self,
        a: Tensor,
        target: Arc<Vec<usize>>,
        num_rows: usize,
    ) -> Result<Tensor> {
        let va = self.value(a);
        if target.len() != va.nrows() {
            return Err(Error::LengthMismatch {
                what: "segment_sum targets",
                expected: va.nrows(),
                actual: target.len(),
            });
        }
        let mut v = Array2::zeros((num_rows, va.ncols()));
        for (i, &t) in target.iter().enumerate() {
            if t >= num_rows {
                return Err(Error::NodeOutOfRange {
                    id: t,
                    num_nodes: num_rows,
                });
            }
            v.row_mut(t).scaled_add(1.0, &va.row(i));
        }
        let rg = self.rg(&[a]);
        Ok(self.push(v, Op::SegmentSum(a, target), rg))
    }

    /// Mean over all entries, as a `1 × 1` tensor.
    pub fn mean_all(&mut self, a: Tensor) -> Tensor {
        let m = self.value(a).mean().unwrap_or(0.0);
        let rg = self.rg(&[a]);
        self.push(Array2::from_elem((1, 1), m), Op::MeanAll(a), rg)
    }

    /// `S · a` for a constant sparse `S`.
    pub fn spmm(&mut self, s: Arc<SparseMatrix>, a: Tensor) -> Result<Tensor> {
        let v = s.matmul(self.value(a).view())?;
        let rg = self.rg(&[a]);
        Ok(self.push(v, Op::SpMM(s, a), rg))
    }

    /// Inverted dropout; the keep mask is stored for the backward pass.
    pub fn dropout<R: Rng + ?Sized>(&mut self, a: Tensor, rate: f64, rng: &mut R) -> Tensor {
        if rate <= 0.0 {
            return a;
        }
        let keep = 1.0 - rate;
        let shape = self.shape(a);
        let mask = Array2::from_shape_fn(shape, |_| {
            if rng.random::<f64>() < keep {
                1.0 / keep
            } else {
                0.0
            }
        });
        let v = self.value(a) * &mask;
        let rg = self.rg(&[a]);
        self.push(v, Op::Dropout(a, Arc::new(mask)), rg)
    }

    /// Row-wise gated blend `gate * on + (1 - gate) * off` with `gate` of
    /// shape `n × 1`. Gates of exactly 1 or 0 select rows verbatim.
    pub fn blend(&mut self, gate: Tensor, on: Tensor, off: Tensor) -> Result<Tensor> {
        let (vg, von, voff) = (self.value(gate), self.value(on), self.value(off));
        if von.dim() != voff.dim() {
            return Err(shape_err("blend", von, voff));
        }
        if vg.ncols() != 1 || vg.nrows() != von.nrows() {
            return Err(shape_err("blend gate", vg, von));
        }
        let mut v = voff.clone();
        for (i, mut row) in v.axis_iter_mut(Axis(0)).enumerate() {
            let g = vg[[i, 0]];
            if g == 1.0 {
                row.assign(&von.row(i));
            } else if g != 0.0 {
                Zip::from(&mut row)
                    .and(&von.row(i))
                    .for_each(|o, &x| *o = g * x + (1.0 - g) * *o);
            }
        }
        let rg = self.rg(&[gate, on, off]);
        Ok(self.push(v, Op::Blend { gate, on, off }, rg))
    }

    /// Mean softmax cross-entropy over the listed rows.
    pub fn softmax_cross_entropy(
        &mut self,
        logits: Tensor,
        labels: Arc<Vec<usize>>,
        rows: Arc<Vec<usize>>,
    ) -> Result<Tensor> {
        if rows.is_empty() {
            return Err(Error::EmptyMask("softmax_cross_entropy rows"));
        }
        let vl = self.value(logits);
        if labels.len() != vl.nrows() {
            return Err(Error::LengthMismatch {
                what: "labels",
                expected: vl.nrows(),
                actual: labels.len(),
            });
        }
        let mut probs = Array2::zeros((rows.len(), vl.ncols()));
        let mut loss = 0.0;
        for (k, &r) in rows.iter().enumerate() {
            let row = vl.row(r);
            let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            let z: f64 = row.iter().map(|x| (x - m).exp()).sum();
            let log_z = m + z.ln();
            for (c, &x) in row.iter().enumerate() {
                probs[[k, c]] = (x - log_z).exp();
            }
            let y = labels[r];
            if y >= vl.ncols() {
                return Err(Error::InvalidParameter(format!(
                    "label {y} outside {} logit columns",
                    vl.ncols()
                )));
            }
            loss += log_z - row[y];
        }
        loss /= rows.len() as f64;
        let rg = self.rg(&[logits]);
        Ok(self.push(
            Array2::from_elem((1, 1), loss),
            Op::SoftmaxCrossEntropy {
                logits,
                labels,
                rows,
                probs,
            },
            rg,
        ))
    }

    /// Mean binary cross-entropy of probabilities against 0/1 (or soft)
    /// targets, with probabilities clamped to `[PROB_EPS, 1 - PROB_EPS]`.
    pub fn binary_cross_entropy(&mut self, probs: Tensor, targets: Arc<Vec<f64>>) -> Result<Tensor> {
        let vp = self.value(probs);
        if vp.len() != targets.len() {
            return Err(Error::LengthMismatch {
                what: "bce targets",
                expected: vp.len(),
                actual: targets.len(),
            });
        }
        if targets.is_empty() {
            return Err(Error::EmptyMask("binary_cross_entropy targets"));
        }
        let loss: f64 = vp
            .iter()
            .zip(targets.iter())
            .map(|(&p, &y)| {
                let p = p.clamp(PROB_EPS, 1.0 - PROB_EPS);
                -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
            })
            .sum::<f64>()
            / targets.len() as f64;
        let rg = self.rg(&[probs]);
        Ok(self.push(
            Array2::from_elem((1, 1), loss),
            Op::BinaryCrossEntropy { probs, targets },
            rg,
        ))
    }

    /// Records an operation whose forward value was computed by the caller.
    pub fn custom(&mut self, op: Arc<dyn CustomOp>, inputs: &[Tensor], value: Array2<f64>) -> Tensor {
        let rg = self.rg(inputs);
        self.push(value, Op::Custom(op, inputs.to_vec()), rg)
    }

    /// Reverse sweep from a scalar `loss`. A tape can be swept once.
    pub fn backward(&mut self, loss: Tensor) -> Result<Gradients> {
        if self.consumed {
            return Err(Error::InvalidParameter("tape already consumed by backward".into()));
        }
        if loss.id >= self.nodes.len() {
            return Err(Error::InvalidParameter(
                "backward called with a tensor not recorded on this tape".into(),
            ));
        }
        if self.shape(loss) != (1, 1) {
            return Err(Error::ShapeMismatch {
                op: "backward (loss must be scalar)",
                lhs: self.shape(loss),
                rhs: (1, 1),
            });
        }
        if let Some(op) = &self.first_non_finite {
            return Err(Error::NonFinite(format!("forward produced non-finite values in {op}")));
        }
        self.consumed = true;
        let mut grads: Vec<Option<Array2<f64>>> = vec![None; self.nodes.len()];
        grads[loss.id] = Some(Array2::from_elem((1, 1), 1.0));

        for id in (0..=loss.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            if !node.requires_grad {
                grads[id] = Some(g);
                continue;
            }
            let contribs = self.local_grads(node, &g);
            grads[id] = Some(g);
            for (t, dg) in contribs {
                if !self.nodes[t.id].requires_grad {
                    continue;
                }
                match &mut grads[t.id] {
                    Some(acc) => *acc += &dg,
                    slot @ None => *slot = Some(dg),
                }
            }
        }
        Ok(Gradients { grads })
    }

    fn local_grads(&self, node: &Node, g: &Array2<f64>) -> Vec<(Tensor, Array2<f64>)> {
        let val = |t: Tensor| &self.nodes[t.id].value;
        let needs = |t: Tensor| self.nodes[t.id].requires_grad;
        match &node.op {
            Op::Leaf => vec![],
            Op::MatMul(a, b) => {
                let mut out = Vec::with_capacity(2);
                if needs(*a) {
                    out.push((*a, g.dot(&val(*b).t())));
                }
                if needs(*b) {
                    out.push((*b, val(*a).t().dot(g)));
                }
                out
            }
            Op::Add(a, b) => vec![(*a, g.clone()), (*b, g.clone())],
            Op::Sub(a, b) => vec![(*a, g.clone()), (*b, -g)],
            Op::AddRow(a, r) => vec![(*a, g.clone()), (*r, g.sum_axis(Axis(0)).insert_axis(Axis(0)))],
            Op::Mul(a, b) => vec![(*a, g * val(*b)), (*b, g * val(*a))],
            Op::MulCol(a, c) => vec![
                (*a, g * val(*c)),
                (*c, (g * val(*a)).sum_axis(Axis(1)).insert_axis(Axis(1))),
            ],
            Op::ScalarMul(a, s) => vec![(*a, g * *s)],
            Op::AddScalar(a) => vec![(*a, g.clone())],
            Op::Relu(a) => {
                let mask = val(*a).mapv(|x| if x > 0.0 { 1.0 } else { 0.0 });
                vec![(*a, g * &mask)]
            }
            Op::Sigmoid(a) => {
                let d = node.value.mapv(|s| s * (1.0 - s));
                vec![(*a, g * &d)]
            }
            Op::Softplus(a) => {
                let d = val(*a).mapv(sigmoid);
                vec![(*a, g * &d)]
            }
            Op::ConcatCols(a, b) => {
                let ca = val(*a).ncols();
                vec![
                    (*a, g.slice(ndarray::s![.., ..ca]).to_owned()),
                    (*b, g.slice(ndarray::s![.., ca..]).to_owned()),
                ]
            }
            Op::AbsDiff(a, b) => {
                let sign = Zip::from(val(*a))
                    .and(val(*b))
                    .map_collect(|x, y| if x > y { 1.0 } else if x < y { -1.0 } else { 0.0 });
                let ga = g * &sign;
                let gb = -&ga;
                vec![(*a, ga), (*b, gb)]
            }
            Op::RowGather(a, index) => {
                let mut out = Array2::zeros(val(*a).dim());
                for (i, &r) in index.iter().enumerate() {
                    out.row_mut(r).scaled_add(1.0, &g.row(i));
                }
                vec![(*a, out)]
            }
            Op::SegmentSum(a, target) => vec![(*a, g.select(Axis(0), target))],
            Op::MeanAll(a) => {
                let va = val(*a);
                let n = va.len().max(1) as f64;
                vec![(*a, Array2::from_elem(va.dim(), g[[0, 0]] / n))]
            }
            Op::SpMM(s, a) => vec![(*a, s.transpose_matmul(g.view()))],
            Op::Dropout(a, mask) => vec![(*a, g * mask.as_ref())],
            Op::Blend { gate, on, off } => {
                let (vg, von, voff) = (val(*gate), val(*on), val(*off));
                let g_on = g * vg;
                let g_off = g * &vg.mapv(|x| 1.0 - x);
                let g_gate = (g * &(von - voff)).sum_axis(Axis(1)).insert_axis(Axis(1));
                vec![(*gate, g_gate), (*on, g_on), (*off, g_off)]
            }
            Op::SoftmaxCrossEntropy {
                logits,
                labels,
                rows,
                probs,
            } => {
                let vl = val(*logits);
                let scale = g[[0, 0]] / rows.len() as f64;
                let mut out = Array2::zeros(vl.dim());
                for (k, &r) in rows.iter().enumerate() {
                    let mut orow = out.row_mut(r);
                    orow.scaled_add(scale, &probs.row(k));
                    orow[labels[r]] -= scale;
                }
                vec![(*logits, out)]
            }
            Op::BinaryCrossEntropy { probs, targets } => {
                let vp = val(*probs);
                let scale = g[[0, 0]] / targets.len() as f64;
                let mut out = Array2::zeros(vp.dim());
                for ((o, &p), &y) in out.iter_mut().zip(vp.iter()).zip(targets.iter()) {
                    if p > PROB_EPS && p < 1.0 - PROB_EPS {
                        *o = scale * (-(y / p) + (1.0 - y) / (1.0 - p));
                    }
                }
                vec![(*probs, out)]
            }
            Op::Custom(op, inputs) => {
                let ins: Vec<&Array2<f64>> = inputs.iter().map(|&t| val(t)).collect();
                op.backward(&ins, &node.value, g)
                    .into_iter()
                    .zip(inputs)
                    .filter_map(|(dg, &t)| dg.map(|d| (t, d)))
                    .collect()
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn relu_forward_and_mask() {
        let mut tape = Tape::new();
        let x = tape.param(array![[-1.0, 2.0]]);
        let y = tape.relu(x);
        assert_eq!(tape.value(y), &array![[0.0, 2.0]]);
        let s = tape.mean_all(y);
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap(), &array![[0.0, 0.5]]);
    }

    #[test]
    fn sigmoid_zero_and_identity_matmul() {
        let mut tape = Tape::new();
        let z = tape.constant(array![[0.0]]);
        let s = tape.sigmoid(z);
        assert_eq!(tape.scalar(s), 0.5);
        let eye = tape.constant(Array2::eye(3));
        let x = tape.constant(array![[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]]);
        let y = tape.matmul(eye, x).unwrap();
        assert_eq!(tape.value(y), tape.value(x));
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let mut tape = Tape::new();
        let a = tape.constant(Array2::zeros((2, 3)));
        let b = tape.constant(Array2::zeros((2, 3)));
        assert!(matches!(tape.matmul(a, b), Err(Error::ShapeMismatch { .. })));
        let c = tape.constant(Array2::zeros((3, 2)));
        assert!(tape.add(a, c).is_err());
    }

    #[test]
    fn linear_mean_gradient_closed_form() {
        // loss = mean(W x) with W: 2x3, x: 3x1 -> dL/dW[i,j] = x[j] / 2
        let mut tape = Tape::new();
        let w = tape.param(array![[0.1, -0.2, 0.3], [0.4, 0.5, -0.6]]);
        let x = tape.constant(array![[1.0], [2.0], [3.0]]);
        let y = tape.matmul(w, x).unwrap();
        let l = tape.mean_all(y);
        let g = tape.backward(l).unwrap();
        assert_eq!(g.get(w).unwrap(), &array![[0.5, 1.0, 1.5], [0.5, 1.0, 1.5]]);
        assert!(g.get(x).is_none());
    }

    #[test]
    fn masked_rows_get_exact_zero_gradient() {
        let mut tape = Tape::new();
        let logits = tape.param(array![[1.0, 2.0], [0.3, -0.1], [2.0, 0.0]]);
        let loss = tape
            .softmax_cross_entropy(logits, Arc::new(vec![0, 1, 0]), Arc::new(vec![0, 2]))
            .unwrap();
        let g = tape.backward(loss).unwrap();
        let gl = g.get(logits).unwrap();
        assert_eq!(gl.row(1).to_vec(), vec![0.0, 0.0]);
    }

    #[test]
    fn backward_twice_or_non_scalar_fails() {
        let mut tape = Tape::new();
        let x = tape.param(array![[1.0, 2.0]]);
        assert!(tape.backward(x).is_err());
        let m = tape.mean_all(x);
        tape.backward(m).unwrap();
        assert!(tape.backward(m).is_err());
        let mut empty = Tape::new();
        assert!(empty.backward(Tensor { id: 0 }).is_err());
    }

    #[test]
    fn losses_reference_values() {
        let mut tape = Tape::new();
        let logits = tape.constant(Array2::zeros((4, 5)));
        let ce = tape
            .softmax_cross_entropy(logits, Arc::new(vec![0, 1, 2, 3]), Arc::new(vec![0, 1, 2, 3]))
            .unwrap();
        assert!((tape.scalar(ce) - 5f64.ln()).abs() < 1e-12);

        let p = tape.constant(Array2::from_elem((3, 1), 0.5));
        let bce = tape.binary_cross_entropy(p, Arc::new(vec![1.0, 0.0, 1.0])).unwrap();
        assert!((tape.scalar(bce) - 2f64.ln()).abs() < 1e-12);

        let perfect = tape.constant(array![[1.0], [0.0]]);
        let bce = tape.binary_cross_entropy(perfect, Arc::new(vec![1.0, 0.0])).unwrap();
        assert!(tape.scalar(bce) < 1e-6);

        let big = tape.constant(array![[100.0, 0.0], [0.0, 100.0]]);
        let ce = tape
            .softmax_cross_entropy(big, Arc::new(vec![0, 1]), Arc::new(vec![0, 1]))
            .unwrap();
        assert!(tape.scalar(ce) < 1e-6);
    }

    #[test]
    fn empty_masks_rejected() {
        let mut tape = Tape::new();
        let logits = tape.constant(Array2::zeros((2, 2)));
        assert!(tape
            .softmax_cross_entropy(logits, Arc::new(vec![0, 1]), Arc::new(vec![]))
            .is_err());
        let p = tape.constant(Array2::zeros((0, 1)));
        assert!(tape.binary_cross_entropy(p, Arc::new(vec![])).is_err());
    }

    #[test]
    fn blend_selects_rows_exactly() {
        let mut tape = Tape::new();
        let gate = tape.constant(array![[1.0], [0.0], [0.25]]);
        let on = tape.constant(array![[1.0, 2.0], [3.0, 4.0], [4.0, 8.0]]);
        let off = tape.constant(array![[9.0, 9.0], [7.0, 7.0], [0.0, 0.0]]);
        let out = tape.blend(gate, on, off).unwrap();
        assert_eq!(tape.value(out), &array![[1.0, 2.0], [7.0, 7.0], [1.0, 2.0]]);
    }

    #[test]
    fn dropout_is_seeded_and_unbiased_in_scale() {
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(3);
            let mut tape = Tape::new();
            let x = tape.constant(Array2::ones((50, 40)));
            let y = tape.dropout(x, 0.5, &mut rng);
            tape.value(y).clone()
        };
        let a = run();
        assert_eq!(a, run());
        let mean = a.mean().unwrap();
        assert!((mean - 1.0).abs() < 0.1);
        assert!(a.iter().all(|&v| v == 0.0 || v == 2.0));
    }

    #[test]
    fn non_finite_forward_blocks_backward() {
        let mut tape = Tape::new();
        let x = tape.param(array![[f64::NAN]]);
        let m = tape.mean_all(x);
        assert!(matches!(tape.backward(m), Err(Error::NonFinite(_))));
    }
}
