use std::collections::HashMap;
use std::sync::Arc;

use ndarray::{concatenate, s, Array2, Axis};

use super::{
    check_finite, sigmoid, softmax_rows, ParamId, ParamStore, Result, SparseRows, TensorError,
};

static NO_PARAMS: ParamStore = ParamStore::new();

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Tensor(usize);

enum Value {
    Owned(Array2<f64>),
    Param(ParamId),
}

enum Op {
    Leaf,
    MatMul(usize, usize),
    Transpose(usize),
    Add(usize, usize),
    AddRow(usize, usize),
    Mul(usize, usize),
    Affine(usize, f64),
    Tanh(usize),
    Sigmoid(usize),
    LeakyRelu(usize, f64),
    SoftmaxRows(usize),
    ConcatRows(Vec<usize>),
    ConcatCols(Vec<usize>),
    SliceRows(usize, usize),
    SliceCols(usize, usize),
    GatherRows(usize, Vec<usize>),
    Sparse(Arc<SparseRows>, usize),
    Dropout(usize, Array2<f64>),
    CrossEntropy(usize, Vec<usize>, Array2<f64>),
    SumSquares(usize),
    Sum(usize),
}

struct Node {
    value: Value,
    op: Op,
    requires_grad: bool,
}

/// Record of a forward computation.
///
/// A tape is single-use: after [`Tape::backward`] it refuses a second pass.
pub struct Tape<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
    param_nodes: HashMap<ParamId, usize>,
    differentiated: bool,
}

/// Result of a backward pass.
pub struct Gradients {
    leaves: Vec<Option<Array2<f64>>>,
    params: HashMap<ParamId, usize>,
}

impl Gradients {
    /// Gradient of a parameter, `None` if the parameter never reached the loss.
    pub fn param(&self, id: ParamId) -> Option<&Array2<f64>> {
        self.params.get(&id).and_then(|&n| self.leaves[n].as_ref())
    }

    /// Gradient of a parameter with zeros substituted for unreached ones.
    pub fn param_or_zeros(&self, id: ParamId, store: &ParamStore) -> Array2<f64> {
        self.param(id)
            .cloned()
            .unwrap_or_else(|| Array2::zeros(store.get(id).raw_dim()))
    }

    /// Gradient of a variable leaf created with [`Tape::variable`].
    pub fn of(&self, t: Tensor) -> Option<&Array2<f64>> {
        self.leaves.get(t.0).and_then(Option::as_ref)
    }
}

impl Default for Tape<'static> {
    fn default() -> Self {
        Tape::new()
    }
}

impl Tape<'static> {
    /// A tape with no parameter store; only variables and constants.
    pub fn new() -> Self {
        Tape::with_params(&NO_PARAMS)
    }
}

impl<'p> Tape<'p> {
    pub fn with_params(params: &'p ParamStore) -> Self {
        Tape {
            params,
            nodes: Vec::new(),
            param_nodes: HashMap::new(),
            differentiated: false,
        }
    }

    /// The parameter store this tape reads from.
    pub fn store(&self) -> &'p ParamStore {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, t: Tensor) -> &Array2<f64> {
        self.val(t.0)
    }

    pub fn shape(&self, t: Tensor) -> (usize, usize) {
        self.val(t.0).dim()
    }

    /// Value of a `1 x 1` tensor.
    pub fn scalar(&self, t: Tensor) -> f64 {
        self.val(t.0)[[0, 0]]
    }

    fn val(&self, i: usize) -> &Array2<f64> {
        match &self.nodes[i].value {
            Value::Owned(a) => a,
            Value::Param(id) => self.params.get(*id),
        }
    }

    fn push(&mut self, value: Array2<f64>, op: Op, requires_grad: bool) -> Tensor {
        self.nodes.push(Node {
            value: Value::Owned(value),
            op,
            requires_grad,
        });
        Tensor(self.nodes.len() - 1)
    }

    fn push_op(&mut self, name: &'static str, value: Array2<f64>, op: Op) -> Result<Tensor> {
        check_finite(name, &value)?;
        let requires_grad = op_inputs(&op).iter().any(|&i| self.nodes[i].requires_grad);
        Ok(self.push(value, op, requires_grad))
    }

    /// Input that takes no gradient.
    pub fn constant(&mut self, value: Array2<f64>) -> Result<Tensor> {
        check_finite("constant", &value)?;
        Ok(self.push(value, Op::Leaf, false))
    }

    /// Input whose gradient is reported by [`Gradients::of`].
    pub fn variable(&mut self, value: Array2<f64>) -> Result<Tensor> {
        check_finite("variable", &value)?;
        Ok(self.push(value, Op::Leaf, true))
    }

    /// Registers a stored parameter; repeated calls return the same handle.
    pub fn param(&mut self, id: ParamId) -> Tensor {
        if let Some(&n) = self.param_nodes.get(&id) {
            return Tensor(n);
        }
        self.nodes.push(Node {
            value: Value::Param(id),
            op: Op::Leaf,
            requires_grad: true,
        });
        let n = self.nodes.len() - 1;
        self.param_nodes.insert(id, n);
        Tensor(n)
    }

    pub fn matmul(&mut self, a: Tensor, b: Tensor) -> Result<Tensor> {
        let (x, y) = (self.val(a.0), self.val(b.0));
        if x.ncols() != y.nrows() {
            return Err(shape_err("matmul", x, y));
        }
        let out = x.dot(y);
        self.push_op("matmul", out, Op::MatMul(a.0, b.0))
    }

    pub fn transpose(&mut self, a: Tensor) -> Result<Tensor> {
        let out = self.val(a.0).t().to_owned();
        self.push_op("transpose", out, Op::Transpose(a.0))
    }

    pub fn add(&mut self, a: Tensor, b: Tensor) -> Result<Tensor> {
        let (x, y) = (self.val(a.0), self.val(b.0));
        if x.dim() != y.dim() {
            return Err(shape_err("add", x, y));
        }
        let out = x + y;
        self.push_op("add", out, Op::Add(a.0, b.0))
    }

    /// Adds a `1 x c` row to every row of an `n x c` matrix.
    pub fn add_row(&mut self, a: Tensor, row: Tensor) -> Result<Tensor> {
        let (x, r) = (self.val(a.0), self.val(row.0));
        if r.nrows() != 1 || r.ncols() != x.ncols() {
            return Err(shape_err("add_row", x, r));
        }
        let out = x + r;
        self.push_op("add_row", out, Op::AddRow(a.0, row.0))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Tensor, b: Tensor) -> Result<Tensor> {
        let (x, y) = (self.val(a.0), self.val(b.0));
        if x.dim() != y.dim() {
            return Err(shape_err("mul", x, y));
        }
        let out = x * y;
        self.push_op("mul", out, Op::Mul(a.0, b.0))
    }

    /// `scale * a + shift`, elementwise.
    pub fn affine(&mut self, a: Tensor, scale: f64, shift: f64) -> Result<Tensor> {
        let out = self.val(a.0).mapv(|v| scale * v + shift);
        self.push_op("affine", out, Op::Affine(a.0, scale))
    }

    pub fn tanh(&mut self, a: Tensor) -> Result<Tensor> {
        let out = self.val(a.0).mapv(f64::tanh);
        self.push_op("tanh", out, Op::Tanh(a.0))
    }

    pub fn sigmoid(&mut self, a: Tensor) -> Result<Tensor> {
        let out = self.val(a.0).mapv(sigmoid);
        self.push_op("sigmoid", out, Op::Sigmoid(a.0))
    }

    pub fn leaky_relu(&mut self, a: Tensor, slope: f64) -> Result<Tensor> {
        let out = self.val(a.0).mapv(|v| if v >= 0.0 { v } else { slope * v });
        self.push_op("leaky_relu", out, Op::LeakyRelu(a.0, slope))
    }

    pub fn softmax_rows(&mut self, a: Tensor) -> Result<Tensor> {
        let out = softmax_rows(self.val(a.0));
        self.push_op("softmax_rows", out, Op::SoftmaxRows(a.0))
    }

    pub fn concat_rows(&mut self, parts: &[Tensor]) -> Result<Tensor> {
        let views: Vec<_> = parts.iter().map(|t| self.val(t.0).view()).collect();
        let out =
            concatenate(Axis(0), &views).map_err(|_| concat_err("concat_rows", self, parts))?;
        self.push_op(
            "concat_rows",
            out,
            Op::ConcatRows(parts.iter().map(|t| t.0).collect()),
        )
    }

    pub fn concat_cols(&mut self, parts: &[Tensor]) -> Result<Tensor> {
        let views: Vec<_> = parts.iter().map(|t| self.val(t.0).view()).collect();
        let out =
            concatenate(Axis(1), &views).map_err(|_| concat_err("concat_cols", self, parts))?;
        self.push_op(
            "concat_cols",
            out,
            Op::ConcatCols(parts.iter().map(|t| t.0).collect()),
        )
    }

    pub fn slice_rows(&mut self, a: Tensor, start: usize, len: usize) -> Result<Tensor> {
        let x = self.val(a.0);
        if start + len > x.nrows() {
            return Err(TensorError::Index {
                op: "slice_rows",
                index: start + len,
                len: x.nrows(),
            });
        }
        let out = x.slice(s![start..start + len, ..]).to_owned();
        self.push_op("slice_rows", out, Op::SliceRows(a.0, start))
    }

    pub fn slice_cols(&mut self, a: Tensor, start: usize, len: usize) -> Result<Tensor> {
        let x = self.val(a.0);
        if start + len > x.ncols() {
            return Err(TensorError::Index {
                op: "slice_cols",
                index: start + len,
                len: x.ncols(),
            });
        }
        let out = x.slice(s![.., start..start + len]).to_owned();
        self.push_op("slice_cols", out, Op::SliceCols(a.0, start))
    }

    /// Row `i` of the output is row `index[i]` of `a`; rows may repeat.
    pub fn gather_rows(&mut self, a: Tensor, index: &[usize]) -> Result<Tensor> {
        let x = self.val(a.0);
        if let Some(&bad) = index.iter().find(|&&i| i >= x.nrows()) {
            return Err(TensorError::Index {
                op: "gather_rows",
                index: bad,
                len: x.nrows(),
            });
        }
        let out = x.select(Axis(0), index);
        self.push_op("gather_rows", out, Op::GatherRows(a.0, index.to_vec()))
    }

    /// Product of a constant sparse matrix with `a`.
    pub fn sparse_matmul(&mut self, m: &Arc<SparseRows>, a: Tensor) -> Result<Tensor> {
        let x = self.val(a.0);
        if m.shape().1 != x.nrows() {
            return Err(TensorError::Shape {
                op: "sparse_matmul",
                left: m.shape(),
                right: x.dim(),
            });
        }
        let out = m.matmul(x);
        self.push_op("sparse_matmul", out, Op::Sparse(Arc::clone(m), a.0))
    }

    /// Mean of each listed row subset, one output row per subset.
    pub fn mean_rows(&mut self, a: Tensor, groups: &[Vec<usize>]) -> Result<Tensor> {
        let n = self.val(a.0).nrows();
        if groups.iter().any(Vec::is_empty) {
            return Err(TensorError::Invalid("mean_rows: empty row subset".into()));
        }
        if let Some(&bad) = groups.iter().flatten().find(|&&i| i >= n) {
            return Err(TensorError::Index {
                op: "mean_rows",
                index: bad,
                len: n,
            });
        }
        let m = Arc::new(SparseRows::row_means(n, groups));
        self.sparse_matmul(&m, a)
    }

    /// Multiplies by a caller-supplied mask (already scaled by `1/(1-p)`).
    pub fn dropout(&mut self, a: Tensor, mask: Array2<f64>) -> Result<Tensor> {
        let x = self.val(a.0);
        if x.dim() != mask.dim() {
            return Err(shape_err("dropout", x, &mask));
        }
        let out = x * &mask;
        self.push_op("dropout", out, Op::Dropout(a.0, mask))
    }

    /// Mean softmax cross-entropy of each logit row against its label.
    pub fn cross_entropy(&mut self, logits: Tensor, labels: &[usize]) -> Result<Tensor> {
        let x = self.val(logits.0);
        if x.nrows() != labels.len() || x.nrows() == 0 {
            return Err(TensorError::Shape {
                op: "cross_entropy",
                left: x.dim(),
                right: (labels.len(), 1),
            });
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= x.ncols()) {
            return Err(TensorError::Index {
                op: "cross_entropy",
                index: bad,
                len: x.ncols(),
            });
        }
        let mut total = 0.0;
        for (row, &label) in x.rows().into_iter().zip(labels) {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            total += lse - row[label];
        }
        let probs = softmax_rows(x);
        let out = Array2::from_elem((1, 1), total / labels.len() as f64);
        self.push_op(
            "cross_entropy",
            out,
            Op::CrossEntropy(logits.0, labels.to_vec(), probs),
        )
    }

    /// Sum of squared entries, as a scalar.
    pub fn sum_squares(&mut self, a: Tensor) -> Result<Tensor> {
        let v = self.val(a.0).iter().map(|v| v * v).sum::<f64>();
        self.push_op(
            "sum_squares",
            Array2::from_elem((1, 1), v),
            Op::SumSquares(a.0),
        )
    }

    /// Sum of all entries, as a scalar.
    pub fn sum(&mut self, a: Tensor) -> Result<Tensor> {
        let v = self.val(a.0).sum();
        self.push_op("sum", Array2::from_elem((1, 1), v), Op::Sum(a.0))
    }

    /// Reverse sweep from a scalar loss.
    pub fn backward(&mut self, loss: Tensor) -> Result<Gradients> {
        if self.differentiated {
            return Err(TensorError::BackwardTwice);
        }
        let dim = self.val(loss.0).dim();
        if dim != (1, 1) {
            return Err(TensorError::NotScalar(dim));
        }
        self.differentiated = true;

        let mut grads: Vec<Option<Array2<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        if self.nodes[loss.0].requires_grad {
            grads[loss.0] = Some(Array2::ones((1, 1)));
        }
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, g, &mut grads);
        }
        // only leaves keep their gradients
        for (i, node) in self.nodes.iter().enumerate() {
            if !matches!(node.op, Op::Leaf) || !node.requires_grad {
                grads[i] = None;
            }
        }
        Ok(Gradients {
            leaves: grads,
            params: self.param_nodes.clone(),
        })
    }

    fn propagate(&self, i: usize, g: Array2<f64>, grads: &mut [Option<Array2<f64>>]) {
        let out = self.val(i);
        let mut acc = |j: usize, contrib: Array2<f64>| {
            if !self.nodes[j].requires_grad {
                return;
            }
            match &mut grads[j] {
                Some(existing) => *existing += &contrib,
                slot @ None => *slot = Some(contrib),
            }
        };
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.nodes[*a].requires_grad {
                    acc(*a, g.dot(&self.val(*b).t()));
                }
                if self.nodes[*b].requires_grad {
                    acc(*b, self.val(*a).t().dot(&g));
                }
            }
            Op::Transpose(a) => acc(*a, g.t().to_owned()),
            Op::Add(a, b) => {
                if a == b {
                    acc(*a, &g * 2.0);
                } else {
                    acc(*a, g.clone());
                    acc(*b, g);
                }
            }
            Op::AddRow(a, r) => {
                acc(*r, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                acc(*a, g);
            }
            Op::Mul(a, b) => {
                let (x, y) = (self.val(*a), self.val(*b));
                acc(*a, &g * y);
                acc(*b, &g * x);
            }
            Op::Affine(a, scale) => acc(*a, g * *scale),
            Op::Tanh(a) => acc(*a, &g * &out.mapv(|y| 1.0 - y * y)),
            Op::Sigmoid(a) => acc(*a, &g * &out.mapv(|y| y * (1.0 - y))),
            Op::LeakyRelu(a, slope) => {
                let x = self.val(*a);
                let mut d = g;
                d.zip_mut_with(x, |gv, &xv| {
                    if xv < 0.0 {
                        *gv *= slope
                    }
                });
                acc(*a, d);
            }
            Op::SoftmaxRows(a) => {
                let mut d = &g * out;
                for (mut drow, yrow) in d.rows_mut().into_iter().zip(out.rows()) {
                    let dot = drow.sum();
                    drow.zip_mut_with(&yrow, |dv, &yv| *dv -= yv * dot);
                }
                acc(*a, d);
            }
            Op::ConcatRows(parts) => {
                let mut start = 0;
                for &p in parts {
                    let n = self.val(p).nrows();
                    acc(p, g.slice(s![start..start + n, ..]).to_owned());
                    start += n;
                }
            }
            Op::ConcatCols(parts) => {
                let mut start = 0;
                for &p in parts {
                    let n = self.val(p).ncols();
                    acc(p, g.slice(s![.., start..start + n]).to_owned());
                    start += n;
                }
            }
            Op::SliceRows(a, start) => {
                let mut d = Array2::zeros(self.val(*a).raw_dim());
                d.slice_mut(s![*start..*start + g.nrows(), ..]).assign(&g);
                acc(*a, d);
            }
            Op::SliceCols(a, start) => {
                let mut d = Array2::zeros(self.val(*a).raw_dim());
                d.slice_mut(s![.., *start..*start + g.ncols()]).assign(&g);
                acc(*a, d);
            }
            Op::GatherRows(a, index) => {
                let mut d = Array2::zeros(self.val(*a).raw_dim());
                for (r, &src) in index.iter().enumerate() {
                    let mut row = d.row_mut(src);
                    row += &g.row(r);
                }
                acc(*a, d);
            }
            Op::Sparse(m, a) => acc(*a, m.transpose_matmul(&g)),
            Op::Dropout(a, mask) => acc(*a, g * mask),
            Op::CrossEntropy(a, labels, probs) => {
                let scale = g[[0, 0]] / labels.len() as f64;
                let mut d = probs.clone();
                for (r, &l) in labels.iter().enumerate() {
                    d[[r, l]] -= 1.0;
                }
                acc(*a, d * scale);
            }
            Op::SumSquares(a) => acc(*a, self.val(*a) * (2.0 * g[[0, 0]])),
            Op::Sum(a) => acc(*a, Array2::from_elem(self.val(*a).raw_dim(), g[[0, 0]])),
        }
    }
}

fn op_inputs(op: &Op) -> Vec<usize> {
    match op {
        Op::Leaf => vec![],
        Op::MatMul(a, b) | Op::Add(a, b) | Op::AddRow(a, b) | Op::Mul(a, b) => vec![*a, *b],
        Op::Transpose(a)
        | Op::Affine(a, _)
        | Op::Tanh(a)
        | Op::Sigmoid(a)
        | Op::LeakyRelu(a, _)
        | Op::SoftmaxRows(a)
        | Op::SliceRows(a, _)
        | Op::SliceCols(a, _)
        | Op::GatherRows(a, _)
        | Op::Sparse(_, a)
        | Op::Dropout(a, _)
        | Op::CrossEntropy(a, _, _)
        | Op::SumSquares(a)
        | Op::Sum(a) => vec![*a],
        Op::ConcatRows(p) | Op::ConcatCols(p) => p.clone(),
    }
}

fn shape_err(op: &'static str, a: &Array2<f64>, b: &Array2<f64>) -> TensorError {
    TensorError::Shape {
        op,
        left: a.dim(),
        right: b.dim(),
    }
}

fn concat_err(op: &'static str, tape: &Tape<'_>, parts: &[Tensor]) -> TensorError {
    match parts {
        [] => TensorError::Invalid(format!("{op}: nothing to concatenate")),
        [first, rest @ ..] => {
            let left = tape.shape(*first);
            let right = rest
                .iter()
                .map(|t| tape.shape(*t))
                .find(|s| {
                    if op == "concat_rows" {
                        s.1 != left.1
                    } else {
                        s.0 != left.0
                    }
                })
                .unwrap_or(left);
            TensorError::Shape { op, left, right }
        }
    }
}
