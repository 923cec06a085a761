//! Tape-based reverse-mode differentiation over dense matrices.
//!
//! Nodes are appended in evaluation order, so the tape is already a
//! topological order of the expression DAG: the backward sweep walks it in
//! reverse and touches each node at most once. Parameters live in a
//! [`ParamStore`] outside the tape; a [`Graph`] only borrows their current
//! values as leaves, which keeps the forward pass a pure function of the
//! parameters.

use std::collections::HashMap;

use super::tensor::{gemm, matmul_t, Tensor};
use super::DiffError;

/// Index of a node on a [`Graph`] tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(pub(crate) usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Index of a parameter tensor inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug, PartialEq)]
struct Param {
    name: String,
    value: Tensor,
    frozen: bool,
}

/// Owned set of named parameter tensors. Frozen parameters never receive
/// gradients and are rejected by the optimizer.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        self.params.push(Param { name: name.into(), value, frozen: false });
        ParamId(self.params.len() - 1)
    }

    pub fn add_frozen(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        self.params.push(Param { name: name.into(), value, frozen: true });
        ParamId(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].value
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.params[id.0].name
    }

    pub fn is_frozen(&self, id: ParamId) -> bool {
        self.params[id.0].frozen
    }

    pub fn freeze_all(&mut self) {
        for p in &mut self.params {
            p.frozen = true;
        }
    }

    /// Total number of scalar entries.
    pub fn scalar_count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn trainable_scalar_count(&self) -> usize {
        self.params.iter().filter(|p| !p.frozen).map(|p| p.value.len()).sum()
    }

    /// All parameter values, concatenated in id order.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.scalar_count());
        for p in &self.params {
            out.extend_from_slice(p.value.data());
        }
        out
    }

    /// Inverse of [`ParamStore::flatten`] for a store with the same layout.
    pub fn load_flat(&mut self, flat: &[f64]) -> Result<(), DiffError> {
        if flat.len() != self.scalar_count() {
            return Err(DiffError::ShapeMismatch {
                context: "load_flat".into(),
                expected: (self.scalar_count(), 1),
                found: (flat.len(), 1),
            });
        }
        let mut off = 0;
        for p in &mut self.params {
            let n = p.value.len();
            p.value.data_mut().copy_from_slice(&flat[off..off + n]);
            off += n;
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMulT(NodeId, NodeId),
    AddBias(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    AddScalar(NodeId),
    Tanh(NodeId),
    Relu(NodeId),
    Log(NodeId),
    Clamp(NodeId, f64, f64),
    Mse(NodeId, NodeId),
    SoftmaxCe(NodeId, Vec<usize>),
    RowNorm(NodeId),
    RowDot(NodeId, NodeId),
    RowCosine(NodeId, NodeId),
    CosineMatrix(NodeId, NodeId),
    Transpose(NodeId),
    SliceCols(NodeId, usize),
    ConcatCols(Vec<NodeId>),
    Mean(NodeId),
    Sum(NodeId),
}

#[derive(Clone, Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
    param: Option<ParamId>,
}

/// Gradients of a scalar loss with respect to every trainable parameter
/// that the loss depends on.
#[derive(Clone, Debug, Default)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, id: ParamId) -> Option<&Tensor> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Tensor)> {
        self.grads.iter().enumerate().filter_map(|(i, g)| g.as_ref().map(|t| (ParamId(i), t)))
    }

    pub fn len(&self) -> usize {
        self.grads.iter().filter(|g| g.is_some()).count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[cfg(test)]
    pub(crate) fn insert_for_test(&mut self, index: usize, g: Tensor) {
        if self.grads.len() <= index {
            self.grads.resize(index + 1, None);
        }
        self.grads[index] = Some(g);
    }
}

/// An expression tape. Build it with the operator methods, then call
/// [`Graph::backward`] on a scalar node.
#[derive(Clone, Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    param_nodes: HashMap<ParamId, NodeId>,
    no_grad_depth: usize,
    first_non_finite: Option<NodeId>,
}

fn relu(v: f64) -> f64 {
    if v > 0.0 {
        v
    } else {
        0.0
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Runs `f` with gradient tracking disabled: every node it creates is a
    /// constant with respect to the parameters.
    pub fn no_grad<R>(&mut self, f: impl FnOnce(&mut Self) -> R) -> R {
        self.no_grad_depth += 1;
        let out = f(self);
        self.no_grad_depth -= 1;
        out
    }

    fn tracking(&self) -> bool {
        self.no_grad_depth == 0
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> NodeId {
        let id = NodeId(self.nodes.len());
        if self.first_non_finite.is_none() && !value.all_finite() {
            self.first_non_finite = Some(id);
        }
        let needs_grad = needs_grad && self.tracking();
        self.nodes.push(Node { value, op, needs_grad, param: None });
        id
    }

    fn unary(&mut self, a: NodeId, value: Tensor, op: Op) -> NodeId {
        let ng = self.nodes[a.0].needs_grad;
        self.push(value, op, ng)
    }

    fn binary(&mut self, a: NodeId, b: NodeId, value: Tensor, op: Op) -> NodeId {
        let ng = self.nodes[a.0].needs_grad || self.nodes[b.0].needs_grad;
        self.push(value, op, ng)
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    /// First node whose forward value contained a NaN or infinity.
    pub fn first_non_finite(&self) -> Option<NodeId> {
        self.first_non_finite
    }

    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Leaf, false)
    }

    /// Leaf holding the current value of a parameter. Repeated calls for the
    /// same parameter share one leaf.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> NodeId {
        if let Some(&n) = self.param_nodes.get(&id) {
            return n;
        }
        let trainable = !store.is_frozen(id);
        let node = self.push(store.get(id).clone(), Op::Leaf, trainable);
        if self.tracking() {
            self.nodes[node.0].param = Some(id);
            self.param_nodes.insert(id, node);
        }
        node
    }

    /// Batched matrix-vector product: row `r` of the result is `w · x_r`.
    pub fn matmul_t(&mut self, x: NodeId, w: NodeId) -> NodeId {
        let v = matmul_t(self.value(x), self.value(w));
        self.binary(x, w, v, Op::MatMulT(x, w))
    }

    pub fn add_bias(&mut self, x: NodeId, b: NodeId) -> NodeId {
        let (xv, bv) = (self.value(x), self.value(b));
        assert_eq!(bv.rows(), 1, "bias must be a row vector");
        assert_eq!(xv.cols(), bv.cols(), "bias width mismatch");
        let mut v = xv.clone();
        for r in 0..v.rows() {
            for (o, bb) in v.row_slice_mut(r).iter_mut().zip(bv.data()) {
                *o += bb;
            }
        }
        self.binary(x, b, v, Op::AddBias(x, b))
    }

    fn zip_with(&self, a: NodeId, b: NodeId, f: impl Fn(f64, f64) -> f64, what: &str) -> Tensor {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(av.shape(), bv.shape(), "{what}: shape mismatch");
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::from_vec(av.rows(), av.cols(), data)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.zip_with(a, b, |x, y| x + y, "add");
        self.binary(a, b, v, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.zip_with(a, b, |x, y| x - y, "sub");
        self.binary(a, b, v, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.zip_with(a, b, |x, y| x * y, "mul");
        self.binary(a, b, v, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: NodeId, s: f64) -> NodeId {
        let v = self.value(a).map(|x| x * s);
        self.unary(a, v, Op::Scale(a, s))
    }

    pub fn add_scalar(&mut self, a: NodeId, c: f64) -> NodeId {
        let v = self.value(a).map(|x| x + c);
        self.unary(a, v, Op::AddScalar(a))
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(f64::tanh);
        self.unary(a, v, Op::Tanh(a))
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(relu);
        self.unary(a, v, Op::Relu(a))
    }

    pub fn log(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(f64::ln);
        self.unary(a, v, Op::Log(a))
    }

    /// Elementwise clamp into `[lo, hi]`; the adjoint passes gradient only
    /// where the input already lies inside the interval.
    pub fn clamp(&mut self, a: NodeId, lo: f64, hi: f64) -> NodeId {
        assert!(lo <= hi, "clamp interval is empty");
        let v = self.value(a).map(|x| x.clamp(lo, hi));
        self.unary(a, v, Op::Clamp(a, lo, hi))
    }

    /// Mean of squared differences over every element.
    pub fn mse(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let d = self.zip_with(a, b, |x, y| (x - y) * (x - y), "mse");
        let n = d.len().max(1) as f64;
        let v = Tensor::scalar(d.sum() / n);
        self.binary(a, b, v, Op::Mse(a, b))
    }

    /// Mean over rows of `-log softmax(logits_r)[target_r]`.
    pub fn softmax_ce(&mut self, logits: NodeId, targets: &[usize]) -> NodeId {
        let l = self.value(logits);
        assert_eq!(l.rows(), targets.len(), "softmax_ce: one target per row");
        let mut total = 0.0;
        for (r, &t) in targets.iter().enumerate() {
            let row = l.row_slice(r);
            assert!(t < row.len(), "softmax_ce: target out of range");
            total += log_sum_exp(row) - row[t];
        }
        let v = Tensor::scalar(total / targets.len().max(1) as f64);
        self.unary(logits, v, Op::SoftmaxCe(logits, targets.to_vec()))
    }

    /// Euclidean norm of each row, as a column.
    pub fn row_norm(&mut self, a: NodeId) -> NodeId {
        let av = self.value(a);
        let data = (0..av.rows()).map(|r| norm(av.row_slice(r))).collect();
        let v = Tensor::from_vec(av.rows(), 1, data);
        self.unary(a, v, Op::RowNorm(a))
    }

    pub fn row_dot(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(av.shape(), bv.shape(), "row_dot: shape mismatch");
        let data = (0..av.rows()).map(|r| dot(av.row_slice(r), bv.row_slice(r))).collect();
        let v = Tensor::from_vec(av.rows(), 1, data);
        self.binary(a, b, v, Op::RowDot(a, b))
    }

    /// Cosine similarity of matching rows.
    pub fn row_cosine(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(av.shape(), bv.shape(), "row_cosine: shape mismatch");
        let data = (0..av.rows())
            .map(|r| {
                let (x, y) = (av.row_slice(r), bv.row_slice(r));
                dot(x, y) / (norm(x) * norm(y))
            })
            .collect();
        let v = Tensor::from_vec(av.rows(), 1, data);
        self.binary(a, b, v, Op::RowCosine(a, b))
    }

    /// All-pairs cosine similarity: entry `(i, j)` is `cos(a_i, b_j)`.
    pub fn cosine_matrix(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let an = normalize_rows(self.value(a)).0;
        let bn = normalize_rows(self.value(b)).0;
        let v = matmul_t(&an, &bn);
        self.binary(a, b, v, Op::CosineMatrix(a, b))
    }

    pub fn transpose(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).transpose();
        self.unary(a, v, Op::Transpose(a))
    }

    /// Columns `start..end` of every row.
    pub fn slice_cols(&mut self, a: NodeId, start: usize, end: usize) -> NodeId {
        let av = self.value(a);
        assert!(start <= end && end <= av.cols(), "slice_cols out of range");
        let w = end - start;
        let mut data = Vec::with_capacity(av.rows() * w);
        for r in 0..av.rows() {
            data.extend_from_slice(&av.row_slice(r)[start..end]);
        }
        let v = Tensor::from_vec(av.rows(), w, data);
        self.unary(a, v, Op::SliceCols(a, start))
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> NodeId {
        assert!(!parts.is_empty(), "concat_cols of nothing");
        let rows = self.value(parts[0]).rows();
        let cols: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut v = Tensor::zeros(rows, cols);
        for r in 0..rows {
            let mut off = 0;
            for &p in parts {
                let pv = self.value(p);
                assert_eq!(pv.rows(), rows, "concat_cols: row mismatch");
                v.row_slice_mut(r)[off..off + pv.cols()].copy_from_slice(pv.row_slice(r));
                off += pv.cols();
            }
        }
        let ng = parts.iter().any(|&p| self.nodes[p.0].needs_grad);
        self.push(v, Op::ConcatCols(parts.to_vec()), ng)
    }

    pub fn mean(&mut self, a: NodeId) -> NodeId {
        let av = self.value(a);
        let v = Tensor::scalar(av.sum() / av.len().max(1) as f64);
        self.unary(a, v, Op::Mean(a))
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let v = Tensor::scalar(self.value(a).sum());
        self.unary(a, v, Op::Sum(a))
    }

    /// Reverse sweep from a scalar node.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients, DiffError> {
        let shape = self.value(loss).shape();
        if shape != (1, 1) {
            return Err(DiffError::NonScalarLoss { node: loss.0, shape });
        }
        if let Some(bad) = self.first_non_finite.filter(|b| b.0 <= loss.0) {
            return Err(DiffError::NonFinite { node: bad.0 });
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        let mut out = Gradients::default();
        if !self.nodes[loss.0].needs_grad {
            return Ok(out);
        }
        grads[loss.0] = Some(Tensor::scalar(1.0));
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            if let Some(pid) = node.param {
                if out.grads.len() <= pid.0 {
                    out.grads.resize(pid.0 + 1, None);
                }
                out.grads[pid.0] = Some(g);
                continue;
            }
            self.propagate(i, &g, &mut grads);
        }
        Ok(out)
    }

    fn wants(&self, id: NodeId) -> bool {
        self.nodes[id.0].needs_grad
    }

    fn propagate(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[i];
        let y = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMulT(x, w) => {
                let (xv, wv) = (self.value(*x), self.value(*w));
                if self.wants(*x) {
                    let acc = slot(grads, *x, xv.shape());
                    gemm(g.rows(), g.cols(), wv.cols(), g.data(), false, wv.data(), false, acc.data_mut(), 1.0);
                }
                if self.wants(*w) {
                    let acc = slot(grads, *w, wv.shape());
                    gemm(g.cols(), g.rows(), xv.cols(), g.data(), true, xv.data(), false, acc.data_mut(), 1.0);
                }
            }
            Op::AddBias(x, b) => {
                if self.wants(*x) {
                    slot(grads, *x, g.shape()).add_assign(g);
                }
                if self.wants(*b) {
                    let acc = slot(grads, *b, (1, g.cols()));
                    for r in 0..g.rows() {
                        for (a, v) in acc.data_mut().iter_mut().zip(g.row_slice(r)) {
                            *a += v;
                        }
                    }
                }
            }
            Op::Add(a, b) => {
                if self.wants(*a) {
                    slot(grads, *a, g.shape()).add_assign(g);
                }
                if self.wants(*b) {
                    slot(grads, *b, g.shape()).add_assign(g);
                }
            }
            Op::Sub(a, b) => {
                if self.wants(*a) {
                    slot(grads, *a, g.shape()).add_assign(g);
                }
                if self.wants(*b) {
                    accumulate(slot(grads, *b, g.shape()), g.data().iter().map(|v| -v));
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if self.wants(*a) {
                    accumulate(slot(grads, *a, g.shape()), g.data().iter().zip(bv.data()).map(|(g, b)| g * b));
                }
                if self.wants(*b) {
                    accumulate(slot(grads, *b, g.shape()), g.data().iter().zip(av.data()).map(|(g, a)| g * a));
                }
            }
            Op::Scale(a, s) => {
                accumulate(slot(grads, *a, g.shape()), g.data().iter().map(|v| v * s));
            }
            Op::AddScalar(a) => slot(grads, *a, g.shape()).add_assign(g),
            Op::Tanh(a) => {
                accumulate(slot(grads, *a, g.shape()), g.data().iter().zip(y.data()).map(|(g, y)| g * (1.0 - y * y)));
            }
            Op::Relu(a) => {
                let av = self.value(*a);
                accumulate(
                    slot(grads, *a, g.shape()),
                    g.data().iter().zip(av.data()).map(|(g, x)| if *x > 0.0 { *g } else { 0.0 }),
                );
            }
            Op::Log(a) => {
                let av = self.value(*a);
                accumulate(slot(grads, *a, g.shape()), g.data().iter().zip(av.data()).map(|(g, x)| g / x));
            }
            Op::Clamp(a, lo, hi) => {
                let av = self.value(*a);
                accumulate(
                    slot(grads, *a, g.shape()),
                    g.data().iter().zip(av.data()).map(|(g, x)| if *x >= *lo && *x <= *hi { *g } else { 0.0 }),
                );
            }
            Op::Mse(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let k = 2.0 * g.item() / av.len().max(1) as f64;
                let diff: Vec<f64> = av.data().iter().zip(bv.data()).map(|(x, y)| k * (x - y)).collect();
                if self.wants(*a) {
                    accumulate(slot(grads, *a, av.shape()), diff.iter().copied());
                }
                if self.wants(*b) {
                    accumulate(slot(grads, *b, bv.shape()), diff.iter().map(|d| -d));
                }
            }
            Op::SoftmaxCe(l, targets) => {
                let lv = self.value(*l);
                let k = g.item() / targets.len().max(1) as f64;
                let acc = slot(grads, *l, lv.shape());
                for (r, &t) in targets.iter().enumerate() {
                    let row = lv.row_slice(r);
                    let lse = log_sum_exp(row);
                    let out = acc.row_slice_mut(r);
                    for (c, o) in out.iter_mut().enumerate() {
                        let p = (row[c] - lse).exp();
                        *o += k * (p - if c == t { 1.0 } else { 0.0 });
                    }
                }
            }
            Op::RowNorm(a) => {
                let av = self.value(*a);
                let acc = slot(grads, *a, av.shape());
                for r in 0..av.rows() {
                    let n = y.get(r, 0);
                    if n > 0.0 {
                        let k = g.get(r, 0) / n;
                        for (o, x) in acc.row_slice_mut(r).iter_mut().zip(av.row_slice(r)) {
                            *o += k * x;
                        }
                    }
                }
            }
            Op::RowDot(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if self.wants(*a) {
                    let acc = slot(grads, *a, av.shape());
                    for r in 0..av.rows() {
                        let k = g.get(r, 0);
                        for (o, v) in acc.row_slice_mut(r).iter_mut().zip(bv.row_slice(r)) {
                            *o += k * v;
                        }
                    }
                }
                if self.wants(*b) {
                    let acc = slot(grads, *b, bv.shape());
                    for r in 0..bv.rows() {
                        let k = g.get(r, 0);
                        for (o, v) in acc.row_slice_mut(r).iter_mut().zip(av.row_slice(r)) {
                            *o += k * v;
                        }
                    }
                }
            }
            Op::RowCosine(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (an, na) = normalize_rows(av);
                let (bn, nb) = normalize_rows(bv);
                for (src, (this_n, this_norm), other_n) in [(*a, (&an, &na), &bn), (*b, (&bn, &nb), &an)] {
                    if !self.wants(src) {
                        continue;
                    }
                    let acc = slot(grads, src, av.shape());
                    for r in 0..av.rows() {
                        let (gr, c) = (g.get(r, 0), y.get(r, 0));
                        let inv = 1.0 / this_norm[r];
                        let (u, w) = (this_n.row_slice(r), other_n.row_slice(r));
                        for ((o, ui), wi) in acc.row_slice_mut(r).iter_mut().zip(u).zip(w) {
                            *o += gr * (wi - c * ui) * inv;
                        }
                    }
                }
            }
            Op::CosineMatrix(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (an, na) = normalize_rows(av);
                let (bn, nb) = normalize_rows(bv);
                if self.wants(*a) {
                    // G · B̂, then project out the radial component of each row.
                    let mut ga = Tensor::zeros(av.rows(), av.cols());
                    gemm(g.rows(), g.cols(), bn.cols(), g.data(), false, bn.data(), false, ga.data_mut(), 0.0);
                    tangent_accumulate(slot(grads, *a, av.shape()), &ga, &an, &na);
                }
                if self.wants(*b) {
                    let mut gb = Tensor::zeros(bv.rows(), bv.cols());
                    gemm(g.cols(), g.rows(), an.cols(), g.data(), true, an.data(), false, gb.data_mut(), 0.0);
                    tangent_accumulate(slot(grads, *b, bv.shape()), &gb, &bn, &nb);
                }
            }
            Op::Transpose(a) => {
                slot(grads, *a, (g.cols(), g.rows())).add_assign(&g.transpose());
            }
            Op::SliceCols(a, start) => {
                let av = self.value(*a);
                let acc = slot(grads, *a, av.shape());
                for r in 0..g.rows() {
                    for (o, v) in acc.row_slice_mut(r)[*start..].iter_mut().zip(g.row_slice(r)) {
                        *o += v;
                    }
                }
            }
            Op::ConcatCols(parts) => {
                let mut off = 0;
                for &p in parts {
                    let w = self.value(p).cols();
                    if self.wants(p) {
                        let acc = slot(grads, p, (g.rows(), w));
                        for r in 0..g.rows() {
                            for (o, v) in acc.row_slice_mut(r).iter_mut().zip(&g.row_slice(r)[off..off + w]) {
                                *o += v;
                            }
                        }
                    }
                    off += w;
                }
            }
            Op::Mean(a) => {
                let av = self.value(*a);
                let k = g.item() / av.len().max(1) as f64;
                accumulate(slot(grads, *a, av.shape()), std::iter::repeat_n(k, av.len()));
            }
            Op::Sum(a) => {
                let av = self.value(*a);
                accumulate(slot(grads, *a, av.shape()), std::iter::repeat_n(g.item(), av.len()));
            }
        }
    }
}

fn slot(grads: &mut [Option<Tensor>], id: NodeId, shape: (usize, usize)) -> &mut Tensor {
    grads[id.0].get_or_insert_with(|| Tensor::zeros(shape.0, shape.1))
}

fn accumulate(acc: &mut Tensor, vals: impl Iterator<Item = f64>) {
    for (a, v) in acc.data_mut().iter_mut().zip(vals) {
        *a += v;
    }
}

fn tangent_accumulate(acc: &mut Tensor, g: &Tensor, unit: &Tensor, norms: &[f64]) {
    for r in 0..g.rows() {
        let (gr, ur) = (g.row_slice(r), unit.row_slice(r));
        let radial = dot(gr, ur);
        let inv = 1.0 / norms[r];
        for ((o, gi), ui) in acc.row_slice_mut(r).iter_mut().zip(gr).zip(ur) {
            *o += (gi - radial * ui) * inv;
        }
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub(crate) fn log_sum_exp(row: &[f64]) -> f64 {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

fn normalize_rows(t: &Tensor) -> (Tensor, Vec<f64>) {
    let mut out = t.clone();
    let mut norms = Vec::with_capacity(t.rows());
    for r in 0..t.rows() {
        let n = norm(t.row_slice(r));
        norms.push(n);
        for v in out.row_slice_mut(r) {
            *v /= n;
        }
    }
    (out, norms)
}
