//! Reverse-mode automatic differentiation over a define-by-run tape.
//!
//! Every op is evaluated the moment it is recorded, so node values are always
//! available; [`Graph::backward`] walks the tape in exact reverse order.
//! Parameters live in a [`ParamStore`] that the graph borrows immutably;
//! gradients come back as a [`Gradients`] value that the caller folds into the
//! store with [`ParamStore::accumulate`].

use std::collections::BTreeMap;

use rand::Rng;

use crate::error::{GraphError, TensorError};
use crate::tensor::{
    log_softmax_row, matmul_nt_into, matmul_tn_into, sigmoid, softmax_row, Tensor,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
}

/// Named parameter set. Insertion order is the canonical order used by
/// optimizers, checkpoints and gradient checks.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Parameter>,
    by_name: BTreeMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> Result<ParamId, GraphError> {
        let name = name.into();
        if self.by_name.contains_key(&name) {
            return Err(GraphError::Invalid(format!("duplicate parameter `{name}`")));
        }
        let id = ParamId(self.params.len());
        let grad = Tensor::zeros(value.shape());
        self.params.push(Parameter {
            name: name.clone(),
            value,
            grad,
        });
        self.by_name.insert(name, id);
        Ok(id)
    }

    pub fn add_uniform<R: Rng + ?Sized>(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        range: f64,
        rng: &mut R,
    ) -> Result<ParamId, GraphError> {
        self.add(name, Tensor::uniform(shape, range, rng))
    }

    pub fn add_zeros(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
    ) -> Result<ParamId, GraphError> {
        self.add(name, Tensor::zeros(shape))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.params[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn by_name(&self, name: &str) -> Option<&Parameter> {
        self.id(name).map(|id| self.get(id))
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut Parameter> {
        self.params.iter_mut()
    }

    pub fn num_values(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.fill(0.0);
        }
    }

    /// Adds `grads` into the stored gradients.
    pub fn accumulate(&mut self, grads: &Gradients) {
        for (p, g) in self.params.iter_mut().zip(&grads.by_param) {
            if let Some(g) = g {
                p.grad.add_assign(g);
            }
        }
    }

    pub fn grad_norm(&self) -> f64 {
        self.params
            .iter()
            .map(|p| p.grad.sq_norm())
            .sum::<f64>()
            .sqrt()
    }

    /// Rescales all gradients so their global L2 norm is at most `max_norm`.
    /// Returns the norm before clipping.
    pub fn clip_grad_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.grad_norm();
        if norm > max_norm && norm > 0.0 {
            let factor = max_norm / norm;
            for p in &mut self.params {
                p.grad.scale_in_place(factor);
            }
        }
        norm
    }

    /// Copies every parameter value from `other`, which must have the same layout.
    pub fn copy_values_from(&mut self, other: &ParamStore) {
        for (dst, src) in self.params.iter_mut().zip(&other.params) {
            debug_assert_eq!(dst.name, src.name);
            dst.value = src.value.clone();
        }
    }
}

/// Per-parameter gradients produced by one backward pass.
#[derive(Debug, Clone)]
pub struct Gradients {
    by_param: Vec<Option<Tensor>>,
}

impl Gradients {
    /// `None` when the parameter did not take part in the loss.
    pub fn get(&self, id: ParamId) -> Option<&Tensor> {
        self.by_param.get(id.0).and_then(|g| g.as_ref())
    }
}

#[derive(Debug, Clone)]
enum Op {
    Input,
    Param(ParamId),
    MatMul(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    AddRow(NodeId, NodeId),
    MulCol(NodeId, NodeId),
    Scale(NodeId, f64),
    Sigmoid(NodeId),
    Tanh(NodeId),
    Relu(NodeId),
    Softmax(NodeId),
    LogSoftmax(NodeId),
    Concat(Vec<NodeId>),
    SliceCols(NodeId, usize, usize),
    Dropout(NodeId, Vec<f64>),
    Embedding(NodeId, Vec<usize>),
    CrossEntropy {
        logits: NodeId,
        targets: Vec<Option<usize>>,
        probs: Vec<f64>,
    },
    Sum(NodeId),
}

impl Op {
    fn inputs(&self) -> Vec<NodeId> {
        use Op::*;
        match self {
            Input | Param(_) => vec![],
            MatMul(a, b) | Add(a, b) | Sub(a, b) | Mul(a, b) | AddRow(a, b) | MulCol(a, b) => {
                vec![*a, *b]
            }
            Scale(a, _)
            | Sigmoid(a)
            | Tanh(a)
            | Relu(a)
            | Softmax(a)
            | LogSoftmax(a)
            | SliceCols(a, _, _)
            | Dropout(a, _)
            | Embedding(a, _)
            | Sum(a) => vec![*a],
            CrossEntropy { logits, .. } => vec![*logits],
            Concat(xs) => xs.clone(),
        }
    }
}

#[derive(Debug)]
struct Node {
    op: Op,
    value: Tensor,
    requires_grad: bool,
}

/// Computation tape bound to a parameter store.
pub struct Graph<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
    param_nodes: Vec<Option<NodeId>>,
    train: bool,
}

impl<'p> Graph<'p> {
    /// A graph in evaluation mode (dropout is the identity).
    pub fn new(params: &'p ParamStore) -> Self {
        Graph {
            params,
            nodes: Vec::new(),
            param_nodes: vec![None; params.len()],
            train: false,
        }
    }

    pub fn training(params: &'p ParamStore) -> Self {
        let mut g = Self::new(params);
        g.train = true;
        g
    }

    pub fn is_training(&self) -> bool {
        self.train
    }

    pub fn params(&self) -> &'p ParamStore {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> Result<&Tensor, GraphError> {
        let node = self.nodes.get(id.0).ok_or(GraphError::UnknownNode(id.0))?;
        Ok(self.resolve(node))
    }

    fn resolve<'a>(&'a self, node: &'a Node) -> &'a Tensor {
        match node.op {
            Op::Param(p) => &self.params.get(p).value,
            _ => &node.value,
        }
    }

    fn val(&self, id: NodeId) -> &Tensor {
        self.resolve(&self.nodes[id.0])
    }

    fn check(&self, ids: &[NodeId]) -> Result<(), GraphError> {
        for id in ids {
            if id.0 >= self.nodes.len() {
                return Err(GraphError::UnknownNode(id.0));
            }
        }
        Ok(())
    }

    fn push(&mut self, op: Op, value: Tensor, name: &'static str) -> Result<NodeId, GraphError> {
        if !value.all_finite() {
            return Err(GraphError::NonFinite { op: name });
        }
        let requires_grad = op.inputs().iter().any(|i| self.nodes[i.0].requires_grad);
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
        });
        Ok(NodeId(self.nodes.len() - 1))
    }

    /// Constant leaf; receives no gradient.
    pub fn input(&mut self, value: Tensor) -> NodeId {
        self.nodes.push(Node {
            op: Op::Input,
            value,
            requires_grad: false,
        });
        NodeId(self.nodes.len() - 1)
    }

    /// Leaf for a stored parameter. Repeated calls return the same node.
    pub fn param(&mut self, id: ParamId) -> Result<NodeId, GraphError> {
        if id.0 >= self.params.len() {
            return Err(GraphError::UnknownParam(id.0));
        }
        if let Some(n) = self.param_nodes[id.0] {
            return Ok(n);
        }
        self.nodes.push(Node {
            op: Op::Param(id),
            value: Tensor::scalar(0.0),
            requires_grad: true,
        });
        let n = NodeId(self.nodes.len() - 1);
        self.param_nodes[id.0] = Some(n);
        Ok(n)
    }

    pub fn param_by_name(&mut self, name: &str) -> Result<NodeId, GraphError> {
        let id = self
            .params
            .id(name)
            .ok_or_else(|| GraphError::Invalid(format!("no parameter named `{name}`")))?;
        self.param(id)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, GraphError> {
        self.check(&[a, b])?;
        let v = self.val(a).matmul(self.val(b))?;
        self.push(Op::MatMul(a, b), v, "matmul")
    }

    fn same_shape(&self, op: &'static str, a: NodeId, b: NodeId) -> Result<(), GraphError> {
        self.check(&[a, b])?;
        let (x, y) = (self.val(a), self.val(b));
        if x.shape() != y.shape() {
            return Err(TensorError::Incompatible {
                op,
                left: x.shape().to_vec(),
                right: y.shape().to_vec(),
            }
            .into());
        }
        Ok(())
    }

    fn zip(&self, a: NodeId, b: NodeId, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let (x, y) = (self.val(a), self.val(b));
        let data = x
            .data()
            .iter()
            .zip(y.data())
            .map(|(&p, &q)| f(p, q))
            .collect();
        Tensor::new(x.shape().to_vec(), data).expect("same shape")
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, GraphError> {
        self.same_shape("add", a, b)?;
        let v = self.zip(a, b, |p, q| p + q);
        self.push(Op::Add(a, b), v, "add")
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, GraphError> {
        self.same_shape("sub", a, b)?;
        let v = self.zip(a, b, |p, q| p - q);
        self.push(Op::Sub(a, b), v, "sub")
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, GraphError> {
        self.same_shape("mul", a, b)?;
        let v = self.zip(a, b, |p, q| p * q);
        self.push(Op::Mul(a, b), v, "mul")
    }

    /// `a[n,m] + bias[1,m]`, bias broadcast over rows.
    pub fn add_row(&mut self, a: NodeId, bias: NodeId) -> Result<NodeId, GraphError> {
        self.check(&[a, bias])?;
        let (x, b) = (self.val(a), self.val(bias));
        let (n, m) = x.dims2()?;
        if b.len() != m {
            return Err(TensorError::Incompatible {
                op: "add_row",
                left: x.shape().to_vec(),
                right: b.shape().to_vec(),
            }
            .into());
        }
        let mut data = x.data().to_vec();
        for r in 0..n {
            for (o, bv) in data[r * m..(r + 1) * m].iter_mut().zip(b.data()) {
                *o += bv;
            }
        }
        let v = Tensor::new(vec![n, m], data)?;
        self.push(Op::AddRow(a, bias), v, "add_row")
    }

    /// `a[n,m] * col[n,1]`, each row scaled by its column entry.
    pub fn mul_col(&mut self, a: NodeId, col: NodeId) -> Result<NodeId, GraphError> {
        self.check(&[a, col])?;
        let (x, c) = (self.val(a), self.val(col));
        let (n, m) = x.dims2()?;
        if c.len() != n {
            return Err(TensorError::Incompatible {
                op: "mul_col",
                left: x.shape().to_vec(),
                right: c.shape().to_vec(),
            }
            .into());
        }
        let mut data = x.data().to_vec();
        for r in 0..n {
            let s = c.data()[r];
            data[r * m..(r + 1) * m].iter_mut().for_each(|v| *v *= s);
        }
        let v = Tensor::new(vec![n, m], data)?;
        self.push(Op::MulCol(a, col), v, "mul_col")
    }

    pub fn scale(&mut self, a: NodeId, factor: f64) -> Result<NodeId, GraphError> {
        self.check(&[a])?;
        let v = self.val(a).map(|x| x * factor);
        self.push(Op::Scale(a, factor), v, "scale")
    }

    pub fn sigmoid(&mut self, a: NodeId) -> Result<NodeId, GraphError> {
        self.check(&[a])?;
        let v = self.val(a).map(sigmoid);
        self.push(Op::Sigmoid(a), v, "sigmoid")
    }

    pub fn tanh(&mut self, a: NodeId) -> Result<NodeId, GraphError> {
        self.check(&[a])?;
        let v = self.val(a).map(f64::tanh);
        self.push(Op::Tanh(a), v, "tanh")
    }

    pub fn relu(&mut self, a: NodeId) -> Result<NodeId, GraphError> {
        self.check(&[a])?;
        let v = self.val(a).map(|x| x.max(0.0));
        self.push(Op::Relu(a), v, "relu")
    }

    fn rowwise(&self, a: NodeId, f: fn(&[f64], &mut [f64])) -> Result<Tensor, GraphError> {
        let x = self.val(a);
        let (n, m) = x.dims2()?;
        let mut out = vec![0.0; n * m];
        for r in 0..n {
            f(&x.data()[r * m..(r + 1) * m], &mut out[r * m..(r + 1) * m]);
        }
        Ok(Tensor::new(vec![n, m], out)?)
    }

    /// Row-wise softmax.
    pub fn softmax(&mut self, a: NodeId) -> Result<NodeId, GraphError> {
        self.check(&[a])?;
        let v = self.rowwise(a, softmax_row)?;
        self.push(Op::Softmax(a), v, "softmax")
    }

    pub fn log_softmax(&mut self, a: NodeId) -> Result<NodeId, GraphError> {
        self.check(&[a])?;
        let v = self.rowwise(a, log_softmax_row)?;
        self.push(Op::LogSoftmax(a), v, "log_softmax")
    }

    /// Column-wise concatenation of matrices with equal row counts.
    pub fn concat(&mut self, parts: &[NodeId]) -> Result<NodeId, GraphError> {
        self.check(parts)?;
        if parts.is_empty() {
            return Err(GraphError::Invalid("concat of nothing".into()));
        }
        let rows = self.val(parts[0]).dims2()?.0;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = self.val(p).dims2()?;
            if r != rows {
                return Err(TensorError::Incompatible {
                    op: "concat",
                    left: self.val(parts[0]).shape().to_vec(),
                    right: self.val(p).shape().to_vec(),
                }
                .into());
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.val(p).row_slice(r));
            }
        }
        let v = Tensor::new(vec![rows, total], data)?;
        self.push(Op::Concat(parts.to_vec()), v, "concat")
    }

    /// Columns `start..end`.
    pub fn slice_cols(
        &mut self,
        a: NodeId,
        start: usize,
        end: usize,
    ) -> Result<NodeId, GraphError> {
        self.check(&[a])?;
        let x = self.val(a);
        let (n, m) = x.dims2()?;
        if start >= end || end > m {
            return Err(GraphError::Invalid(format!(
                "slice {start}..{end} out of range for width {m}"
            )));
        }
        let mut data = Vec::with_capacity(n * (end - start));
        for r in 0..n {
            data.extend_from_slice(&x.row_slice(r)[start..end]);
        }
        let v = Tensor::new(vec![n, end - start], data)?;
        self.push(Op::SliceCols(a, start, end), v, "slice_cols")
    }

    /// Inverted dropout: zeroes entries with probability `drop_prob` and
    /// scales survivors by `1 / (1 - drop_prob)`. Identity in eval mode.
    pub fn dropout<R: Rng + ?Sized>(
        &mut self,
        a: NodeId,
        drop_prob: f64,
        rng: &mut R,
    ) -> Result<NodeId, GraphError> {
        self.check(&[a])?;
        if !(0.0..1.0).contains(&drop_prob) {
            return Err(GraphError::Invalid(format!(
                "dropout probability {drop_prob} not in [0, 1)"
            )));
        }
        if !self.train || drop_prob == 0.0 {
            return Ok(a);
        }
        let keep = 1.0 - drop_prob;
        let x = self.val(a);
        let mask: Vec<f64> = (0..x.len())
            .map(|_| {
                if rng.gen::<f64>() < keep {
                    1.0 / keep
                } else {
                    0.0
                }
            })
            .collect();
        let data = x.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
        let v = Tensor::new(x.shape().to_vec(), data)?;
        self.push(Op::Dropout(a, mask), v, "dropout")
    }

    /// Gathers rows `ids` of `table[V, d]` into an `[ids.len(), d]` matrix.
    pub fn embedding(&mut self, table: NodeId, ids: &[usize]) -> Result<NodeId, GraphError> {
        self.check(&[table])?;
        let t = self.val(table);
        let (v, d) = t.dims2()?;
        if ids.is_empty() {
            return Err(GraphError::Invalid("embedding lookup of no ids".into()));
        }
        let mut data = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= v {
                return Err(GraphError::Invalid(format!(
                    "embedding id {id} out of range for {v} rows"
                )));
            }
            data.extend_from_slice(t.row_slice(id));
        }
        let out = Tensor::new(vec![ids.len(), d], data)?;
        self.push(Op::Embedding(table, ids.to_vec()), out, "embedding")
    }

    /// Summed negative log-likelihood of `targets` under row-wise softmax of
    /// `logits`; rows whose target is `None` are skipped. Returns a scalar.
    pub fn cross_entropy(
        &mut self,
        logits: NodeId,
        targets: &[Option<usize>],
    ) -> Result<NodeId, GraphError> {
        self.check(&[logits])?;
        let x = self.val(logits);
        let (n, m) = x.dims2()?;
        if targets.len() != n {
            return Err(GraphError::Invalid(format!(
                "cross_entropy: {} targets for {} rows",
                targets.len(),
                n
            )));
        }
        let mut probs = vec![0.0; n * m];
        let mut logp = vec![0.0; m];
        let mut loss = 0.0;
        for (r, t) in targets.iter().enumerate() {
            let row = x.row_slice(r);
            softmax_row(row, &mut probs[r * m..(r + 1) * m]);
            if let Some(t) = *t {
                if t >= m {
                    return Err(GraphError::Invalid(format!(
                        "target {t} out of range for {m} classes"
                    )));
                }
                log_softmax_row(row, &mut logp);
                loss -= logp[t];
            }
        }
        self.push(
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
            },
            Tensor::scalar(loss),
            "cross_entropy",
        )
    }

    pub fn sum(&mut self, a: NodeId) -> Result<NodeId, GraphError> {
        self.check(&[a])?;
        let v = Tensor::scalar(self.val(a).sum());
        self.push(Op::Sum(a), v, "sum")
    }

    /// Gradients of the scalar `loss` with respect to every parameter used.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients, GraphError> {
        self.check(&[loss])?;
        let lv = self.val(loss);
        if !lv.is_scalar() {
            return Err(GraphError::NotScalar(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::full(lv.shape(), 1.0));

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let g = match (&node.op, grads[i].take()) {
                (Op::Param(_), g) => {
                    grads[i] = g;
                    continue;
                }
                (_, None) => continue,
                (_, Some(g)) => g,
            };
            self.backprop(&node.op, &node.value, &g, &mut grads);
        }

        let mut by_param = vec![None; self.params.len()];
        for (p, n) in self.param_nodes.iter().enumerate() {
            if let Some(n) = n {
                if n.0 <= loss.0 {
                    by_param[p] = grads[n.0].take();
                }
            }
        }
        Ok(Gradients { by_param })
    }

    fn slot<'g>(&self, grads: &'g mut [Option<Tensor>], id: NodeId) -> Option<&'g mut Tensor> {
        if !self.nodes[id.0].requires_grad {
            return None;
        }
        let shape = self.val(id).shape().to_vec();
        Some(grads[id.0].get_or_insert_with(|| Tensor::zeros(&shape)))
    }

    fn backprop(&self, op: &Op, out: &Tensor, g: &Tensor, grads: &mut [Option<Tensor>]) {
        match op {
            Op::Input | Op::Param(_) => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.val(*a), self.val(*b));
                let (m, k) = av.dims2().expect("rank 2");
                let n = bv.cols();
                if let Some(ga) = self.slot(grads, *a) {
                    matmul_nt_into(g.data(), bv.data(), ga.data_mut(), m, n, k);
                }
                if let Some(gb) = self.slot(grads, *b) {
                    matmul_tn_into(av.data(), g.data(), gb.data_mut(), m, k, n);
                }
            }
            Op::Add(a, b) => {
                if let Some(ga) = self.slot(grads, *a) {
                    ga.add_assign(g);
                }
                if let Some(gb) = self.slot(grads, *b) {
                    gb.add_assign(g);
                }
            }
            Op::Sub(a, b) => {
                if let Some(ga) = self.slot(grads, *a) {
                    ga.add_assign(g);
                }
                if let Some(gb) = self.slot(grads, *b) {
                    for (o, v) in gb.data_mut().iter_mut().zip(g.data()) {
                        *o -= v;
                    }
                }
            }
            Op::Mul(a, b) => {
                let bv = self.val(*b).data();
                if let Some(ga) = self.slot(grads, *a) {
                    for ((o, gv), y) in ga.data_mut().iter_mut().zip(g.data()).zip(bv) {
                        *o += gv * y;
                    }
                }
                let av = self.val(*a).data();
                if let Some(gb) = self.slot(grads, *b) {
                    for ((o, gv), x) in gb.data_mut().iter_mut().zip(g.data()).zip(av) {
                        *o += gv * x;
                    }
                }
            }
            Op::AddRow(a, bias) => {
                if let Some(ga) = self.slot(grads, *a) {
                    ga.add_assign(g);
                }
                let m = g.cols();
                if let Some(gb) = self.slot(grads, *bias) {
                    for r in 0..g.rows() {
                        for (o, v) in gb.data_mut().iter_mut().zip(g.row_slice(r)) {
                            *o += v;
                        }
                    }
                    debug_assert_eq!(gb.len(), m);
                }
            }
            Op::MulCol(a, col) => {
                let (av, cv) = (self.val(*a), self.val(*col));
                let m = av.cols();
                if let Some(ga) = self.slot(grads, *a) {
                    for r in 0..av.rows() {
                        let s = cv.data()[r];
                        for (o, gv) in ga.data_mut()[r * m..(r + 1) * m]
                            .iter_mut()
                            .zip(g.row_slice(r))
                        {
                            *o += gv * s;
                        }
                    }
                }
                if let Some(gc) = self.slot(grads, *col) {
                    for r in 0..av.rows() {
                        let dot: f64 = g
                            .row_slice(r)
                            .iter()
                            .zip(av.row_slice(r))
                            .map(|(x, y)| x * y)
                            .sum();
                        gc.data_mut()[r] += dot;
                    }
                }
            }
            Op::Scale(a, f) => {
                if let Some(ga) = self.slot(grads, *a) {
                    for (o, v) in ga.data_mut().iter_mut().zip(g.data()) {
                        *o += f * v;
                    }
                }
            }
            Op::Sigmoid(a) => self.unary(grads, *a, g, out, |y, _| y * (1.0 - y)),
            Op::Tanh(a) => self.unary(grads, *a, g, out, |y, _| 1.0 - y * y),
            Op::Relu(a) => self.unary(grads, *a, g, out, |_, x| if x > 0.0 { 1.0 } else { 0.0 }),
            Op::Softmax(a) => {
                let m = out.cols();
                if let Some(ga) = self.slot(grads, *a) {
                    for r in 0..out.rows() {
                        let y = out.row_slice(r);
                        let gr = g.row_slice(r);
                        let dot: f64 = y.iter().zip(gr).map(|(p, q)| p * q).sum();
                        for (j, o) in ga.data_mut()[r * m..(r + 1) * m].iter_mut().enumerate() {
                            *o += y[j] * (gr[j] - dot);
                        }
                    }
                }
            }
            Op::LogSoftmax(a) => {
                let m = out.cols();
                if let Some(ga) = self.slot(grads, *a) {
                    for r in 0..out.rows() {
                        let y = out.row_slice(r);
                        let gr = g.row_slice(r);
                        let total: f64 = gr.iter().sum();
                        for (j, o) in ga.data_mut()[r * m..(r + 1) * m].iter_mut().enumerate() {
                            *o += gr[j] - y[j].exp() * total;
                        }
                    }
                }
            }
            Op::Concat(parts) => {
                let total = out.cols();
                let mut offset = 0;
                for p in parts {
                    let w = self.val(*p).cols();
                    if let Some(gp) = self.slot(grads, *p) {
                        for r in 0..out.rows() {
                            let src = &g.data()[r * total + offset..r * total + offset + w];
                            for (o, v) in gp.data_mut()[r * w..(r + 1) * w].iter_mut().zip(src) {
                                *o += v;
                            }
                        }
                    }
                    offset += w;
                }
            }
            Op::SliceCols(a, start, end) => {
                let m = self.val(*a).cols();
                let w = end - start;
                if let Some(ga) = self.slot(grads, *a) {
                    for r in 0..out.rows() {
                        let dst = &mut ga.data_mut()[r * m + start..r * m + end];
                        for (o, v) in dst.iter_mut().zip(&g.data()[r * w..(r + 1) * w]) {
                            *o += v;
                        }
                    }
                }
            }
            Op::Dropout(a, mask) => {
                if let Some(ga) = self.slot(grads, *a) {
                    for ((o, v), k) in ga.data_mut().iter_mut().zip(g.data()).zip(mask) {
                        *o += v * k;
                    }
                }
            }
            Op::Embedding(table, ids) => {
                let d = out.cols();
                if let Some(gt) = self.slot(grads, *table) {
                    for (r, &id) in ids.iter().enumerate() {
                        let dst = &mut gt.data_mut()[id * d..(id + 1) * d];
                        for (o, v) in dst.iter_mut().zip(g.row_slice(r)) {
                            *o += v;
                        }
                    }
                }
            }
            Op::CrossEntropy {
                logits,
                targets,
                probs,
            } => {
                let scale = g.data()[0];
                let m = self.val(*logits).cols();
                if let Some(gl) = self.slot(grads, *logits) {
                    for (r, t) in targets.iter().enumerate() {
                        if let Some(t) = *t {
                            let dst = &mut gl.data_mut()[r * m..(r + 1) * m];
                            for (j, o) in dst.iter_mut().enumerate() {
                                let onehot = if j == t { 1.0 } else { 0.0 };
                                *o += scale * (probs[r * m + j] - onehot);
                            }
                        }
                    }
                }
            }
            Op::Sum(a) => {
                let s = g.data()[0];
                if let Some(ga) = self.slot(grads, *a) {
                    ga.data_mut().iter_mut().for_each(|o| *o += s);
                }
            }
        }
    }

    /// Elementwise op whose local derivative depends on output `y` and input `x`.
    fn unary(
        &self,
        grads: &mut [Option<Tensor>],
        a: NodeId,
        g: &Tensor,
        out: &Tensor,
        deriv: impl Fn(f64, f64) -> f64,
    ) {
        let x = self.val(a).data();
        if let Some(ga) = self.slot(grads, a) {
            for (((o, gv), &y), &xv) in ga
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(out.data())
                .zip(x)
            {
                *o += gv * deriv(y, xv);
            }
        }
    }
}

/// Largest relative error between analytic and central-difference gradients
/// over every parameter entry:
/// `|analytic - numeric| / max(|analytic|, |numeric|, 1e-8)`.
///
/// `build` must construct the same loss on every call; any randomness inside
/// it (dropout) has to be reseeded per call.
pub fn grad_check<F>(store: &ParamStore, eps: f64, build: F) -> Result<f64, GraphError>
where
    F: Fn(&mut Graph<'_>) -> Result<NodeId, GraphError>,
{
    if !(eps > 0.0 && eps <= 1e-2) {
        return Err(GraphError::Invalid(format!("eps {eps} not in (0, 1e-2]")));
    }
    let analytic = {
        let mut g = Graph::new(store);
        let loss = build(&mut g)?;
        g.backward(loss)?
    };
    let eval = |s: &ParamStore| -> Result<f64, GraphError> {
        let mut g = Graph::new(s);
        let loss = build(&mut g)?;
        Ok(g.value(loss)?.data()[0])
    };

    let mut work = store.clone();
    let mut worst: f64 = 0.0;
    for p in 0..store.len() {
        let id = ParamId(p);
        for i in 0..store.get(id).value.len() {
            let orig = store.get(id).value.data()[i];
            let mut at = |d: f64| -> Result<f64, GraphError> {
                work.get_mut(id).value.data_mut()[i] = orig + d;
                eval(&work)
            };
            // Five-point central stencil: truncation error O(eps^4).
            let (p1, m1) = (at(eps)?, at(-eps)?);
            let (p2, m2) = (at(2.0 * eps)?, at(-2.0 * eps)?);
            work.get_mut(id).value.data_mut()[i] = orig;
            let numeric = (8.0 * (p1 - m1) - (p2 - m2)) / (12.0 * eps);
            let a = analytic.get(id).map(|t| t.data()[i]).unwrap_or(0.0);
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
            worst = worst.max(err);
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_graph_returns_input() {
        let store = ParamStore::new();
        let mut g = Graph::new(&store);
        let x = g.input(Tensor::row(&[1.0, 2.0, 3.0]));
        assert_eq!(g.value(x).unwrap().data(), &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn softmax_of_zeros_is_uniform() {
        let store = ParamStore::new();
        let mut g = Graph::new(&store);
        let x = g.input(Tensor::row(&[0.0, 0.0, 0.0]));
        let y = g.softmax(x).unwrap();
        for v in g.value(y).unwrap().data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn product_rule() {
        let mut store = ParamStore::new();
        let x = store.add("x", Tensor::scalar(2.0)).unwrap();
        let y = store.add("y", Tensor::scalar(3.0)).unwrap();
        let mut g = Graph::new(&store);
        let (xn, yn) = (g.param(x).unwrap(), g.param(y).unwrap());
        let loss = g.mul(xn, yn).unwrap();
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[3.0]);
        assert_eq!(grads.get(y).unwrap().data(), &[2.0]);
    }

    #[test]
    fn quadratic() {
        let mut store = ParamStore::new();
        let x = store.add("x", Tensor::row(&[1.0, -2.0])).unwrap();
        let mut g = Graph::new(&store);
        let xn = g.param(x).unwrap();
        let sq = g.mul(xn, xn).unwrap();
        let loss = g.sum(sq).unwrap();
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[2.0, -4.0]);
    }

    #[test]
    fn gradients_accumulate_until_zeroed() {
        let mut store = ParamStore::new();
        let x = store.add("x", Tensor::scalar(1.5)).unwrap();
        for _ in 0..2 {
            let grads = {
                let mut g = Graph::new(&store);
                let xn = g.param(x).unwrap();
                let l = g.scale(xn, 2.0).unwrap();
                g.backward(l).unwrap()
            };
            store.accumulate(&grads);
        }
        assert_eq!(store.get(x).grad.data(), &[4.0]);
        store.zero_grad();
        assert_eq!(store.get(x).grad.data(), &[0.0]);
    }

    #[test]
    fn backward_rejects_non_scalar_and_foreign_nodes() {
        let store = ParamStore::new();
        let mut g = Graph::new(&store);
        let x = g.input(Tensor::row(&[1.0, 2.0]));
        assert!(matches!(g.backward(x), Err(GraphError::NotScalar(_))));
        assert!(matches!(
            g.backward(NodeId(99)),
            Err(GraphError::UnknownNode(99))
        ));
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let store = ParamStore::new();
        let mut g = Graph::new(&store);
        let a = g.input(Tensor::row(&[1.0, 2.0]));
        let b = g.input(Tensor::row(&[1.0, 2.0, 3.0]));
        assert!(matches!(g.add(a, b), Err(GraphError::Shape(_))));
        assert!(matches!(g.matmul(a, b), Err(GraphError::Shape(_))));
    }

    #[test]
    fn non_finite_output_is_divergence() {
        let store = ParamStore::new();
        let mut g = Graph::new(&store);
        let a = g.input(Tensor::row(&[1e300]));
        assert!(matches!(
            g.mul(a, a),
            Err(GraphError::NonFinite { op: "mul" })
        ));
    }

    #[test]
    fn cross_entropy_of_confident_correct_prediction_is_near_zero() {
        let store = ParamStore::new();
        let mut g = Graph::new(&store);
        let logits = g.input(Tensor::row(&[50.0, 0.0, 0.0]));
        let l = g.cross_entropy(logits, &[Some(0)]).unwrap();
        assert!(g.value(l).unwrap().data()[0] < 1e-20);
    }

    #[test]
    fn eval_dropout_is_identity() {
        let store = ParamStore::new();
        let mut g = Graph::new(&store);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = g.input(Tensor::row(&[1.0, 2.0, 3.0]));
        let y = g.dropout(x, 0.5, &mut rng).unwrap();
        assert_eq!(x, y);
    }

    #[test]
    fn dropout_zero_fraction_matches_drop_probability() {
        let store = ParamStore::new();
        let mut g = Graph::training(&store);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 100_000;
        let x = g.input(Tensor::full(&[1, n], 1.0));
        let y = g.dropout(x, 0.3, &mut rng).unwrap();
        let v = g.value(y).unwrap();
        let zeros = v.data().iter().filter(|&&e| e == 0.0).count() as f64;
        let sigma = (n as f64 * 0.3 * 0.7).sqrt();
        assert!((zeros - 0.3 * n as f64).abs() < 3.0 * sigma);
        // Survivors are scaled by 1 / keep.
        assert!(v
            .data()
            .iter()
            .all(|&e| e == 0.0 || (e - 1.0 / 0.7).abs() < 1e-12));
    }

    #[test]
    fn linear_graph_is_exact_under_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParamStore::new();
        let w = store.add_uniform("w", &[3, 2], 1.0, &mut rng).unwrap();
        let x = Tensor::uniform(&[4, 3], 1.0, &mut rng);
        let err = grad_check(&store, 1e-4, |g| {
            let xn = g.input(x.clone());
            let wn = g.param(w)?;
            let y = g.matmul(xn, wn)?;
            g.sum(y)
        })
        .unwrap();
        assert!(err < 1e-9, "{err}");
    }

    #[test]
    fn grad_check_rejects_bad_eps() {
        let store = ParamStore::new();
        for eps in [0.0, -1e-4, 0.1] {
            let r = grad_check(&store, eps, |g| Ok(g.input(Tensor::scalar(0.0))));
            assert!(r.is_err(), "{eps}");
        }
    }

    /// Every primitive, composed into one loss, at several seeds.
    #[test]
    fn primitive_ops_pass_grad_check() {
        for seed in 0..10 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut store = ParamStore::new();
            let table = store.add_uniform("table", &[5, 3], 1.0, &mut rng).unwrap();
            let w = store.add_uniform("w", &[3, 4], 1.0, &mut rng).unwrap();
            let b = store.add_uniform("b", &[1, 4], 1.0, &mut rng).unwrap();
            let c = store.add_uniform("c", &[3, 1], 1.0, &mut rng).unwrap();
            let err = grad_check(&store, 1e-5, |g| {
                let e = g.param(table)?;
                let x = g.embedding(e, &[0, 3, 3])?;
                let wn = g.param(w)?;
                let bn = g.param(b)?;
                let h = g.matmul(x, wn)?;
                let h = g.add_row(h, bn)?;
                let s = g.sigmoid(h)?;
                let t = g.tanh(h)?;
                let r = g.relu(h)?;
                let m = g.mul(s, t)?;
                let m = g.sub(m, r)?;
                let left = g.slice_cols(m, 0, 2)?;
                let right = g.slice_cols(m, 2, 4)?;
                let cat = g.concat(&[right, left, t])?;
                let cn = g.param(c)?;
                let cat = g.mul_col(cat, cn)?;
                let sm = g.softmax(cat)?;
                let ls = g.log_softmax(cat)?;
                let mix = g.add(sm, ls)?;
                let mix = g.scale(mix, 0.7)?;
                g.cross_entropy(mix, &[Some(1), None, Some(5)])
            })
            .unwrap();
            assert!(err < 1e-4, "seed {seed}: {err}");
        }
    }

    #[test]
    fn train_mode_dropout_passes_grad_check_with_fixed_mask() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut store = ParamStore::new();
        let w = store.add_uniform("w", &[4, 4], 1.0, &mut rng).unwrap();
        let x = Tensor::uniform(&[3, 4], 1.0, &mut rng);
        let err = grad_check(&store, 1e-5, |g| {
            let mut rng = ChaCha8Rng::seed_from_u64(17);
            let xn = g.input(x.clone());
            let wn = g.param(w)?;
            let h = g.matmul(xn, wn)?;
            let h = g.tanh(h)?;
            // grad_check evaluates in eval mode; force the mask path.
            let d = dropout_forced(g, h, &mut rng)?;
            let sq = g.mul(d, d)?;
            g.sum(sq)
        })
        .unwrap();
        assert!(err < 1e-4, "{err}");
    }

    fn dropout_forced(
        g: &mut Graph<'_>,
        x: NodeId,
        rng: &mut ChaCha8Rng,
    ) -> Result<NodeId, GraphError> {
        let was = g.train;
        g.train = true;
        let y = g.dropout(x, 0.5, rng);
        g.train = was;
        y
    }
}
