//! Define-by-run computation graph with reverse-mode differentiation.
//!
//! A [`Graph`] is built once per batch: nodes are recorded through the
//! builder methods, then [`Graph::forward`] binds the named inputs and
//! evaluates every node in insertion order (which is a topological order,
//! since a node can only reference earlier nodes). [`Graph::backward`]
//! seeds a scalar loss and accumulates gradients in reverse order.
//!
//! Binary elementwise ops (`add`, `sub`, `mul`) broadcast: each operand
//! dimension must either match the other operand or be 1.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::sync::Arc;

use super::tensor::{gemm, Tensor2};
use super::NnError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Reductions supported by [`Op::Reduce`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Reduction {
    /// Sum of every entry, 1×1.
    Sum,
    /// Mean of every entry, 1×1.
    Mean,
    /// Sum along each row, r×1.
    RowSums,
    /// Sum along each column, 1×c.
    ColSums,
}

/// Non-differentiable computation embedded in a graph.
///
/// Used for discrete steps (quantizer assignment) whose outputs feed the
/// differentiable part of the graph as constants. No gradient flows back
/// through a custom op.
pub trait CustomOp: Send + Sync + fmt::Debug {
    fn name(&self) -> &str;
    fn forward(&self, inputs: &[&Tensor2]) -> Result<Tensor2, String>;
}

#[derive(Clone, Debug)]
pub enum Op {
    MatMul,
    Add,
    Sub,
    Mul,
    Scale(f32),
    Relu,
    Tanh,
    Sigmoid,
    Softplus,
    SoftmaxRows,
    LogSoftmaxRows,
    /// Each row divided by `sqrt(‖row‖² + eps)`. With `eps = 0` a zero row
    /// is an error.
    NormalizeRows { eps: f32 },
    /// Column-wise concatenation.
    Concat,
    /// Columns `start..end`.
    Slice { start: usize, end: usize },
    Reduce(Reduction),
    Reshape { rows: usize, cols: usize },
    /// Row gather (embedding lookup); backward scatter-adds.
    GatherRows(Arc<[usize]>),
    StopGradient,
    Custom(Arc<dyn CustomOp>),
}

impl Op {
    pub fn kind(&self) -> &str {
        match self {
            Op::MatMul => "matmul",
            Op::Add => "add",
            Op::Sub => "sub",
            Op::Mul => "mul",
            Op::Scale(_) => "scale",
            Op::Relu => "relu",
            Op::Tanh => "tanh",
            Op::Sigmoid => "sigmoid",
            Op::Softplus => "softplus",
            Op::SoftmaxRows => "softmax-rows",
            Op::LogSoftmaxRows => "log-softmax-rows",
            Op::NormalizeRows { .. } => "normalize-rows",
            Op::Concat => "concat",
            Op::Slice { .. } => "slice",
            Op::Reduce(_) => "reduce",
            Op::Reshape { .. } => "reshape",
            Op::GatherRows(_) => "gather-rows",
            Op::StopGradient => "stop-gradient",
            Op::Custom(c) => c.name(),
        }
    }
}

#[derive(Clone, Debug)]
enum Source {
    Input(String),
    Param(String),
    Const,
    Op(Op),
}

#[derive(Clone, Debug)]
struct Node {
    source: Source,
    inputs: Vec<NodeId>,
    label: Option<String>,
    value: Option<Tensor2>,
    requires_grad: bool,
}

/// Gradients keyed by parameter name.
pub type Gradients = BTreeMap<String, Tensor2>;

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: BTreeMap<String, NodeId>,
    outputs: Vec<(String, NodeId)>,
    evaluated: bool,
    grads: Vec<Option<Tensor2>>,
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

    fn push(&mut self, source: Source, inputs: Vec<NodeId>, value: Option<Tensor2>) -> NodeId {
        let requires_grad = match &source {
            Source::Param(_) => true,
            Source::Input(_) | Source::Const => false,
            Source::Op(Op::StopGradient) | Source::Op(Op::Custom(_)) => false,
            Source::Op(_) => inputs.iter().any(|i| self.nodes[i.0].requires_grad),
        };
        self.nodes.push(Node {
            source,
            inputs,
            label: None,
            value,
            requires_grad,
        });
        self.evaluated = false;
        NodeId(self.nodes.len() - 1)
    }

    /// Placeholder bound by name at [`Graph::forward`].
    pub fn input(&mut self, name: &str) -> NodeId {
        self.push(Source::Input(name.to_string()), Vec::new(), None)
    }

    /// Trainable parameter. Registering the same name twice returns the
    /// existing node.
    pub fn param(&mut self, name: &str, value: &Tensor2) -> NodeId {
        if let Some(&id) = self.params.get(name) {
            return id;
        }
        let id = self.push(Source::Param(name.to_string()), Vec::new(), Some(value.clone()));
        self.params.insert(name.to_string(), id);
        id
    }

    pub fn constant(&mut self, value: Tensor2) -> NodeId {
        self.push(Source::Const, Vec::new(), Some(value))
    }

    /// Attaches a human-readable name used in error messages.
    pub fn label(&mut self, id: NodeId, label: &str) -> NodeId {
        self.nodes[id.0].label = Some(label.to_string());
        id
    }

    /// Registers `id` as a named output of [`Graph::forward`].
    pub fn output(&mut self, name: &str, id: NodeId) {
        self.outputs.push((name.to_string(), id));
    }

    pub fn apply(&mut self, op: Op, inputs: &[NodeId]) -> NodeId {
        self.push(Source::Op(op), inputs.to_vec(), None)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.apply(Op::MatMul, &[a, b])
    }
    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.apply(Op::Add, &[a, b])
    }
    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.apply(Op::Sub, &[a, b])
    }
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.apply(Op::Mul, &[a, b])
    }
    pub fn scale(&mut self, a: NodeId, s: f32) -> NodeId {
        self.apply(Op::Scale(s), &[a])
    }
    pub fn relu(&mut self, a: NodeId) -> NodeId {
        self.apply(Op::Relu, &[a])
    }
    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        self.apply(Op::Tanh, &[a])
    }
    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        self.apply(Op::Sigmoid, &[a])
    }
    pub fn softplus(&mut self, a: NodeId) -> NodeId {
        self.apply(Op::Softplus, &[a])
    }
    pub fn softmax_rows(&mut self, a: NodeId) -> NodeId {
        self.apply(Op::SoftmaxRows, &[a])
    }
    pub fn log_softmax_rows(&mut self, a: NodeId) -> NodeId {
        self.apply(Op::LogSoftmaxRows, &[a])
    }
    pub fn normalize_rows(&mut self, a: NodeId) -> NodeId {
        self.apply(Op::NormalizeRows { eps: 0.0 }, &[a])
    }
    pub fn normalize_rows_eps(&mut self, a: NodeId, eps: f32) -> NodeId {
        self.apply(Op::NormalizeRows { eps }, &[a])
    }
    pub fn concat(&mut self, parts: &[NodeId]) -> NodeId {
        self.apply(Op::Concat, parts)
    }
    pub fn slice(&mut self, a: NodeId, start: usize, end: usize) -> NodeId {
        self.apply(Op::Slice { start, end }, &[a])
    }
    pub fn reduce(&mut self, a: NodeId, r: Reduction) -> NodeId {
        self.apply(Op::Reduce(r), &[a])
    }
    pub fn sum(&mut self, a: NodeId) -> NodeId {
        self.reduce(a, Reduction::Sum)
    }
    pub fn mean(&mut self, a: NodeId) -> NodeId {
        self.reduce(a, Reduction::Mean)
    }
    pub fn reshape(&mut self, a: NodeId, rows: usize, cols: usize) -> NodeId {
        self.apply(Op::Reshape { rows, cols }, &[a])
    }
    pub fn gather_rows(&mut self, table: NodeId, indices: Vec<usize>) -> NodeId {
        self.apply(Op::GatherRows(indices.into()), &[table])
    }
    pub fn stop_gradient(&mut self, a: NodeId) -> NodeId {
        self.apply(Op::StopGradient, &[a])
    }
    pub fn custom(&mut self, op: Arc<dyn CustomOp>, inputs: &[NodeId]) -> NodeId {
        self.apply(Op::Custom(op), inputs)
    }

    /// `x · w + b` with `b` broadcast over rows.
    pub fn linear(&mut self, x: NodeId, w: NodeId, b: NodeId) -> NodeId {
        let xw = self.matmul(x, w);
        self.add(xw, b)
    }

    /// Straight-through surrogate `h - stop_gradient(h - q)`: evaluates to
    /// `q`, differentiates as the identity in `h`.
    pub fn straight_through(&mut self, h: NodeId, q: NodeId) -> NodeId {
        let diff = self.sub(h, q);
        let frozen = self.stop_gradient(diff);
        self.sub(h, frozen)
    }

    fn node_name(&self, id: NodeId) -> String {
        let node = &self.nodes[id.0];
        if let Some(l) = &node.label {
            return l.clone();
        }
        match &node.source {
            Source::Input(n) => format!("input '{n}'"),
            Source::Param(n) => format!("param '{n}'"),
            Source::Const => format!("const#{}", id.0),
            Source::Op(op) => format!("{}#{}", op.kind(), id.0),
        }
    }

    /// Binds `inputs` by name and evaluates every node.
    pub fn forward(
        &mut self,
        mut inputs: HashMap<String, Tensor2>,
    ) -> Result<HashMap<String, Tensor2>, NnError> {
        self.evaluated = false;
        self.grads.clear();
        for i in 0..self.nodes.len() {
            let id = NodeId(i);
            let source = self.nodes[i].source.clone();
            let value = match &source {
                Source::Input(name) => match inputs.remove(name) {
                    Some(v) => v,
                    None => {
                        // Re-running forward on a graph keeps earlier bindings.
                        match self.nodes[i].value.take() {
                            Some(v) => v,
                            None => return Err(NnError::MissingInput(name.clone())),
                        }
                    }
                },
                Source::Param(_) | Source::Const => continue,
                Source::Op(op) => {
                    let args: Vec<&Tensor2> = self.nodes[i]
                        .inputs
                        .iter()
                        .map(|j| self.nodes[j.0].value.as_ref().expect("inputs evaluated"))
                        .collect();
                    eval_op(op, &args).map_err(|detail| NnError::ShapeMismatch {
                        node: self.node_name(id),
                        detail,
                    })?
                }
            };
            if let Some(row) = value.first_non_finite_row() {
                return Err(NnError::NonFinite {
                    node: self.node_name(id),
                    row,
                });
            }
            self.nodes[i].value = Some(value);
        }
        self.evaluated = true;
        Ok(self
            .outputs
            .iter()
            .map(|(name, id)| (name.clone(), self.nodes[id.0].value.clone().expect("evaluated")))
            .collect())
    }

    /// Forward value of a node, once evaluated.
    pub fn value(&self, id: NodeId) -> Option<&Tensor2> {
        self.nodes[id.0].value.as_ref()
    }

    /// Gradient of the last backward loss with respect to any node.
    pub fn grad(&self, id: NodeId) -> Option<&Tensor2> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }

    /// Reverse pass from a 1×1 `loss`. Returns gradients for every
    /// registered parameter (zeros for those the loss does not reach).
    pub fn backward(&mut self, loss: NodeId) -> Result<Gradients, NnError> {
        if !self.evaluated {
            return Err(NnError::NotEvaluated);
        }
        let loss_shape = self.nodes[loss.0].value.as_ref().expect("evaluated").shape();
        if loss_shape != (1, 1) {
            return Err(NnError::NotScalar {
                rows: loss_shape.0,
                cols: loss_shape.1,
            });
        }
        let mut grads: Vec<Option<Tensor2>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor2::scalar(1.0));
        for i in (0..=loss.0).rev() {
            let Some(g_out) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if let Source::Op(op) = &node.source {
                if node.requires_grad {
                    let args: Vec<&Tensor2> = node
                        .inputs
                        .iter()
                        .map(|j| self.nodes[j.0].value.as_ref().expect("evaluated"))
                        .collect();
                    let out = node.value.as_ref().expect("evaluated");
                    let input_grads = grad_op(op, &args, out, &g_out);
                    for (j, g) in node.inputs.iter().zip(input_grads) {
                        let (Some(g), true) = (g, self.nodes[j.0].requires_grad) else {
                            continue;
                        };
                        match &mut grads[j.0] {
                            Some(acc) => acc.add_assign(&g),
                            slot => *slot = Some(g),
                        }
                    }
                }
            }
            grads[i] = Some(g_out);
        }
        let mut out = Gradients::new();
        for (name, id) in &self.params {
            let g = grads[id.0].clone().unwrap_or_else(|| {
                let v = self.nodes[id.0].value.as_ref().expect("param value");
                Tensor2::zeros(v.rows(), v.cols())
            });
            out.insert(name.clone(), g);
        }
        self.grads = grads;
        Ok(out)
    }
}

fn broadcast_shape(a: (usize, usize), b: (usize, usize)) -> Result<(usize, usize), String> {
    let dim = |x: usize, y: usize| {
        if x == y || y == 1 {
            Ok(x)
        } else if x == 1 {
            Ok(y)
        } else {
            Err(format!("cannot broadcast {}x{} with {}x{}", a.0, a.1, b.0, b.1))
        }
    };
    Ok((dim(a.0, b.0)?, dim(a.1, b.1)?))
}

fn broadcast_zip(a: &Tensor2, b: &Tensor2, f: impl Fn(f32, f32) -> f32) -> Result<Tensor2, String> {
    if a.shape() == b.shape() {
        return Ok(a.zip_map(b, f));
    }
    let (r, c) = broadcast_shape(a.shape(), b.shape())?;
    let mut out = Tensor2::zeros(r, c);
    let (ar, ac) = a.shape();
    let (br, bc) = b.shape();
    for i in 0..r {
        let arow = a.row(if ar == 1 { 0 } else { i });
        let brow = b.row(if br == 1 { 0 } else { i });
        let orow = out.row_mut(i);
        for j in 0..c {
            let x = arow[if ac == 1 { 0 } else { j }];
            let y = brow[if bc == 1 { 0 } else { j }];
            orow[j] = f(x, y);
        }
    }
    Ok(out)
}

/// Sums `g` down to `shape` over broadcast dimensions.
fn unbroadcast(g: Tensor2, shape: (usize, usize)) -> Tensor2 {
    if g.shape() == shape {
        return g;
    }
    let mut out = Tensor2::zeros(shape.0, shape.1);
    for i in 0..g.rows() {
        let oi = if shape.0 == 1 { 0 } else { i };
        for j in 0..g.cols() {
            let oj = if shape.1 == 1 { 0 } else { j };
            let v = out.get(oi, oj) + g.get(i, j);
            out.set(oi, oj, v);
        }
    }
    out
}

fn softplus(x: f32) -> f32 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f32) -> f32 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn row_norms_eps(a: &Tensor2, eps: f32) -> Vec<f32> {
    a.iter_rows()
        .map(|r| (r.iter().map(|v| v * v).sum::<f32>() + eps).sqrt())
        .collect()
}

fn eval_op(op: &Op, x: &[&Tensor2]) -> Result<Tensor2, String> {
    let arity = |n: usize| {
        if x.len() == n {
            Ok(())
        } else {
            Err(format!("expected {n} inputs, got {}", x.len()))
        }
    };
    match op {
        Op::MatMul => {
            arity(2)?;
            x[0].matmul(x[1]).map_err(|e| e.to_string())
        }
        Op::Add => {
            arity(2)?;
            broadcast_zip(x[0], x[1], |a, b| a + b)
        }
        Op::Sub => {
            arity(2)?;
            broadcast_zip(x[0], x[1], |a, b| a - b)
        }
        Op::Mul => {
            arity(2)?;
            broadcast_zip(x[0], x[1], |a, b| a * b)
        }
        Op::Scale(s) => {
            arity(1)?;
            Ok(x[0].scale(*s))
        }
        Op::Relu => {
            arity(1)?;
            Ok(x[0].map(|v| v.max(0.0)))
        }
        Op::Tanh => {
            arity(1)?;
            Ok(x[0].map(f32::tanh))
        }
        Op::Sigmoid => {
            arity(1)?;
            Ok(x[0].map(sigmoid))
        }
        Op::Softplus => {
            arity(1)?;
            Ok(x[0].map(softplus))
        }
        Op::SoftmaxRows | Op::LogSoftmaxRows => {
            arity(1)?;
            let log = matches!(op, Op::LogSoftmaxRows);
            let mut out = x[0].clone();
            for r in 0..out.rows() {
                let row = out.row_mut(r);
                let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
                let mut total = 0.0;
                for v in row.iter_mut() {
                    *v = (*v - max).exp();
                    total += *v;
                }
                if log {
                    let lse = total.ln();
                    for (v, src) in row.iter_mut().zip(x[0].row(r)) {
                        *v = src - max - lse;
                    }
                } else {
                    for v in row.iter_mut() {
                        *v /= total;
                    }
                }
            }
            Ok(out)
        }
        Op::NormalizeRows { eps } => {
            arity(1)?;
            let norms = row_norms_eps(x[0], *eps);
            let mut out = x[0].clone();
            for (r, n) in norms.iter().enumerate() {
                if *n == 0.0 {
                    return Err(format!("zero-norm row {r}"));
                }
                for v in out.row_mut(r) {
                    *v /= n;
                }
            }
            Ok(out)
        }
        Op::Concat => {
            if x.is_empty() {
                return Err("concat of nothing".into());
            }
            let rows = x[0].rows();
            if let Some(bad) = x.iter().find(|t| t.rows() != rows) {
                return Err(format!("concat rows {} vs {}", rows, bad.rows()));
            }
            let cols: usize = x.iter().map(|t| t.cols()).sum();
            let mut data = Vec::with_capacity(rows * cols);
            for r in 0..rows {
                for t in x {
                    data.extend_from_slice(t.row(r));
                }
            }
            Tensor2::new(rows, cols, data).map_err(|e| e.to_string())
        }
        Op::Slice { start, end } => {
            arity(1)?;
            if start > end || *end > x[0].cols() {
                return Err(format!("slice {start}..{end} of {} columns", x[0].cols()));
            }
            Ok(x[0].slice_cols(*start, *end))
        }
        Op::Reduce(r) => {
            arity(1)?;
            let t = x[0];
            Ok(match r {
                Reduction::Sum => Tensor2::scalar(t.sum()),
                Reduction::Mean => {
                    if t.is_empty() {
                        return Err("mean of empty tensor".into());
                    }
                    Tensor2::scalar(t.sum() / t.len() as f32)
                }
                Reduction::RowSums => {
                    let sums: Vec<f32> = t.iter_rows().map(|r| r.iter().sum()).collect();
                    Tensor2::column_vector(&sums)
                }
                Reduction::ColSums => {
                    let mut sums = vec![0.0; t.cols()];
                    for row in t.iter_rows() {
                        for (s, v) in sums.iter_mut().zip(row) {
                            *s += v;
                        }
                    }
                    Tensor2::row_vector(&sums)
                }
            })
        }
        Op::Reshape { rows, cols } => {
            arity(1)?;
            x[0].reshape(*rows, *cols).map_err(|e| e.to_string())
        }
        Op::GatherRows(idx) => {
            arity(1)?;
            if let Some(&bad) = idx.iter().find(|&&i| i >= x[0].rows()) {
                return Err(format!("gather index {bad} out of {} rows", x[0].rows()));
            }
            Ok(x[0].select_rows(idx))
        }
        Op::StopGradient => {
            arity(1)?;
            Ok(x[0].clone())
        }
        Op::Custom(c) => c.forward(x),
    }
}

/// Vector-Jacobian products of `op` for each input.
fn grad_op(op: &Op, x: &[&Tensor2], out: &Tensor2, g: &Tensor2) -> Vec<Option<Tensor2>> {
    match op {
        Op::MatMul => {
            let (a, b) = (x[0], x[1]);
            let mut ga = Tensor2::zeros(a.rows(), a.cols());
            gemm(g, false, b, true, 1.0, 0.0, &mut ga);
            let mut gb = Tensor2::zeros(b.rows(), b.cols());
            gemm(a, true, g, false, 1.0, 0.0, &mut gb);
            vec![Some(ga), Some(gb)]
        }
        Op::Add => vec![
            Some(unbroadcast(g.clone(), x[0].shape())),
            Some(unbroadcast(g.clone(), x[1].shape())),
        ],
        Op::Sub => vec![
            Some(unbroadcast(g.clone(), x[0].shape())),
            Some(unbroadcast(g.scale(-1.0), x[1].shape())),
        ],
        Op::Mul => {
            let ga = broadcast_zip(g, x[1], |gv, b| gv * b).expect("shapes checked in forward");
            let gb = broadcast_zip(g, x[0], |gv, a| gv * a).expect("shapes checked in forward");
            vec![
                Some(unbroadcast(ga, x[0].shape())),
                Some(unbroadcast(gb, x[1].shape())),
            ]
        }
        Op::Scale(s) => vec![Some(g.scale(*s))],
        Op::Relu => vec![Some(g.zip_map(x[0], |gv, v| if v > 0.0 { gv } else { 0.0 }))],
        Op::Tanh => vec![Some(g.zip_map(out, |gv, y| gv * (1.0 - y * y)))],
        Op::Sigmoid => vec![Some(g.zip_map(out, |gv, y| gv * y * (1.0 - y)))],
        Op::Softplus => vec![Some(g.zip_map(x[0], |gv, v| gv * sigmoid(v)))],
        Op::SoftmaxRows => {
            let mut gx = Tensor2::zeros(out.rows(), out.cols());
            for r in 0..out.rows() {
                let y = out.row(r);
                let gr = g.row(r);
                let dot: f32 = y.iter().zip(gr).map(|(a, b)| a * b).sum();
                for (o, (yv, gv)) in gx.row_mut(r).iter_mut().zip(y.iter().zip(gr)) {
                    *o = yv * (gv - dot);
                }
            }
            vec![Some(gx)]
        }
        Op::LogSoftmaxRows => {
            let mut gx = Tensor2::zeros(out.rows(), out.cols());
            for r in 0..out.rows() {
                let y = out.row(r);
                let gr = g.row(r);
                let total: f32 = gr.iter().sum();
                for (o, (yv, gv)) in gx.row_mut(r).iter_mut().zip(y.iter().zip(gr)) {
                    *o = gv - yv.exp() * total;
                }
            }
            vec![Some(gx)]
        }
        Op::NormalizeRows { eps } => {
            let norms = row_norms_eps(x[0], *eps);
            let mut gx = Tensor2::zeros(out.rows(), out.cols());
            for (r, n) in norms.iter().enumerate() {
                let y = out.row(r);
                let gr = g.row(r);
                let dot: f32 = y.iter().zip(gr).map(|(a, b)| a * b).sum();
                for (o, (yv, gv)) in gx.row_mut(r).iter_mut().zip(y.iter().zip(gr)) {
                    *o = (gv - yv * dot) / n;
                }
            }
            vec![Some(gx)]
        }
        Op::Concat => {
            let mut start = 0;
            x.iter()
                .map(|t| {
                    let part = g.slice_cols(start, start + t.cols());
                    start += t.cols();
                    Some(part)
                })
                .collect()
        }
        Op::Slice { start, end } => {
            let mut gx = Tensor2::zeros(x[0].rows(), x[0].cols());
            for r in 0..gx.rows() {
                gx.row_mut(r)[*start..*end].copy_from_slice(g.row(r));
            }
            vec![Some(gx)]
        }
        Op::Reduce(red) => {
            let (rows, cols) = x[0].shape();
            let gx = match red {
                Reduction::Sum => Tensor2::full(rows, cols, g.get(0, 0)),
                Reduction::Mean => Tensor2::full(rows, cols, g.get(0, 0) / (rows * cols) as f32),
                Reduction::RowSums => {
                    let mut t = Tensor2::zeros(rows, cols);
                    for r in 0..rows {
                        t.row_mut(r).fill(g.get(r, 0));
                    }
                    t
                }
                Reduction::ColSums => {
                    let mut t = Tensor2::zeros(rows, cols);
                    for r in 0..rows {
                        t.row_mut(r).copy_from_slice(g.row(0));
                    }
                    t
                }
            };
            vec![Some(gx)]
        }
        Op::Reshape { .. } => {
            let (rows, cols) = x[0].shape();
            vec![Some(g.reshape(rows, cols).expect("same element count"))]
        }
        Op::GatherRows(idx) => {
            let mut gx = Tensor2::zeros(x[0].rows(), x[0].cols());
            for (k, &i) in idx.iter().enumerate() {
                for (o, v) in gx.row_mut(i).iter_mut().zip(g.row(k)) {
                    *o += v;
                }
            }
            vec![Some(gx)]
        }
        Op::StopGradient | Op::Custom(_) => x.iter().map(|_| None).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(rows: usize, cols: usize, v: &[f32]) -> Tensor2 {
        Tensor2::new(rows, cols, v.to_vec()).unwrap()
    }

    fn bind(pairs: &[(&str, Tensor2)]) -> HashMap<String, Tensor2> {
        pairs.iter().map(|(k, v)| (k.to_string(), v.clone())).collect()
    }

    #[test]
    fn identity_matmul() {
        let mut g = Graph::new();
        let a = g.input("a");
        let b = g.input("b");
        let c = g.matmul(a, b);
        g.output("c", c);
        let out = g
            .forward(bind(&[("a", Tensor2::identity(2)), ("b", t(2, 2, &[1., 2., 3., 4.]))]))
            .unwrap();
        assert_eq!(out["c"].data(), &[1., 2., 3., 4.]);
    }

    #[test]
    fn softmax_of_zeros_is_uniform() {
        let mut g = Graph::new();
        let a = g.input("a");
        let s = g.softmax_rows(a);
        g.output("s", s);
        let out = g.forward(bind(&[("a", t(1, 2, &[0., 0.]))])).unwrap();
        assert_eq!(out["s"].data(), &[0.5, 0.5]);
    }

    #[test]
    fn relu_clamps_negatives() {
        let mut g = Graph::new();
        let a = g.input("a");
        let r = g.relu(a);
        g.output("r", r);
        let out = g.forward(bind(&[("a", t(1, 2, &[-1., 2.]))])).unwrap();
        assert_eq!(out["r"].data(), &[0., 2.]);
    }

    #[test]
    fn linear_map_gradient() {
        // loss = sum(x · W) with x = [1, 1]: every entry of W receives 1.
        let mut g = Graph::new();
        let x = g.constant(t(1, 2, &[1., 1.]));
        let w = g.param("w", &t(2, 2, &[0.3, -0.2, 0.5, 0.9]));
        let y = g.matmul(x, w);
        let loss = g.sum(y);
        g.forward(HashMap::new()).unwrap();
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads["w"].data(), &[1., 1., 1., 1.]);
    }

    #[test]
    fn zero_scaled_loss_has_zero_gradients() {
        let mut g = Graph::new();
        let w = g.param("w", &t(2, 2, &[0.3, -0.2, 0.5, 0.9]));
        let y = g.tanh(w);
        let s = g.sum(y);
        let loss = g.scale(s, 0.0);
        g.forward(HashMap::new()).unwrap();
        let grads = g.backward(loss).unwrap();
        assert!(grads["w"].data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn backward_requires_forward_and_scalar_loss() {
        let mut g = Graph::new();
        let w = g.param("w", &t(1, 2, &[1., 2.]));
        let s = g.sum(w);
        assert!(matches!(g.backward(s), Err(NnError::NotEvaluated)));
        g.forward(HashMap::new()).unwrap();
        assert!(matches!(g.backward(w), Err(NnError::NotScalar { rows: 1, cols: 2 })));
    }

    #[test]
    fn shape_errors_name_the_node() {
        let mut g = Graph::new();
        let a = g.input("a");
        let b = g.input("b");
        let c = g.matmul(a, b);
        g.label(c, "bad-product");
        let err = g
            .forward(bind(&[("a", Tensor2::zeros(2, 3)), ("b", Tensor2::zeros(2, 3))]))
            .unwrap_err();
        match err {
            NnError::ShapeMismatch { node, .. } => assert_eq!(node, "bad-product"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn non_finite_output_names_node_and_row() {
        let mut g = Graph::new();
        let a = g.input("a");
        let b = g.scale(a, f32::MAX);
        let c = g.scale(b, 10.0);
        let err = g.forward(bind(&[("a", t(3, 1, &[0., 0., 1.]))])).unwrap_err();
        match err {
            NnError::NonFinite { node, row } => {
                assert_eq!(node, format!("scale#{}", c.index()));
                assert_eq!(row, 2);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn missing_input_is_reported() {
        let mut g = Graph::new();
        let a = g.input("x");
        g.output("x", a);
        assert!(matches!(g.forward(HashMap::new()), Err(NnError::MissingInput(n)) if n == "x"));
    }

    #[test]
    fn stop_gradient_is_forward_identity_and_blocks_gradient() {
        let v = t(2, 2, &[0.1, -3.0, 7.5, 1e-8]);
        let mut g = Graph::new();
        let w = g.param("w", &v);
        let sg = g.stop_gradient(w);
        let loss = g.sum(sg);
        g.forward(HashMap::new()).unwrap();
        assert_eq!(g.value(sg).unwrap(), &v);
        let grads = g.backward(loss).unwrap();
        assert!(grads["w"].data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn straight_through_has_identity_jacobian() {
        let h_val = t(2, 3, &[0.2, -0.7, 1.4, 0.0, 0.9, -0.1]);
        let q_val = h_val.map(|v| v.round());
        let mut g = Graph::new();
        let h = g.param("h", &h_val);
        let q = g.constant(q_val.clone());
        let s = g.straight_through(h, q);
        let weights = g.constant(t(2, 3, &[1., 2., 3., 4., 5., 6.]));
        let weighted = g.mul(s, weights);
        let loss = g.sum(weighted);
        g.forward(HashMap::new()).unwrap();
        assert_eq!(g.value(s).unwrap(), &q_val);
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads["h"].data(), &[1., 2., 3., 4., 5., 6.]);
    }

    #[test]
    fn broadcasting_add_sums_gradient() {
        let mut g = Graph::new();
        let x = g.constant(Tensor2::ones(3, 2));
        let b = g.param("b", &t(1, 2, &[0.5, -0.5]));
        let y = g.add(x, b);
        let loss = g.sum(y);
        g.forward(HashMap::new()).unwrap();
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads["b"].data(), &[3., 3.]);
        assert_eq!(g.value(y).unwrap().data(), &[1.5, 0.5, 1.5, 0.5, 1.5, 0.5]);
    }

    #[test]
    fn gather_scatters_back() {
        let mut g = Graph::new();
        let table = g.param("t", &t(3, 1, &[1., 2., 3.]));
        let rows = g.gather_rows(table, vec![2, 0, 2]);
        let loss = g.sum(rows);
        g.forward(HashMap::new()).unwrap();
        assert_eq!(g.value(rows).unwrap().data(), &[3., 1., 3.]);
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads["t"].data(), &[1., 0., 2.]);
    }

    #[test]
    fn normalize_rejects_zero_rows() {
        let mut g = Graph::new();
        let a = g.input("a");
        g.normalize_rows(a);
        let err = g.forward(bind(&[("a", t(2, 2, &[1., 0., 0., 0.]))])).unwrap_err();
        assert!(err.to_string().contains("zero-norm row 1"), "{err}");
    }
}
