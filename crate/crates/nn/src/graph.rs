//! Tape-based reverse-mode differentiation over row-major matrices.
//!
//! Every node holds a `[rows, cols]` matrix. Sequences are handled by the
//! layers either as one node per timestep (`[batch, features]`) or as a
//! stacked `[batch * seq, features]` node whose rows are grouped by sample.
//! Nodes are appended in evaluation order, so a reverse sweep over the tape
//! is a valid topological order for the backward pass.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{NnError, Result};
use crate::optim::ParamStore;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Linear,
    Sigmoid,
    Tanh,
    Relu,
    Softplus,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Linear => x,
            Activation::Sigmoid => sigmoid(x),
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
            Activation::Softplus => softplus(x),
        }
    }

    /// Derivative given the pre-activation `x` and the output `y`.
    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Activation::Linear => 1.0,
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Tanh => 1.0 - y * y,
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Softplus => sigmoid(x),
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn softplus(x: f64) -> f64 {
    // ln(1 + e^x) without overflow for large |x|
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(NodeId, NodeId),
    AddRowBias(NodeId, NodeId),
    Add(NodeId, NodeId),
    Mul(NodeId, NodeId),
    OneMinus(NodeId),
    Act(NodeId, Activation),
    ConcatCols(Vec<NodeId>),
    SliceCols {
        src: NodeId,
        start: usize,
    },
    GatherRows {
        src: NodeId,
        rows: Vec<usize>,
    },
    MeanRowGroups {
        src: NodeId,
        group: usize,
    },
    LayerNorm {
        x: NodeId,
        gain: NodeId,
        bias: NodeId,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Attention {
        q: NodeId,
        k: NodeId,
        v: NodeId,
        seq: usize,
        heads: usize,
        head_dim: usize,
        probs: Vec<f64>,
    },
    MaskMul {
        src: NodeId,
        mask: Vec<f64>,
    },
    L1 {
        pred: NodeId,
        target: Vec<f64>,
    },
    WeightedSum {
        src: NodeId,
        weights: Vec<f64>,
    },
}

#[derive(Debug)]
struct Node {
    rows: usize,
    cols: usize,
    value: Vec<f64>,
    op: Op,
    requires_grad: bool,
}

/// A single forward/backward tape.
#[derive(Debug)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
    params: Vec<(String, NodeId)>,
    param_index: HashMap<String, NodeId>,
    mode: Mode,
    rng: ChaCha8Rng,
}

impl Graph {
    pub fn new(mode: Mode, seed: u64) -> Self {
        Self {
            nodes: Vec::new(),
            grads: Vec::new(),
            params: Vec::new(),
            param_index: HashMap::new(),
            mode,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn eval() -> Self {
        Self::new(Mode::Eval, 0)
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    fn push(&mut self, rows: usize, cols: usize, value: Vec<f64>, op: Op, requires_grad: bool) -> NodeId {
        debug_assert_eq!(rows * cols, value.len());
        self.nodes.push(Node {
            rows,
            cols,
            value,
            op,
            requires_grad,
        });
        self.grads.push(None);
        NodeId(self.nodes.len() - 1)
    }

    fn rg(&self, ids: &[NodeId]) -> bool {
        ids.iter().any(|id| self.nodes[id.0].requires_grad)
    }

    /// Constant input; no gradient is propagated into it.
    pub fn input(&mut self, rows: usize, cols: usize, values: Vec<f64>) -> Result<NodeId> {
        check_len(rows, cols, &values)?;
        Ok(self.push(rows, cols, values, Op::Leaf, false))
    }

    /// Input that collects a gradient (used by gradient checks on inputs).
    pub fn variable(&mut self, rows: usize, cols: usize, values: Vec<f64>) -> Result<NodeId> {
        check_len(rows, cols, &values)?;
        Ok(self.push(rows, cols, values, Op::Leaf, true))
    }

    /// Binds a named parameter. Binding the same name twice returns the
    /// existing node so recurrent weights accumulate into one gradient.
    pub fn param(&mut self, name: &str, tensor: &Tensor) -> NodeId {
        if let Some(id) = self.param_index.get(name) {
            return *id;
        }
        let (rows, cols) = tensor.as_matrix_dims();
        let id = self.push(rows, cols, tensor.values().to_vec(), Op::Leaf, true);
        self.params.push((name.to_string(), id));
        self.param_index.insert(name.to_string(), id);
        id
    }

    pub fn param_from(&mut self, store: &ParamStore, name: &str) -> Result<NodeId> {
        let tensor = store
            .get(name)
            .ok_or_else(|| NnError::UnknownParam(name.to_string()))?;
        Ok(self.param(name, tensor))
    }

    pub fn value(&self, id: NodeId) -> &[f64] {
        &self.nodes[id.0].value
    }

    pub fn dims(&self, id: NodeId) -> (usize, usize) {
        let n = &self.nodes[id.0];
        (n.rows, n.cols)
    }

    pub fn grad(&self, id: NodeId) -> Option<&[f64]> {
        self.grads[id.0].as_deref()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (m, k) = self.dims(a);
        let (k2, n) = self.dims(b);
        if k != k2 {
            return Err(NnError::ShapeMismatch {
                op: "matmul",
                left: vec![m, k],
                right: vec![k2, n],
            });
        }
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, self.value(a), false, self.value(b), false, &mut out);
        let rg = self.rg(&[a, b]);
        Ok(self.push(m, n, out, Op::MatMul(a, b), rg))
    }

    /// `x + b` with a `[1, cols]` bias broadcast over rows.
    pub fn add_bias(&mut self, x: NodeId, b: NodeId) -> Result<NodeId> {
        let (m, n) = self.dims(x);
        let (br, bc) = self.dims(b);
        if br != 1 || bc != n {
            return Err(NnError::ShapeMismatch {
                op: "add_bias",
                left: vec![m, n],
                right: vec![br, bc],
            });
        }
        let bias = self.value(b);
        let mut out = self.value(x).to_vec();
        for row in out.chunks_mut(n) {
            for (o, bj) in row.iter_mut().zip(bias) {
                *o += bj;
            }
        }
        let rg = self.rg(&[x, b]);
        Ok(self.push(m, n, out, Op::AddRowBias(x, b), rg))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_dims("add", a, b)?;
        let out = zip_map(self.value(a), self.value(b), |x, y| x + y);
        let (m, n) = self.dims(a);
        let rg = self.rg(&[a, b]);
        Ok(self.push(m, n, out, Op::Add(a, b), rg))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_dims("mul", a, b)?;
        let out = zip_map(self.value(a), self.value(b), |x, y| x * y);
        let (m, n) = self.dims(a);
        let rg = self.rg(&[a, b]);
        Ok(self.push(m, n, out, Op::Mul(a, b), rg))
    }

    /// `1 - x`, elementwise.
    pub fn one_minus(&mut self, a: NodeId) -> NodeId {
        let out = self.value(a).iter().map(|x| 1.0 - x).collect();
        let (m, n) = self.dims(a);
        let rg = self.rg(&[a]);
        self.push(m, n, out, Op::OneMinus(a), rg)
    }

    pub fn activation(&mut self, a: NodeId, act: Activation) -> Result<NodeId> {
        if act == Activation::Linear {
            return Ok(a);
        }
        let out: Vec<f64> = self.value(a).iter().map(|&x| act.apply(x)).collect();
        if out.iter().any(|v| !v.is_finite()) {
            return Err(NnError::NonFinite { op: "activation" });
        }
        let (m, n) = self.dims(a);
        let rg = self.rg(&[a]);
        Ok(self.push(m, n, out, Op::Act(a, act), rg))
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let rows = self.dims(parts[0]).0;
        for p in parts {
            let (r, c) = self.dims(*p);
            if r != rows {
                return Err(NnError::ShapeMismatch {
                    op: "concat_cols",
                    left: vec![rows],
                    right: vec![r, c],
                });
            }
        }
        let cols: usize = parts.iter().map(|p| self.dims(*p).1).sum();
        let mut out = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for p in parts {
                let c = self.dims(*p).1;
                out.extend_from_slice(&self.value(*p)[r * c..(r + 1) * c]);
            }
        }
        let rg = self.rg(parts);
        Ok(self.push(rows, cols, out, Op::ConcatCols(parts.to_vec()), rg))
    }

    /// Columns `start..end` of `src`.
    pub fn slice_cols(&mut self, src: NodeId, start: usize, end: usize) -> Result<NodeId> {
        let (m, n) = self.dims(src);
        if start >= end || end > n {
            return Err(NnError::ShapeMismatch {
                op: "slice_cols",
                left: vec![m, n],
                right: vec![start, end],
            });
        }
        let w = end - start;
        let v = self.value(src);
        let mut out = Vec::with_capacity(m * w);
        for r in 0..m {
            out.extend_from_slice(&v[r * n + start..r * n + end]);
        }
        let rg = self.rg(&[src]);
        Ok(self.push(m, w, out, Op::SliceCols { src, start }, rg))
    }

    pub fn gather_rows(&mut self, src: NodeId, rows: Vec<usize>) -> Result<NodeId> {
        let (m, n) = self.dims(src);
        if let Some(bad) = rows.iter().find(|&&r| r >= m) {
            return Err(NnError::ShapeMismatch {
                op: "gather_rows",
                left: vec![m, n],
                right: vec![*bad],
            });
        }
        let v = self.value(src);
        let mut out = Vec::with_capacity(rows.len() * n);
        for &r in &rows {
            out.extend_from_slice(&v[r * n..(r + 1) * n]);
        }
        let count = rows.len();
        let rg = self.rg(&[src]);
        Ok(self.push(count, n, out, Op::GatherRows { src, rows }, rg))
    }

    /// Averages consecutive blocks of `group` rows: `[g * group, n] -> [g, n]`.
    pub fn mean_row_groups(&mut self, src: NodeId, group: usize) -> Result<NodeId> {
        let (m, n) = self.dims(src);
        if group == 0 || m % group != 0 {
            return Err(NnError::ShapeMismatch {
                op: "mean_row_groups",
                left: vec![m, n],
                right: vec![group],
            });
        }
        let groups = m / group;
        let v = self.value(src);
        let mut out = vec![0.0; groups * n];
        for g in 0..groups {
            for r in 0..group {
                let row = &v[(g * group + r) * n..(g * group + r + 1) * n];
                for (o, x) in out[g * n..(g + 1) * n].iter_mut().zip(row) {
                    *o += x;
                }
            }
        }
        let inv = 1.0 / group as f64;
        out.iter_mut().for_each(|o| *o *= inv);
        let rg = self.rg(&[src]);
        Ok(self.push(groups, n, out, Op::MeanRowGroups { src, group }, rg))
    }

    /// Row-wise layer normalization with `[1, cols]` gain and bias.
    pub fn layer_norm(&mut self, x: NodeId, gain: NodeId, bias: NodeId, eps: f64) -> Result<NodeId> {
        let (m, n) = self.dims(x);
        for p in [gain, bias] {
            if self.dims(p) != (1, n) {
                let (r, c) = self.dims(p);
                return Err(NnError::ShapeMismatch {
                    op: "layer_norm",
                    left: vec![m, n],
                    right: vec![r, c],
                });
            }
        }
        let xv = self.value(x);
        let gv = self.value(gain);
        let bv = self.value(bias);
        let mut xhat = vec![0.0; m * n];
        let mut inv_std = vec![0.0; m];
        let mut out = vec![0.0; m * n];
        for r in 0..m {
            let row = &xv[r * n..(r + 1) * n];
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let inv = 1.0 / (var + eps).sqrt();
            inv_std[r] = inv;
            for j in 0..n {
                let h = (row[j] - mean) * inv;
                xhat[r * n + j] = h;
                out[r * n + j] = gv[j] * h + bv[j];
            }
        }
        let rg = self.rg(&[x, gain, bias]);
        Ok(self.push(
            m,
            n,
            out,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
            rg,
        ))
    }

    /// Scaled dot-product attention over stacked sequences.
    ///
    /// `q`, `k`, `v` are `[batch * seq, heads * head_dim]` with rows grouped
    /// by sample; head `h` occupies columns `h * head_dim..(h + 1) * head_dim`.
    pub fn attention(
        &mut self,
        q: NodeId,
        k: NodeId,
        v: NodeId,
        seq: usize,
        heads: usize,
        head_dim: usize,
    ) -> Result<NodeId> {
        let (m, width) = self.dims(q);
        if self.dims(k) != (m, width)
            || self.dims(v) != (m, width)
            || width != heads * head_dim
            || seq == 0
            || m % seq != 0
        {
            return Err(NnError::ShapeMismatch {
                op: "attention",
                left: vec![m, width],
                right: vec![seq, heads, head_dim],
            });
        }
        let batch = m / seq;
        let scale = 1.0 / (head_dim as f64).sqrt();
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let mut probs = vec![0.0; batch * heads * seq * seq];
        let mut out = vec![0.0; m * width];
        let mut scores = vec![0.0; seq];
        for b in 0..batch {
            for h in 0..heads {
                let off = h * head_dim;
                let pbase = (b * heads + h) * seq * seq;
                for i in 0..seq {
                    let qi = &qv[(b * seq + i) * width + off..][..head_dim];
                    let mut max = f64::NEG_INFINITY;
                    for (j, s) in scores.iter_mut().enumerate() {
                        let kj = &kv[(b * seq + j) * width + off..][..head_dim];
                        *s = dot(qi, kj) * scale;
                        max = max.max(*s);
                    }
                    let mut total = 0.0;
                    for s in scores.iter_mut() {
                        *s = (*s - max).exp();
                        total += *s;
                    }
                    let prow = &mut probs[pbase + i * seq..pbase + (i + 1) * seq];
                    for (p, s) in prow.iter_mut().zip(&scores) {
                        *p = s / total;
                    }
                    let orow = &mut out[(b * seq + i) * width + off..][..head_dim];
                    for j in 0..seq {
                        let p = probs[pbase + i * seq + j];
                        let vj = &vv[(b * seq + j) * width + off..][..head_dim];
                        for (o, x) in orow.iter_mut().zip(vj) {
                            *o += p * x;
                        }
                    }
                }
            }
        }
        let rg = self.rg(&[q, k, v]);
        Ok(self.push(
            m,
            width,
            out,
            Op::Attention {
                q,
                k,
                v,
                seq,
                heads,
                head_dim,
                probs,
            },
            rg,
        ))
    }

    /// Softmax attention weights of an attention node, laid out
    /// `[batch][head][query][key]`.
    pub fn attention_weights(&self, id: NodeId) -> Option<&[f64]> {
        match &self.nodes[id.0].op {
            Op::Attention { probs, .. } => Some(probs),
            _ => None,
        }
    }

    /// Inverted dropout. Identity in eval mode or at rate 0.
    pub fn dropout(&mut self, x: NodeId, rate: f64) -> Result<NodeId> {
        if !(0.0..1.0).contains(&rate) {
            return Err(NnError::InvalidConfig(format!("dropout rate {rate} outside [0, 1)")));
        }
        if self.mode == Mode::Eval || rate == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 / (1.0 - rate);
        let (m, n) = self.dims(x);
        let mask: Vec<f64> = (0..m * n)
            .map(|_| if self.rng.random::<f64>() < rate { 0.0 } else { keep })
            .collect();
        let out = zip_map(self.value(x), &mask, |a, b| a * b);
        let rg = self.rg(&[x]);
        Ok(self.push(m, n, out, Op::MaskMul { src: x, mask }, rg))
    }

    /// Mean absolute error against a constant target; a `[1, 1]` node.
    pub fn l1_loss(&mut self, pred: NodeId, target: &[f64]) -> Result<NodeId> {
        let (m, n) = self.dims(pred);
        if target.len() != m * n {
            return Err(NnError::ShapeMismatch {
                op: "l1_loss",
                left: vec![m, n],
                right: vec![target.len()],
            });
        }
        let p = self.value(pred);
        let loss = p.iter().zip(target).map(|(a, b)| (a - b).abs()).sum::<f64>() / (m * n) as f64;
        let rg = self.rg(&[pred]);
        Ok(self.push(
            1,
            1,
            vec![loss],
            Op::L1 {
                pred,
                target: target.to_vec(),
            },
            rg,
        ))
    }

    /// `sum(x * weights)`; a smooth scalar head for gradient checks.
    pub fn weighted_sum(&mut self, src: NodeId, weights: &[f64]) -> Result<NodeId> {
        let (m, n) = self.dims(src);
        if weights.len() != m * n {
            return Err(NnError::ShapeMismatch {
                op: "weighted_sum",
                left: vec![m, n],
                right: vec![weights.len()],
            });
        }
        let s = dot(self.value(src), weights);
        let rg = self.rg(&[src]);
        Ok(self.push(
            1,
            1,
            vec![s],
            Op::WeightedSum {
                src,
                weights: weights.to_vec(),
            },
            rg,
        ))
    }

    fn same_dims(&self, op: &'static str, a: NodeId, b: NodeId) -> Result<()> {
        if self.dims(a) != self.dims(b) {
            let (ar, ac) = self.dims(a);
            let (br, bc) = self.dims(b);
            return Err(NnError::ShapeMismatch {
                op,
                left: vec![ar, ac],
                right: vec![br, bc],
            });
        }
        Ok(())
    }

    /// Back-propagates from a scalar node. Gradients from earlier calls are
    /// discarded.
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        if self.dims(loss) != (1, 1) {
            let (r, c) = self.dims(loss);
            return Err(NnError::ShapeMismatch {
                op: "backward",
                left: vec![r, c],
                right: vec![1, 1],
            });
        }
        self.grads.iter_mut().for_each(|g| *g = None);
        self.grads[loss.0] = Some(vec![1.0]);
        let Graph { nodes, grads, .. } = self;
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &nodes[i];
            backprop(nodes, node, &g, grads);
            grads[i] = Some(g);
        }
        Ok(())
    }

    /// Gradients of every bound parameter, in binding order. Parameters that
    /// did not influence the loss get zeros.
    pub fn param_grads(&self) -> Vec<(String, Vec<f64>)> {
        self.params
            .iter()
            .map(|(name, id)| {
                let g = self.grads[id.0]
                    .clone()
                    .unwrap_or_else(|| vec![0.0; self.nodes[id.0].value.len()]);
                (name.clone(), g)
            })
            .collect()
    }
}

fn check_len(rows: usize, cols: usize, values: &[f64]) -> Result<()> {
    if rows * cols != values.len() {
        return Err(NnError::BadLength {
            shape: vec![rows, cols],
            len: values.len(),
        });
    }
    Ok(())
}

fn zip_map(a: &[f64], b: &[f64], f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `c += op(a) * op(b)` where `op` optionally transposes. `a` is stored
/// row-major as `[m, k]` (or `[k, m]` when transposed), likewise `b`.
#[allow(clippy::too_many_arguments)]
fn gemm(m: usize, k: usize, n: usize, a: &[f64], a_t: bool, b: &[f64], b_t: bool, c: &mut [f64]) {
    if m == 0 || n == 0 || k == 0 {
        return;
    }
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    // SAFETY: the asserts above bound every index the strides can reach.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            1.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn grad_slot<'a>(nodes: &[Node], grads: &'a mut [Option<Vec<f64>>], id: NodeId) -> Option<&'a mut Vec<f64>> {
    let node = &nodes[id.0];
    if !node.requires_grad {
        return None;
    }
    Some(grads[id.0].get_or_insert_with(|| vec![0.0; node.value.len()]))
}

fn backprop(nodes: &[Node], node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
    match &node.op {
        Op::Leaf => {}
        Op::MatMul(a, b) => {
            let (m, k) = (nodes[a.0].rows, nodes[a.0].cols);
            let n = nodes[b.0].cols;
            if let Some(ga) = grad_slot(nodes, grads, *a) {
                gemm(m, n, k, g, false, &nodes[b.0].value, true, ga);
            }
            if let Some(gb) = grad_slot(nodes, grads, *b) {
                gemm(k, m, n, &nodes[a.0].value, true, g, false, gb);
            }
        }
        Op::AddRowBias(x, b) => {
            if let Some(gx) = grad_slot(nodes, grads, *x) {
                add_into(gx, g);
            }
            let n = node.cols;
            if let Some(gb) = grad_slot(nodes, grads, *b) {
                for row in g.chunks(n) {
                    add_into(gb, row);
                }
            }
        }
        Op::Add(a, b) => {
            for p in [a, b] {
                if let Some(gp) = grad_slot(nodes, grads, *p) {
                    add_into(gp, g);
                }
            }
        }
        Op::Mul(a, b) => {
            if let Some(ga) = grad_slot(nodes, grads, *a) {
                for ((o, gi), y) in ga.iter_mut().zip(g).zip(&nodes[b.0].value) {
                    *o += gi * y;
                }
            }
            if let Some(gb) = grad_slot(nodes, grads, *b) {
                for ((o, gi), x) in gb.iter_mut().zip(g).zip(&nodes[a.0].value) {
                    *o += gi * x;
                }
            }
        }
        Op::OneMinus(a) => {
            if let Some(ga) = grad_slot(nodes, grads, *a) {
                for (o, gi) in ga.iter_mut().zip(g) {
                    *o -= gi;
                }
            }
        }
        Op::Act(a, act) => {
            let xs = &nodes[a.0].value;
            if let Some(ga) = grad_slot(nodes, grads, *a) {
                for (((o, gi), x), y) in ga.iter_mut().zip(g).zip(xs).zip(&node.value) {
                    *o += gi * act.derivative(*x, *y);
                }
            }
        }
        Op::ConcatCols(parts) => {
            let rows = node.rows;
            let total = node.cols;
            let mut offset = 0;
            for p in parts {
                let c = nodes[p.0].cols;
                if let Some(gp) = grad_slot(nodes, grads, *p) {
                    for r in 0..rows {
                        let src = &g[r * total + offset..r * total + offset + c];
                        add_into(&mut gp[r * c..(r + 1) * c], src);
                    }
                }
                offset += c;
            }
        }
        Op::SliceCols { src, start } => {
            let n = nodes[src.0].cols;
            let w = node.cols;
            if let Some(gs) = grad_slot(nodes, grads, *src) {
                for r in 0..node.rows {
                    add_into(&mut gs[r * n + start..r * n + start + w], &g[r * w..(r + 1) * w]);
                }
            }
        }
        Op::GatherRows { src, rows } => {
            let n = node.cols;
            if let Some(gs) = grad_slot(nodes, grads, *src) {
                for (i, &r) in rows.iter().enumerate() {
                    add_into(&mut gs[r * n..(r + 1) * n], &g[i * n..(i + 1) * n]);
                }
            }
        }
        Op::MeanRowGroups { src, group } => {
            let n = node.cols;
            let inv = 1.0 / *group as f64;
            if let Some(gs) = grad_slot(nodes, grads, *src) {
                for gi in 0..node.rows {
                    for r in 0..*group {
                        let dst = &mut gs[(gi * group + r) * n..(gi * group + r + 1) * n];
                        for (o, x) in dst.iter_mut().zip(&g[gi * n..(gi + 1) * n]) {
                            *o += x * inv;
                        }
                    }
                }
            }
        }
        Op::LayerNorm {
            x,
            gain,
            bias,
            xhat,
            inv_std,
        } => {
            let (m, n) = (node.rows, node.cols);
            let gv = &nodes[gain.0].value;
            if let Some(gg) = grad_slot(nodes, grads, *gain) {
                for r in 0..m {
                    for j in 0..n {
                        gg[j] += g[r * n + j] * xhat[r * n + j];
                    }
                }
            }
            if let Some(gb) = grad_slot(nodes, grads, *bias) {
                for row in g.chunks(n) {
                    add_into(gb, row);
                }
            }
            if let Some(gx) = grad_slot(nodes, grads, *x) {
                let nf = n as f64;
                for r in 0..m {
                    let mut sum_d = 0.0;
                    let mut sum_dx = 0.0;
                    for j in 0..n {
                        let d = g[r * n + j] * gv[j];
                        sum_d += d;
                        sum_dx += d * xhat[r * n + j];
                    }
                    for j in 0..n {
                        let d = g[r * n + j] * gv[j];
                        gx[r * n + j] += inv_std[r] / nf * (nf * d - sum_d - xhat[r * n + j] * sum_dx);
                    }
                }
            }
        }
        Op::Attention {
            q,
            k,
            v,
            seq,
            heads,
            head_dim,
            probs,
        } => attention_backward(nodes, node, g, grads, (*q, *k, *v), *seq, *heads, *head_dim, probs),
        Op::MaskMul { src, mask } => {
            if let Some(gs) = grad_slot(nodes, grads, *src) {
                for ((o, gi), mk) in gs.iter_mut().zip(g).zip(mask) {
                    *o += gi * mk;
                }
            }
        }
        Op::L1 { pred, target } => {
            let p = &nodes[pred.0].value;
            let scale = g[0] / p.len() as f64;
            if let Some(gp) = grad_slot(nodes, grads, *pred) {
                for ((o, a), b) in gp.iter_mut().zip(p).zip(target) {
                    let diff = a - b;
                    if diff > 0.0 {
                        *o += scale;
                    } else if diff < 0.0 {
                        *o -= scale;
                    }
                }
            }
        }
        Op::WeightedSum { src, weights } => {
            if let Some(gs) = grad_slot(nodes, grads, *src) {
                for (o, w) in gs.iter_mut().zip(weights) {
                    *o += g[0] * w;
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn attention_backward(
    nodes: &[Node],
    node: &Node,
    g: &[f64],
    grads: &mut [Option<Vec<f64>>],
    (q, k, v): (NodeId, NodeId, NodeId),
    seq: usize,
    heads: usize,
    head_dim: usize,
    probs: &[f64],
) {
    let width = node.cols;
    let batch = node.rows / seq;
    let scale = 1.0 / (head_dim as f64).sqrt();
    let (qv, kv, vv) = (&nodes[q.0].value, &nodes[k.0].value, &nodes[v.0].value);
    let mut dq = vec![0.0; qv.len()];
    let mut dk = vec![0.0; kv.len()];
    let mut dv = vec![0.0; vv.len()];
    let mut dp = vec![0.0; seq];
    for b in 0..batch {
        for h in 0..heads {
            let off = h * head_dim;
            let pbase = (b * heads + h) * seq * seq;
            for i in 0..seq {
                let gi = &g[(b * seq + i) * width + off..][..head_dim];
                let prow = &probs[pbase + i * seq..pbase + (i + 1) * seq];
                // dV_j += p_ij * dO_i ; dP_ij = dO_i . V_j
                for j in 0..seq {
                    let base = (b * seq + j) * width + off;
                    dp[j] = dot(gi, &vv[base..base + head_dim]);
                    for (o, x) in dv[base..base + head_dim].iter_mut().zip(gi) {
                        *o += prow[j] * x;
                    }
                }
                let weighted: f64 = prow.iter().zip(&dp).map(|(p, d)| p * d).sum();
                let qbase = (b * seq + i) * width + off;
                for j in 0..seq {
                    let ds = prow[j] * (dp[j] - weighted) * scale;
                    if ds == 0.0 {
                        continue;
                    }
                    let kbase = (b * seq + j) * width + off;
                    for d in 0..head_dim {
                        dq[qbase + d] += ds * kv[kbase + d];
                        dk[kbase + d] += ds * qv[qbase + d];
                    }
                }
            }
        }
    }
    for (id, delta) in [(q, dq), (k, dk), (v, dv)] {
        if let Some(slot) = grad_slot(nodes, grads, id) {
            add_into(slot, &delta);
        }
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}
