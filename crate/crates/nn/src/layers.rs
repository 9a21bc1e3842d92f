//! Parameterized layers built on [`Graph`] primitives.
//!
//! A layer owns only its name prefix and dimensions; the values live in a
//! [`ParamStore`] so that a model can be cloned, checkpointed and updated
//! as one flat collection.

use crate::error::{NnError, Result};
use crate::graph::{Activation, Graph, NodeId};
use crate::optim::{Initializer, ParamStore};
use crate::tensor::Tensor;

/// Fully connected layer: `act(x W + b)`.
#[derive(Debug, Clone)]
pub struct Dense {
    name: String,
    inputs: usize,
    outputs: usize,
    activation: Activation,
}

impl Dense {
    pub fn new(name: impl Into<String>, inputs: usize, outputs: usize, activation: Activation) -> Self {
        Self {
            name: name.into(),
            inputs,
            outputs,
            activation,
        }
    }

    pub fn weight_name(&self) -> String {
        format!("{}.weight", self.name)
    }

    pub fn bias_name(&self) -> String {
        format!("{}.bias", self.name)
    }

    pub fn init(&self, store: &mut ParamStore, init: &mut Initializer) {
        store.insert(&self.weight_name(), init.uniform(vec![self.inputs, self.outputs], self.inputs));
        store.insert(&self.bias_name(), Tensor::zeros(vec![1, self.outputs]));
    }

    pub fn param_count(&self) -> usize {
        self.inputs * self.outputs + self.outputs
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: NodeId) -> Result<NodeId> {
        let w = g.param_from(store, &self.weight_name())?;
        let b = g.param_from(store, &self.bias_name())?;
        dense(g, x, w, b, self.activation)
    }
}

/// `act(x W + b)` over already-bound nodes.
pub fn dense(g: &mut Graph, x: NodeId, w: NodeId, b: NodeId, act: Activation) -> Result<NodeId> {
    let xw = g.matmul(x, w)?;
    let z = g.add_bias(xw, b)?;
    g.activation(z, act)
}

/// Single-layer LSTM returning the final hidden state.
///
/// Gate blocks in the fused kernels are ordered input, forget, cell, output.
/// Initial hidden and cell states are zero.
#[derive(Debug, Clone)]
pub struct Lstm {
    name: String,
    inputs: usize,
    hidden: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct LstmWeights {
    pub kernel: NodeId,
    pub recurrent: NodeId,
    pub bias: NodeId,
}

impl Lstm {
    pub fn new(name: impl Into<String>, inputs: usize, hidden: usize) -> Self {
        Self {
            name: name.into(),
            inputs,
            hidden,
        }
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn inputs(&self) -> usize {
        self.inputs
    }

    fn names(&self) -> [String; 3] {
        [
            format!("{}.kernel", self.name),
            format!("{}.recurrent", self.name),
            format!("{}.bias", self.name),
        ]
    }

    pub fn init(&self, store: &mut ParamStore, init: &mut Initializer) {
        let [k, r, b] = self.names();
        let fan_in = self.inputs + self.hidden;
        let h = self.hidden;
        store.insert(&k, init.uniform(vec![self.inputs, 4 * h], fan_in));
        store.insert(&r, init.uniform(vec![h, 4 * h], fan_in));
        let mut bias = vec![0.0; 4 * h];
        // forget-gate bias starts at 1 so early gradients pass through time
        bias[h..2 * h].iter_mut().for_each(|v| *v = 1.0);
        store.insert(&b, Tensor::matrix(1, 4 * h, bias).expect("sized"));
    }

    /// `4 (H (F + H) + H)`: fused input/recurrent kernels plus one bias per gate.
    pub fn param_count(&self) -> usize {
        4 * (self.hidden * (self.inputs + self.hidden) + self.hidden)
    }

    pub fn bind(&self, g: &mut Graph, store: &ParamStore) -> Result<LstmWeights> {
        let [k, r, b] = self.names();
        Ok(LstmWeights {
            kernel: g.param_from(store, &k)?,
            recurrent: g.param_from(store, &r)?,
            bias: g.param_from(store, &b)?,
        })
    }

    /// One recurrence step; `h` and `c` are `None` for the zero initial state.
    pub fn cell(
        &self,
        g: &mut Graph,
        w: &LstmWeights,
        x: NodeId,
        state: Option<(NodeId, NodeId)>,
    ) -> Result<(NodeId, NodeId)> {
        let hs = self.hidden;
        let xw = g.matmul(x, w.kernel)?;
        let pre = match state {
            Some((h, _)) => {
                let hw = g.matmul(h, w.recurrent)?;
                g.add(xw, hw)?
            }
            None => xw,
        };
        let z = g.add_bias(pre, w.bias)?;
        let zi = g.slice_cols(z, 0, hs)?;
        let zf = g.slice_cols(z, hs, 2 * hs)?;
        let zc = g.slice_cols(z, 2 * hs, 3 * hs)?;
        let zo = g.slice_cols(z, 3 * hs, 4 * hs)?;
        let i = g.activation(zi, Activation::Sigmoid)?;
        let f = g.activation(zf, Activation::Sigmoid)?;
        let cand = g.activation(zc, Activation::Tanh)?;
        let o = g.activation(zo, Activation::Sigmoid)?;
        let ic = g.mul(i, cand)?;
        let c = match state {
            Some((_, c_prev)) => {
                let fc = g.mul(f, c_prev)?;
                g.add(fc, ic)?
            }
            None => ic,
        };
        let tc = g.activation(c, Activation::Tanh)?;
        let h = g.mul(o, tc)?;
        Ok((h, c))
    }

    /// Runs the recurrence over `steps` (each `[batch, inputs]`).
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, steps: &[NodeId]) -> Result<NodeId> {
        if steps.is_empty() {
            return Err(NnError::InvalidConfig("LSTM needs at least one timestep".into()));
        }
        let w = self.bind(g, store)?;
        let mut state = None;
        for &x in steps {
            state = Some(self.cell(g, &w, x, state)?);
        }
        Ok(state.expect("non-empty").0)
    }
}

/// Splits a row-major `[batch, seq, features]` buffer into `seq` constant
/// input nodes of shape `[batch, features]`.
pub fn timestep_inputs(
    g: &mut Graph,
    values: &[f64],
    batch: usize,
    seq: usize,
    features: usize,
) -> Result<Vec<NodeId>> {
    if values.len() != batch * seq * features {
        return Err(NnError::BadLength {
            shape: vec![batch, seq, features],
            len: values.len(),
        });
    }
    (0..seq)
        .map(|t| {
            let mut step = Vec::with_capacity(batch * features);
            for b in 0..batch {
                let base = (b * seq + t) * features;
                step.extend_from_slice(&values[base..base + features]);
            }
            g.input(batch, features, step)
        })
        .collect()
}

/// Self-attention with `heads` heads of width `head_dim`, projected back to
/// the model width.
#[derive(Debug, Clone)]
pub struct MultiHeadAttention {
    name: String,
    model_dim: usize,
    heads: usize,
    head_dim: usize,
}

impl MultiHeadAttention {
    pub fn new(name: impl Into<String>, model_dim: usize, heads: usize, head_dim: usize) -> Self {
        Self {
            name: name.into(),
            model_dim,
            heads,
            head_dim,
        }
    }

    fn projections(&self) -> [Dense; 4] {
        let inner = self.heads * self.head_dim;
        let d = self.model_dim;
        [
            Dense::new(format!("{}.query", self.name), d, inner, Activation::Linear),
            Dense::new(format!("{}.key", self.name), d, inner, Activation::Linear),
            Dense::new(format!("{}.value", self.name), d, inner, Activation::Linear),
            Dense::new(format!("{}.output", self.name), inner, d, Activation::Linear),
        ]
    }

    pub fn init(&self, store: &mut ParamStore, init: &mut Initializer) {
        for p in self.projections() {
            p.init(store, init);
        }
    }

    pub fn param_count(&self) -> usize {
        self.projections().iter().map(Dense::param_count).sum()
    }

    /// `x` is `[batch * seq, model_dim]`, rows grouped by sample. Returns the
    /// output node and the attention node (for inspecting weights).
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: NodeId, seq: usize) -> Result<(NodeId, NodeId)> {
        let (_, cols) = g.dims(x);
        if cols != self.model_dim {
            return Err(NnError::ShapeMismatch {
                op: "multi_head_attention",
                left: vec![g.dims(x).0, cols],
                right: vec![self.model_dim],
            });
        }
        let [wq, wk, wv, wo] = self.projections();
        let q = wq.forward(g, store, x)?;
        let k = wk.forward(g, store, x)?;
        let v = wv.forward(g, store, x)?;
        let attn = g.attention(q, k, v, seq, self.heads, self.head_dim)?;
        let out = wo.forward(g, store, attn)?;
        Ok((out, attn))
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    name: String,
    dim: usize,
    eps: f64,
}

impl LayerNorm {
    pub fn new(name: impl Into<String>, dim: usize, eps: f64) -> Self {
        Self {
            name: name.into(),
            dim,
            eps,
        }
    }

    pub fn init(&self, store: &mut ParamStore) {
        store.insert(&format!("{}.gain", self.name), Tensor::filled(vec![1, self.dim], 1.0));
        store.insert(&format!("{}.bias", self.name), Tensor::zeros(vec![1, self.dim]));
    }

    pub fn param_count(&self) -> usize {
        2 * self.dim
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: NodeId) -> Result<NodeId> {
        let gain = g.param_from(store, &format!("{}.gain", self.name))?;
        let bias = g.param_from(store, &format!("{}.bias", self.name))?;
        g.layer_norm(x, gain, bias, self.eps)
    }
}

/// Sinusoidal position table, `[seq, dim]` row-major.
pub fn sinusoidal_positions(seq: usize, dim: usize) -> Vec<f64> {
    let mut pe = vec![0.0; seq * dim];
    for t in 0..seq {
        for j in 0..dim {
            let pair = (j / 2) as f64;
            let angle = t as f64 / 10000f64.powf(2.0 * pair / dim as f64);
            pe[t * dim + j] = if j % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    pe
}
