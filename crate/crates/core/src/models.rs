//! The four case predictors and their checkpoint format.
//!
//! | kind | inputs | encoder | output |
//! |------|--------|---------|--------|
//! | `lstm-baseline` | ratio + 12 NPIs per day | LSTM | next ratio |
//! | `lstm-ut-cogn` | `z` series, NPI series | one LSTM each | `(1 - g) h` |
//! | `lstm-cultd-sir` | ratio, SIR fractions, NPIs, culture | LSTM | ratio + fractions |
//! | `transenc-cultd-sir` | same as above | transformer block | ratio + fractions |

use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use epiforecast_nn::layers::{sinusoidal_positions, timestep_inputs};
use epiforecast_nn::{
    Activation, Dense, Graph, Initializer, LayerNorm, Lstm, MultiHeadAttention, NnError, NodeId, ParamStore, Tensor,
    Trainable,
};

use crate::features::{TargetKind, WindowSample};
use crate::ingest::{CULTURE_DIMS, NPI_COUNT};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("unknown model kind `{0}` (expected one of lstm-baseline, lstm-ut-cogn, lstm-cultd-sir, transenc-cultd-sir)")]
    UnknownKind(String),

    #[error("{kind} expects {expected}, got {got}")]
    IoMismatch { kind: ModelKind, expected: String, got: String },

    #[error("invalid hyperparameters: {0}")]
    Hyper(String),

    #[error(transparent)]
    Nn(#[from] NnError),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("checkpoint fingerprint mismatch: header {stored}, content {computed}")]
    Fingerprint { stored: String, computed: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    LstmBaseline,
    LstmUtCogn,
    LstmCultdSir,
    TransencCultdSir,
}

impl ModelKind {
    pub const ALL: [ModelKind; 4] = [
        ModelKind::LstmBaseline,
        ModelKind::LstmUtCogn,
        ModelKind::LstmCultdSir,
        ModelKind::TransencCultdSir,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::LstmBaseline => "lstm-baseline",
            ModelKind::LstmUtCogn => "lstm-ut-cogn",
            ModelKind::LstmCultdSir => "lstm-cultd-sir",
            ModelKind::TransencCultdSir => "transenc-cultd-sir",
        }
    }

    pub fn target_kind(self) -> TargetKind {
        match self {
            ModelKind::LstmBaseline => TargetKind::Ratio,
            ModelKind::LstmUtCogn => TargetKind::Uninfected,
            ModelKind::LstmCultdSir | ModelKind::TransencCultdSir => TargetKind::RatioSir,
        }
    }

    pub fn io_spec(self, lookback: usize) -> IoSpec {
        let (context, constants, outputs) = match self {
            ModelKind::LstmBaseline | ModelKind::LstmUtCogn => (1, 0, 1),
            ModelKind::LstmCultdSir | ModelKind::TransencCultdSir => (4, CULTURE_DIMS, 4),
        };
        IoSpec {
            context,
            action: NPI_COUNT,
            constants,
            outputs,
            lookback,
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim().to_ascii_lowercase();
        ModelKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or(ModelError::UnknownKind(s))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pooling {
    Last,
    Mean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelHyper {
    pub hidden: usize,
    pub lookback: usize,
    pub heads: usize,
    pub head_dim: usize,
    pub ffn_dim: usize,
    pub dropout: f64,
    pub layer_norm_eps: f64,
    pub positional_encoding: bool,
    pub pooling: Pooling,
}

impl Default for ModelHyper {
    fn default() -> Self {
        Self {
            hidden: 64,
            lookback: 21,
            heads: 4,
            head_dim: 32,
            ffn_dim: 128,
            dropout: 0.25,
            layer_norm_eps: 1e-6,
            positional_encoding: true,
            pooling: Pooling::Last,
        }
    }
}

impl ModelHyper {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.hidden == 0 || self.lookback == 0 || self.heads == 0 || self.head_dim == 0 || self.ffn_dim == 0 {
            return Err(ModelError::Hyper("sizes must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(ModelError::Hyper(format!("dropout must be in [0, 1), got {}", self.dropout)));
        }
        if !(self.layer_norm_eps > 0.0) {
            return Err(ModelError::Hyper("layer_norm_eps must be positive".into()));
        }
        Ok(())
    }
}

/// Channel counts a model consumes and produces.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct IoSpec {
    pub context: usize,
    pub action: usize,
    pub constants: usize,
    pub outputs: usize,
    pub lookback: usize,
}

/// `(1 - g) * h`, the UT-Cogn output combination.
pub fn gate_combine(h: f64, g: f64) -> f64 {
    (1.0 - g) * h
}

#[derive(Debug, Clone)]
enum Layers {
    Baseline {
        lstm: Lstm,
        head: Dense,
    },
    UtCogn {
        context_lstm: Lstm,
        context_head: Dense,
        action_lstm: Lstm,
        action_head: Dense,
    },
    CultdSir {
        lstm: Lstm,
        head: Dense,
    },
    Transformer {
        attention: MultiHeadAttention,
        norm1: LayerNorm,
        ffn_hidden: Dense,
        ffn_out: Dense,
        norm2: LayerNorm,
        head: Dense,
    },
}

#[derive(Debug, Clone)]
pub struct Model {
    kind: ModelKind,
    hyper: ModelHyper,
    io: IoSpec,
    layers: Layers,
    params: ParamStore,
}

impl Model {
    /// Builds `kind` with its canonical io spec and seeded initial weights.
    pub fn build(kind: ModelKind, hyper: &ModelHyper, seed: u64) -> Result<Self, ModelError> {
        Self::with_io(kind, hyper, kind.io_spec(hyper.lookback), seed)
    }

    /// Like [`Model::build`] but checks a caller-provided io spec against the
    /// architecture's contract.
    pub fn with_io(kind: ModelKind, hyper: &ModelHyper, io: IoSpec, seed: u64) -> Result<Self, ModelError> {
        hyper.validate()?;
        let expected = kind.io_spec(hyper.lookback);
        if io != expected {
            return Err(ModelError::IoMismatch {
                kind,
                expected: format!("{expected:?}"),
                got: format!("{io:?}"),
            });
        }
        let h = hyper.hidden;
        let width = io.context + io.action;
        let layers = match kind {
            ModelKind::LstmBaseline => Layers::Baseline {
                lstm: Lstm::new("lstm", width, h),
                head: Dense::new("head", h, 1, Activation::Linear),
            },
            ModelKind::LstmUtCogn => Layers::UtCogn {
                context_lstm: Lstm::new("context_lstm", io.context, h),
                context_head: Dense::new("context_head", h, 1, Activation::Softplus),
                action_lstm: Lstm::new("action_lstm", io.action, h),
                action_head: Dense::new("action_head", h, 1, Activation::Sigmoid),
            },
            ModelKind::LstmCultdSir => Layers::CultdSir {
                lstm: Lstm::new("lstm", width, h),
                head: Dense::new("head", h + io.constants, io.outputs, Activation::Linear),
            },
            ModelKind::TransencCultdSir => Layers::Transformer {
                attention: MultiHeadAttention::new("attention", width, hyper.heads, hyper.head_dim),
                norm1: LayerNorm::new("norm1", width, hyper.layer_norm_eps),
                ffn_hidden: Dense::new("ffn_hidden", width, hyper.ffn_dim, Activation::Relu),
                ffn_out: Dense::new("ffn_out", hyper.ffn_dim, width, Activation::Linear),
                norm2: LayerNorm::new("norm2", width, hyper.layer_norm_eps),
                head: Dense::new("head", width + io.constants, io.outputs, Activation::Linear),
            },
        };
        let mut params = ParamStore::new();
        let mut init = Initializer::new(seed);
        match &layers {
            Layers::Baseline { lstm, head } | Layers::CultdSir { lstm, head } => {
                lstm.init(&mut params, &mut init);
                head.init(&mut params, &mut init);
            }
            Layers::UtCogn {
                context_lstm,
                context_head,
                action_lstm,
                action_head,
            } => {
                context_lstm.init(&mut params, &mut init);
                context_head.init(&mut params, &mut init);
                action_lstm.init(&mut params, &mut init);
                action_head.init(&mut params, &mut init);
            }
            Layers::Transformer {
                attention,
                norm1,
                ffn_hidden,
                ffn_out,
                norm2,
                head,
            } => {
                attention.init(&mut params, &mut init);
                norm1.init(&mut params);
                ffn_hidden.init(&mut params, &mut init);
                ffn_out.init(&mut params, &mut init);
                norm2.init(&mut params);
                head.init(&mut params, &mut init);
            }
        }
        Ok(Self {
            kind,
            hyper: hyper.clone(),
            io,
            layers,
            params,
        })
    }

    pub fn build_lstm_baseline(hyper: &ModelHyper, seed: u64) -> Result<Self, ModelError> {
        Self::build(ModelKind::LstmBaseline, hyper, seed)
    }

    pub fn build_lstm_ut_cogn(hyper: &ModelHyper, seed: u64) -> Result<Self, ModelError> {
        Self::build(ModelKind::LstmUtCogn, hyper, seed)
    }

    pub fn build_lstm_cultd_sir(hyper: &ModelHyper, seed: u64) -> Result<Self, ModelError> {
        Self::build(ModelKind::LstmCultdSir, hyper, seed)
    }

    pub fn build_transenc_cultd_sir(hyper: &ModelHyper, seed: u64) -> Result<Self, ModelError> {
        Self::build(ModelKind::TransencCultdSir, hyper, seed)
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn hyper(&self) -> &ModelHyper {
        &self.hyper
    }

    pub fn io_spec(&self) -> IoSpec {
        self.io
    }

    pub fn lookback(&self) -> usize {
        self.io.lookback
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.count()
    }

    fn check_sample(&self, s: &WindowSample) -> Result<(), ModelError> {
        let io = self.io;
        let ok = s.lookback == io.lookback
            && s.context_channels == io.context
            && s.context.len() == io.lookback * io.context
            && s.action.len() == io.lookback * io.action;
        if ok {
            Ok(())
        } else {
            Err(ModelError::IoMismatch {
                kind: self.kind,
                expected: format!("lookback {} x ({} context + {} action)", io.lookback, io.context, io.action),
                got: format!(
                    "lookback {} x {} context channels ({} context values, {} action values)",
                    s.lookback,
                    s.context_channels,
                    s.context.len(),
                    s.action.len()
                ),
            })
        }
    }

    /// Builds the forward pass for a batch; returns the `[batch, outputs]`
    /// node. In train mode the graph applies dropout.
    pub fn forward(&self, g: &mut Graph, batch: &[&WindowSample]) -> Result<NodeId, ModelError> {
        if batch.is_empty() {
            return Err(ModelError::IoMismatch {
                kind: self.kind,
                expected: "at least one sample".into(),
                got: "empty batch".into(),
            });
        }
        for s in batch {
            self.check_sample(s)?;
        }
        let b = batch.len();
        let t = self.io.lookback;
        let width = self.io.context + self.io.action;
        let store = &self.params;
        let out = match &self.layers {
            Layers::Baseline { lstm, head } => {
                let joined: Vec<f64> = batch.iter().flat_map(|s| s.joined_inputs()).collect();
                let steps = timestep_inputs(g, &joined, b, t, width)?;
                let h = lstm.forward(g, store, &steps)?;
                head.forward(g, store, h)?
            }
            Layers::UtCogn {
                context_lstm,
                context_head,
                action_lstm,
                action_head,
            } => {
                let context: Vec<f64> = batch.iter().flat_map(|s| s.context.iter().copied()).collect();
                let action: Vec<f64> = batch.iter().flat_map(|s| s.action.iter().copied()).collect();
                let c_steps = timestep_inputs(g, &context, b, t, self.io.context)?;
                let a_steps = timestep_inputs(g, &action, b, t, self.io.action)?;
                let hc = context_lstm.forward(g, store, &c_steps)?;
                let h = context_head.forward(g, store, hc)?;
                let ha = action_lstm.forward(g, store, &a_steps)?;
                let gate = action_head.forward(g, store, ha)?;
                let keep = g.one_minus(gate);
                g.mul(keep, h)?
            }
            Layers::CultdSir { lstm, head } => {
                let joined: Vec<f64> = batch.iter().flat_map(|s| s.joined_inputs()).collect();
                let steps = timestep_inputs(g, &joined, b, t, width)?;
                let h = lstm.forward(g, store, &steps)?;
                let constants = self.constants_input(g, batch)?;
                let features = g.concat_cols(&[h, constants])?;
                head.forward(g, store, features)?
            }
            Layers::Transformer {
                attention,
                norm1,
                ffn_hidden,
                ffn_out,
                norm2,
                head,
            } => {
                let mut x: Vec<f64> = batch.iter().flat_map(|s| s.joined_inputs()).collect();
                if self.hyper.positional_encoding {
                    let pe = sinusoidal_positions(t, width);
                    for row in x.chunks_mut(t * width) {
                        row.iter_mut().zip(&pe).for_each(|(v, p)| *v += p);
                    }
                }
                let x = g.input(b * t, width, x)?;
                let (attn, _) = attention.forward(g, store, x, t)?;
                let attn = g.dropout(attn, self.hyper.dropout)?;
                let res1 = g.add(x, attn)?;
                let h1 = norm1.forward(g, store, res1)?;
                let f = ffn_hidden.forward(g, store, h1)?;
                let f = ffn_out.forward(g, store, f)?;
                let f = g.dropout(f, self.hyper.dropout)?;
                let res2 = g.add(h1, f)?;
                let h2 = norm2.forward(g, store, res2)?;
                let pooled = match self.hyper.pooling {
                    Pooling::Last => g.gather_rows(h2, (0..b).map(|i| i * t + t - 1).collect())?,
                    Pooling::Mean => g.mean_row_groups(h2, t)?,
                };
                let constants = self.constants_input(g, batch)?;
                let features = g.concat_cols(&[pooled, constants])?;
                head.forward(g, store, features)?
            }
        };
        Ok(out)
    }

    fn constants_input(&self, g: &mut Graph, batch: &[&WindowSample]) -> Result<NodeId, ModelError> {
        let values: Vec<f64> = batch.iter().flat_map(|s| s.constants).collect();
        Ok(g.input(batch.len(), CULTURE_DIMS, values)?)
    }

    /// Eval-mode outputs, one vector per sample.
    pub fn predict(&self, samples: &[WindowSample]) -> Result<Vec<Vec<f64>>, ModelError> {
        let refs: Vec<&WindowSample> = samples.iter().collect();
        let mut g = Graph::eval();
        let out = self.forward(&mut g, &refs)?;
        Ok(g.value(out).chunks(self.io.outputs).map(<[f64]>::to_vec).collect())
    }

    /// SHA-256 over kind, hyperparameters and every parameter's name, shape
    /// and value bits.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.kind.name().as_bytes());
        h.update(serde_json::to_vec(&self.hyper).expect("hyper serializes"));
        for (name, t) in self.params.iter() {
            h.update((name.len() as u64).to_le_bytes());
            h.update(name.as_bytes());
            for &d in t.shape() {
                h.update((d as u64).to_le_bytes());
            }
            for v in t.values() {
                h.update(v.to_bits().to_le_bytes());
            }
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn save<W: Write>(&self, out: W) -> Result<(), ModelError> {
        let ckpt = Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            kind: self.kind,
            hyper: self.hyper.clone(),
            fingerprint: self.fingerprint(),
            params: self
                .params
                .iter()
                .map(|(name, t)| NamedTensor {
                    name: name.to_string(),
                    shape: t.shape().to_vec(),
                    values: t.values().to_vec(),
                })
                .collect(),
        };
        serde_json::to_writer_pretty(out, &ckpt).map_err(|e| ModelError::Checkpoint(e.to_string()))
    }

    pub fn load<R: Read>(input: R) -> Result<Self, ModelError> {
        let ckpt: Checkpoint = serde_json::from_reader(input).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
        if ckpt.format != CHECKPOINT_FORMAT || ckpt.version != CHECKPOINT_VERSION {
            return Err(ModelError::Checkpoint(format!(
                "unsupported checkpoint {} v{}",
                ckpt.format, ckpt.version
            )));
        }
        let mut model = Model::build(ckpt.kind, &ckpt.hyper, 0)?;
        if ckpt.params.len() != model.params.len() {
            return Err(ModelError::Checkpoint(format!(
                "expected {} parameter tensors, found {}",
                model.params.len(),
                ckpt.params.len()
            )));
        }
        for p in ckpt.params {
            let slot = model
                .params
                .get_mut(&p.name)
                .ok_or_else(|| ModelError::Checkpoint(format!("unexpected parameter `{}`", p.name)))?;
            if slot.shape() != p.shape.as_slice() {
                return Err(ModelError::Checkpoint(format!(
                    "parameter `{}` has shape {:?}, expected {:?}",
                    p.name,
                    p.shape,
                    slot.shape()
                )));
            }
            *slot = Tensor::new(p.shape, p.values)?;
        }
        let computed = model.fingerprint();
        if computed != ckpt.fingerprint {
            return Err(ModelError::Fingerprint {
                stored: ckpt.fingerprint,
                computed,
            });
        }
        Ok(model)
    }
}

impl Trainable for Model {
    type Sample = WindowSample;

    fn params(&self) -> &ParamStore {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    fn forward_batch(&self, g: &mut Graph, batch: &[&WindowSample]) -> Result<NodeId, NnError> {
        self.forward(g, batch).map_err(|e| match e {
            ModelError::Nn(e) => e,
            other => NnError::InvalidConfig(other.to_string()),
        })
    }
}

pub const CHECKPOINT_FORMAT: &str = "epiforecast-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct NamedTensor {
    name: String,
    shape: Vec<usize>,
    values: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Checkpoint {
    format: String,
    version: u32,
    kind: ModelKind,
    hyper: ModelHyper,
    fingerprint: String,
    params: Vec<NamedTensor>,
}
