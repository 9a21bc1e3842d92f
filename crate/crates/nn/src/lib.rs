//! Minimal deterministic tensor and reverse-mode autodiff engine.
//!
//! Everything runs in `f64` on a single thread. The layer set is exactly
//! what the forecasting models need: dense, LSTM, multi-head self-attention,
//! layer normalization and dropout, trained with L1 loss and Adam.

pub mod error;
#[cfg(any(test, feature = "gradcheck"))]
pub mod gradcheck;
pub mod graph;
pub mod layers;
pub mod optim;
pub mod tensor;
pub mod train;

pub use error::{NnError, Result};
pub use graph::{Activation, Graph, Mode, NodeId};
pub use layers::{Dense, LayerNorm, Lstm, MultiHeadAttention};
pub use optim::{AdamConfig, Initializer, ParamStore};
pub use tensor::Tensor;
pub use train::{
    evaluate_loss, train, EarlyStopping, EpochRecord, SplitMode, StopDecision, Supervised, TrainConfig, TrainError,
    TrainOutcome, Trainable, TrainingSet,
};
