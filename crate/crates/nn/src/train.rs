//! Mini-batch training with L1 loss, Adam, and early stopping on a held-out
//! validation split.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::NnError;
use crate::graph::{Graph, Mode, NodeId};
use crate::optim::{AdamConfig, ParamStore};

pub trait Supervised {
    fn target(&self) -> &[f64];
}

/// A model whose parameters live in one [`ParamStore`].
pub trait Trainable {
    type Sample: Supervised;

    fn params(&self) -> &ParamStore;
    fn params_mut(&mut self) -> &mut ParamStore;

    /// Builds the forward pass for a batch and returns the `[batch, outputs]`
    /// prediction node.
    fn forward_batch(&self, g: &mut Graph, batch: &[&Self::Sample]) -> Result<NodeId, NnError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitMode {
    /// Last fraction of each group's samples held out.
    Chronological,
    /// Seeded random hold-out over all samples.
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub max_epochs: usize,
    pub patience: usize,
    pub val_fraction: f64,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub split: SplitMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            max_epochs: 1000,
            patience: 20,
            val_fraction: 0.10,
            batch_size: 32,
            learning_rate: 0.001,
            seed: 0,
            split: SplitMode::Chronological,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), NnError> {
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return Err(NnError::InvalidConfig(format!(
                "val_fraction must be in (0, 1), got {}",
                self.val_fraction
            )));
        }
        if self.max_epochs == 0 || self.patience == 0 || self.batch_size == 0 {
            return Err(NnError::InvalidConfig(
                "max_epochs, patience and batch_size must be at least 1".into(),
            ));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(NnError::InvalidConfig(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            ..AdamConfig::default()
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainingSet<S> {
    pub train: Vec<S>,
    pub validation: Vec<S>,
}

fn holdout_count(len: usize, fraction: f64) -> usize {
    if len < 2 {
        return 0;
    }
    ((len as f64 * fraction).round() as usize).clamp(1, len - 1)
}

impl<S> TrainingSet<S> {
    /// Holds out the trailing `fraction` of every group (groups are ordered
    /// in time), so no validation window precedes a training window of the
    /// same group.
    pub fn chronological(groups: Vec<Vec<S>>, fraction: f64) -> Self {
        let mut train = Vec::new();
        let mut validation = Vec::new();
        for mut group in groups {
            let n_val = holdout_count(group.len(), fraction);
            let tail = group.split_off(group.len() - n_val);
            train.extend(group);
            validation.extend(tail);
        }
        Self { train, validation }
    }

    pub fn random(samples: Vec<S>, fraction: f64, seed: u64) -> Self {
        let n_val = holdout_count(samples.len(), fraction);
        let mut idx: Vec<usize> = (0..samples.len()).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let held: std::collections::BTreeSet<usize> = idx[..n_val].iter().copied().collect();
        let mut train = Vec::new();
        let mut validation = Vec::new();
        for (i, s) in samples.into_iter().enumerate() {
            if held.contains(&i) {
                validation.push(s);
            } else {
                train.push(s);
            }
        }
        Self { train, validation }
    }

    pub fn len(&self) -> usize {
        self.train.len() + self.validation.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainOutcome {
    pub history: Vec<EpochRecord>,
    /// Validation loss of the initial parameters, before any update.
    pub initial_val_loss: f64,
    /// Epoch whose parameters were restored; 0 means the initial ones.
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub stopped_early: bool,
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("training diverged at epoch {epoch}")]
    Diverged { epoch: usize, history: Vec<EpochRecord> },

    #[error("need at least one training and one validation sample (got {train} / {validation})")]
    NotEnoughSamples { train: usize, validation: usize },

    #[error(transparent)]
    Nn(#[from] NnError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopDecision {
    Improved,
    Wait,
    Stop,
}

/// Patience counter over validation losses; lower is better and only a
/// strict decrease counts as improvement.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: usize,
    best: f64,
    best_epoch: usize,
    wait: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize, initial_loss: f64) -> Self {
        Self {
            patience,
            best: initial_loss,
            best_epoch: 0,
            wait: 0,
        }
    }

    pub fn observe(&mut self, epoch: usize, loss: f64) -> StopDecision {
        if loss < self.best {
            self.best = loss;
            self.best_epoch = epoch;
            self.wait = 0;
            StopDecision::Improved
        } else {
            self.wait += 1;
            if self.wait >= self.patience {
                StopDecision::Stop
            } else {
                StopDecision::Wait
            }
        }
    }

    pub fn best(&self) -> (usize, f64) {
        (self.best_epoch, self.best)
    }
}

fn is_divergence(err: &NnError) -> bool {
    matches!(err, NnError::NonFinite { .. } | NnError::NonFiniteGradient { .. })
}

/// Mean absolute error over `samples` in eval mode. Batching is fixed by
/// `batch_size`, so the value is reproducible bit for bit.
pub fn evaluate_loss<M: Trainable>(model: &M, samples: &[M::Sample], batch_size: usize) -> Result<f64, NnError> {
    let mut total = 0.0;
    let mut count = 0usize;
    for chunk in samples.chunks(batch_size.max(1)) {
        let refs: Vec<&M::Sample> = chunk.iter().collect();
        let mut g = Graph::eval();
        let out = model.forward_batch(&mut g, &refs)?;
        let target: Vec<f64> = chunk.iter().flat_map(|s| s.target().iter().copied()).collect();
        let loss = g.l1_loss(out, &target)?;
        total += g.value(loss)[0] * target.len() as f64;
        count += target.len();
    }
    Ok(if count == 0 { 0.0 } else { total / count as f64 })
}

/// Trains `model` in place and leaves it holding the best-validation
/// parameters.
pub fn train<M: Trainable>(model: &mut M, data: &TrainingSet<M::Sample>, cfg: &TrainConfig) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    if data.train.is_empty() || data.validation.is_empty() {
        return Err(TrainError::NotEnoughSamples {
            train: data.train.len(),
            validation: data.validation.len(),
        });
    }
    let adam = cfg.adam();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let initial_val_loss = evaluate_loss(model, &data.validation, cfg.batch_size)?;
    let mut stopper = EarlyStopping::new(cfg.patience, initial_val_loss);
    let mut best_params = model.params().clone();
    let mut history = Vec::new();
    let mut stopped_early = false;

    let mut order: Vec<usize> = (0..data.train.len()).collect();
    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&M::Sample> = chunk.iter().map(|&i| &data.train[i]).collect();
            let mut g = Graph::new(Mode::Train, rng.random());
            let step = (|| {
                let out = model.forward_batch(&mut g, &batch)?;
                let target: Vec<f64> = batch.iter().flat_map(|s| s.target().iter().copied()).collect();
                let loss = g.l1_loss(out, &target)?;
                let value = g.value(loss)[0];
                if !value.is_finite() {
                    return Err(NnError::NonFinite { op: "l1_loss" });
                }
                g.backward(loss)?;
                Ok(value)
            })();
            let value = match step {
                Ok(v) => v,
                Err(e) if is_divergence(&e) => return Err(TrainError::Diverged { epoch, history }),
                Err(e) => return Err(e.into()),
            };
            match model.params_mut().adam_step(&g.param_grads(), &adam) {
                Ok(()) => {}
                Err(e) if is_divergence(&e) => return Err(TrainError::Diverged { epoch, history }),
                Err(e) => return Err(e.into()),
            }
            loss_sum += value * batch.len() as f64;
        }
        let train_loss = loss_sum / data.train.len() as f64;
        let val_loss = match evaluate_loss(model, &data.validation, cfg.batch_size) {
            Ok(v) if v.is_finite() => v,
            Ok(_) => return Err(TrainError::Diverged { epoch, history }),
            Err(e) if is_divergence(&e) => return Err(TrainError::Diverged { epoch, history }),
            Err(e) => return Err(e.into()),
        };
        history.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
        });
        match stopper.observe(epoch, val_loss) {
            StopDecision::Improved => best_params = model.params().clone(),
            StopDecision::Wait => {}
            StopDecision::Stop => {
                stopped_early = true;
                break;
            }
        }
    }

    model.params_mut().copy_values_from(&best_params)?;
    let (best_epoch, best_val_loss) = stopper.best();
    Ok(TrainOutcome {
        history,
        initial_val_loss,
        best_epoch,
        best_val_loss,
        stopped_early,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn never_stops_while_improving() {
        let mut s = EarlyStopping::new(20, f64::INFINITY);
        for epoch in 1..=1000 {
            assert_eq!(s.observe(epoch, 1.0 / epoch as f64), StopDecision::Improved);
        }
        assert_eq!(s.best().0, 1000);
    }

    #[test]
    fn stops_patience_epochs_after_minimum() {
        let k = 37;
        let mut s = EarlyStopping::new(20, f64::INFINITY);
        let mut stopped_at = None;
        for epoch in 1..=1000 {
            let loss = if epoch <= k { 1.0 / epoch as f64 } else { 1.0 };
            if s.observe(epoch, loss) == StopDecision::Stop {
                stopped_at = Some(epoch);
                break;
            }
        }
        assert_eq!(stopped_at, Some(k + 20));
        assert_eq!(s.best().0, k);
    }

    #[test]
    fn equal_loss_is_not_improvement() {
        let mut s = EarlyStopping::new(2, 1.0);
        assert_eq!(s.observe(1, 1.0), StopDecision::Wait);
        assert_eq!(s.observe(2, 1.0), StopDecision::Stop);
    }

    #[test]
    fn chronological_split_holds_out_tail_of_each_group() {
        let groups = vec![(0..10).collect::<Vec<_>>(), (100..120).collect()];
        let set = TrainingSet::chronological(groups, 0.1);
        assert_eq!(set.validation, vec![9, 118, 119]);
        assert_eq!(set.train.len(), 27);
    }

    #[test]
    fn random_split_is_seeded() {
        let a = TrainingSet::random((0..50).collect(), 0.1, 3);
        let b = TrainingSet::random((0..50).collect(), 0.1, 3);
        assert_eq!(a.validation, b.validation);
        assert_eq!(a.validation.len(), 5);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = TrainConfig {
            val_fraction: 1.0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = TrainConfig {
            batch_size: 0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
