//! Named parameters with Adam moment buffers.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{NnError, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Slot {
    name: String,
    value: Tensor,
    m: Vec<f64>,
    v: Vec<f64>,
}

/// Ordered collection of named parameters. Iteration order is insertion
/// order, which keeps checkpoints and updates deterministic.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamStore {
    slots: Vec<Slot>,
    step: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, value: Tensor) {
        let n = value.len();
        if let Some(slot) = self.slots.iter_mut().find(|s| s.name == name) {
            slot.value = value;
            slot.m = vec![0.0; n];
            slot.v = vec![0.0; n];
            return;
        }
        self.slots.push(Slot {
            name: name.to_string(),
            value,
            m: vec![0.0; n],
            v: vec![0.0; n],
        });
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.slots.iter().find(|s| s.name == name).map(|s| &s.value)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.slots.iter_mut().find(|s| s.name == name).map(|s| &mut s.value)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.slots.iter().map(|s| s.name.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.slots.iter().map(|s| (s.name.as_str(), &s.value))
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn count(&self) -> usize {
        self.slots.iter().map(|s| s.value.len()).sum()
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn moments(&self, name: &str) -> Option<(&[f64], &[f64])> {
        self.slots
            .iter()
            .find(|s| s.name == name)
            .map(|s| (s.m.as_slice(), s.v.as_slice()))
    }

    /// Sets every parameter value to zero (moments untouched).
    pub fn zero_values(&mut self) {
        for s in &mut self.slots {
            s.value.values_mut().iter_mut().for_each(|v| *v = 0.0);
        }
    }

    /// Copies parameter values from `other`, which must have the same layout.
    pub fn copy_values_from(&mut self, other: &ParamStore) -> Result<()> {
        if self.slots.len() != other.slots.len() {
            return Err(NnError::InvalidConfig("parameter stores differ in length".into()));
        }
        for (dst, src) in self.slots.iter_mut().zip(&other.slots) {
            if dst.name != src.name || dst.value.shape() != src.value.shape() {
                return Err(NnError::ShapeMismatch {
                    op: "copy_values_from",
                    left: dst.value.shape().to_vec(),
                    right: src.value.shape().to_vec(),
                });
            }
            dst.value.values_mut().copy_from_slice(src.value.values());
        }
        Ok(())
    }

    /// One Adam update. `grads` pairs parameter names with gradients; names
    /// absent from `grads` are treated as having zero gradient.
    pub fn adam_step(&mut self, grads: &[(String, Vec<f64>)], cfg: &AdamConfig) -> Result<()> {
        for (name, g) in grads {
            let slot = self
                .slots
                .iter()
                .find(|s| &s.name == name)
                .ok_or_else(|| NnError::UnknownParam(name.clone()))?;
            if g.len() != slot.value.len() {
                return Err(NnError::BadLength {
                    shape: slot.value.shape().to_vec(),
                    len: g.len(),
                });
            }
            if g.iter().any(|x| !x.is_finite()) {
                return Err(NnError::NonFiniteGradient { name: name.clone() });
            }
        }

        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - cfg.beta1.powi(t);
        let bc2 = 1.0 - cfg.beta2.powi(t);
        for slot in &mut self.slots {
            let grad = grads.iter().find(|(n, _)| *n == slot.name).map(|(_, g)| g.as_slice());
            let values = slot.value.values_mut();
            for i in 0..values.len() {
                let gi = grad.map_or(0.0, |g| g[i]);
                slot.m[i] = cfg.beta1 * slot.m[i] + (1.0 - cfg.beta1) * gi;
                slot.v[i] = cfg.beta2 * slot.v[i] + (1.0 - cfg.beta2) * gi * gi;
                let m_hat = slot.m[i] / bc1;
                let v_hat = slot.v[i] / bc2;
                values[i] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.eps);
            }
        }
        Ok(())
    }
}

/// Seeded uniform initializer: draws from `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
#[derive(Debug)]
pub struct Initializer {
    rng: ChaCha8Rng,
}

impl Initializer {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn uniform(&mut self, shape: Vec<usize>, fan_in: usize) -> Tensor {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let n: usize = shape.iter().product();
        let values = (0..n).map(|_| self.rng.random_range(-bound..=bound)).collect();
        Tensor::new(shape, values).expect("length computed from shape")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_store(x: f64) -> ParamStore {
        let mut s = ParamStore::new();
        s.insert("x", Tensor::new(vec![1], vec![x]).unwrap());
        s
    }

    #[test]
    fn zero_gradient_leaves_params_and_decays_moments() {
        let mut s = scalar_store(1.5);
        let cfg = AdamConfig::default();
        s.adam_step(&[("x".into(), vec![0.4])], &cfg).unwrap();
        let before = s.get("x").unwrap().values()[0];
        let (m0, v0) = s.moments("x").map(|(m, v)| (m[0], v[0])).unwrap();
        s.adam_step(&[("x".into(), vec![0.0])], &cfg).unwrap();
        let (m1, v1) = s.moments("x").map(|(m, v)| (m[0], v[0])).unwrap();
        assert!((m1 - 0.9 * m0).abs() < 1e-15);
        assert!((v1 - 0.999 * v0).abs() < 1e-15);
        // momentum still moves the value; with no history at all it would not
        let mut fresh = scalar_store(1.5);
        fresh.adam_step(&[("x".into(), vec![0.0])], &cfg).unwrap();
        assert_eq!(fresh.get("x").unwrap().values()[0], 1.5);
        assert_ne!(s.get("x").unwrap().values()[0], before);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        // m_hat = g, v_hat = g^2, so the step is lr * |g| / (|g| + eps).
        for g in [1e-3, 0.5, -7.0] {
            let mut s = scalar_store(0.0);
            let cfg = AdamConfig::default();
            s.adam_step(&[("x".into(), vec![g])], &cfg).unwrap();
            let delta = s.get("x").unwrap().values()[0];
            let expected = cfg.learning_rate * g.abs() / (g.abs() + cfg.eps);
            assert!((delta.abs() - expected).abs() < 1e-15, "g={g}");
            assert!((delta.abs() - cfg.learning_rate).abs() < cfg.learning_rate * 1e-4);
            assert_eq!(delta.signum(), -g.signum());
        }
    }

    #[test]
    fn opposite_steps_hand_trace() {
        // Step 1 (g=1): m_hat=1, v_hat=1, x = -lr.
        // Step 2 (g=-1): m=-0.01, m_hat=-0.01/0.19; v=0.001999, v_hat=1.
        // Bias correction makes the second step only ~5% of the first, so the
        // pair does not cancel: x ends near -0.947 lr.
        let cfg = AdamConfig::default();
        let mut s = scalar_store(0.0);
        s.adam_step(&[("x".into(), vec![1.0])], &cfg).unwrap();
        s.adam_step(&[("x".into(), vec![-1.0])], &cfg).unwrap();
        let x = s.get("x").unwrap().values()[0];
        let m_hat2 = (0.9 * 0.1 - 0.1) / (1.0 - 0.81);
        let v_hat2 = (0.999 * 0.001 + 0.001) / (1.0 - 0.999f64.powi(2));
        let expected = -cfg.learning_rate * (1.0 / (1.0 + 1e-8)) - cfg.learning_rate * m_hat2 / (v_hat2.sqrt() + 1e-8);
        assert!((x - expected).abs() < 1e-15);
        assert!((x / cfg.learning_rate + 0.947_368).abs() < 1e-5);
    }

    #[test]
    fn nan_gradient_is_rejected() {
        let mut s = scalar_store(0.0);
        let err = s.adam_step(&[("x".into(), vec![f64::NAN])], &AdamConfig::default());
        assert!(matches!(err, Err(NnError::NonFiniteGradient { .. })));
        assert_eq!(s.step(), 0);
    }

    #[test]
    fn initializer_is_bounded_and_seeded() {
        let a = Initializer::new(7).uniform(vec![10, 10], 25);
        let b = Initializer::new(7).uniform(vec![10, 10], 25);
        assert_eq!(a, b);
        assert!(a.values().iter().all(|v| v.abs() <= 0.2));
    }
}
