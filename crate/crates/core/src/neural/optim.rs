use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ParamStore;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OptimizerVariant {
    /// Plain SGD on the batch-mean gradient.
    Sgd,
    /// Adaptive moments (Adam) with bias correction.
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub variant: OptimizerVariant,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            epochs: 20,
            batch_size: 64,
            seed: 0,
            variant: OptimizerVariant::Adam,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning_rate must be > 0, got {}", self.learning_rate)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config("beta1 and beta2 must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

/// Item visiting order for one epoch; a pure function of `(seed, epoch)`.
pub fn batch_order(n: usize, seed: u64, epoch: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    order
}

#[derive(Debug, Clone)]
pub struct Optimizer {
    config: OptimizerConfig,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
    steps: u64,
}

impl Optimizer {
    pub fn new(config: &OptimizerConfig, params: &ParamStore) -> Self {
        let zeros = || params.tensors().iter().map(|t| vec![0.0; t.len()]).collect();
        Self {
            config: config.clone(),
            first: zeros(),
            second: zeros(),
            steps: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Apply one update from the accumulated gradients of a batch of `batch_len` items.
    pub fn step(&mut self, params: &mut ParamStore, batch_len: usize) {
        self.steps += 1;
        let cfg = &self.config;
        let lr = cfg.learning_rate;
        match cfg.variant {
            OptimizerVariant::Sgd => {
                let scale = lr / batch_len.max(1) as f64;
                for t in params.tensors_mut().iter_mut().filter(|t| t.trainable) {
                    for (w, g) in t.data.iter_mut().zip(&t.grad) {
                        *w -= scale * g;
                    }
                }
            }
            OptimizerVariant::Adam => {
                let t_f = self.steps as i32;
                let c1 = 1.0 - cfg.beta1.powi(t_f);
                let c2 = 1.0 - cfg.beta2.powi(t_f);
                for (i, t) in params.tensors_mut().iter_mut().enumerate() {
                    if !t.trainable {
                        continue;
                    }
                    let (m, v) = (&mut self.first[i], &mut self.second[i]);
                    for j in 0..t.data.len() {
                        let g = t.grad[j];
                        m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g;
                        v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g * g;
                        let m_hat = m[j] / c1;
                        let v_hat = v[j] / c2;
                        t.data[j] -= lr * m_hat / (v_hat.sqrt() + cfg.epsilon);
                    }
                }
            }
        }
    }
}
