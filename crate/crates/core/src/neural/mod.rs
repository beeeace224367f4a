//! Minimal differentiable machinery for small heads over frozen embeddings:
//! named parameter tensors with gradient buffers, activations, an optimizer,
//! a finite-difference gradient checker and a checkpoint format.
//!
//! Every model in the crate hand-codes its own backward pass; there is no
//! general autodiff graph.

pub mod checkpoint;
pub mod gradcheck;
pub mod optim;
pub mod train;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC};
pub use gradcheck::grad_check;
pub use optim::{batch_order, Optimizer, OptimizerConfig, OptimizerVariant};
pub use train::{fit, TrainReport};

/// Probabilities fed to a cross-entropy are clamped to this band.
pub const PROB_CLAMP: f64 = 1e-7;

pub const BOTTLENECK_WEIGHT: &str = "bottleneck.weight";
pub const BOTTLENECK_BIAS: &str = "bottleneck.bias";

/// A dense row-major matrix with a gradient buffer of the same shape.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
    pub grad: Vec<f64>,
    pub trainable: bool,
}

impl Tensor {
    pub fn zeros(name: impl Into<String>, rows: usize, cols: usize) -> Self {
        Self {
            name: name.into(),
            rows,
            cols,
            data: vec![0.0; rows * cols],
            grad: vec![0.0; rows * cols],
            trainable: true,
        }
    }

    pub fn from_data(name: impl Into<String>, rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Data(format!(
                "tensor data has {} values, shape is {rows}x{cols}",
                data.len()
            )));
        }
        Ok(Self {
            name: name.into(),
            rows,
            cols,
            grad: vec![0.0; data.len()],
            data,
            trainable: true,
        })
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

/// Initializer for a freshly added tensor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Init {
    Zeros,
    Constant(f64),
    /// U(-scale/√cols, scale/√cols); `cols` is the fan-in.
    FanInUniform { scale: f64 },
}

/// Ordered collection of named tensors. Models address tensors by the index
/// returned from [`ParamStore::add`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    tensors: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add<R: Rng>(&mut self, name: &str, rows: usize, cols: usize, init: Init, rng: &mut R) -> usize {
        let mut t = Tensor::zeros(name, rows, cols);
        match init {
            Init::Zeros => {}
            Init::Constant(c) => t.data.fill(c),
            Init::FanInUniform { scale } => {
                let bound = scale / (cols.max(1) as f64).sqrt();
                for v in &mut t.data {
                    *v = rng.random_range(-bound..=bound);
                }
            }
        }
        self.push(t)
    }

    pub fn push(&mut self, tensor: Tensor) -> usize {
        assert!(self.index_of(&tensor.name).is_none(), "duplicate tensor {}", tensor.name);
        self.tensors.push(tensor);
        self.tensors.len() - 1
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.tensors.iter().position(|t| t.name == name)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn tensor(&self, idx: usize) -> &Tensor {
        &self.tensors[idx]
    }

    pub fn tensor_mut(&mut self, idx: usize) -> &mut Tensor {
        &mut self.tensors[idx]
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn zero_grad(&mut self) {
        for t in &mut self.tensors {
            t.grad.fill(0.0);
        }
    }

    pub fn num_params(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Flat coordinate `i` across all tensors in insertion order.
    pub fn locate(&self, mut i: usize) -> (usize, usize) {
        for (t, tensor) in self.tensors.iter().enumerate() {
            if i < tensor.len() {
                return (t, i);
            }
            i -= tensor.len();
        }
        panic!("parameter coordinate out of range");
    }

    /// Same names and shapes as `other`.
    pub fn same_layout(&self, other: &ParamStore) -> bool {
        self.tensors.len() == other.tensors.len()
            && self
                .tensors
                .iter()
                .zip(&other.tensors)
                .all(|(a, b)| a.name == b.name && a.rows == b.rows && a.cols == b.cols)
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

/// ln σ(x), stable for large |x|.
pub fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - m).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|&z| (z - m).exp()).sum::<f64>().ln();
    logits.iter().map(|&z| z - lse).collect()
}

/// Gradient w.r.t. logits given the gradient w.r.t. softmax outputs.
pub fn softmax_backward(probs: &[f64], grad_probs: &[f64]) -> Vec<f64> {
    let dot: f64 = probs.iter().zip(grad_probs).map(|(p, g)| p * g).sum();
    probs.iter().zip(grad_probs).map(|(p, g)| p * (g - dot)).collect()
}

/// `W·x + b` for `W: out×in`, `b: 1×out`.
pub fn affine(w: &Tensor, b: &Tensor, x: &[f64]) -> Vec<f64> {
    (0..w.rows)
        .map(|r| b.data[r] + w.row(r).iter().zip(x).map(|(a, v)| a * v).sum::<f64>())
        .collect()
}

/// Accumulate the gradients of an affine map; returns the gradient w.r.t. `x`
/// when `want_input_grad` is set.
pub fn affine_backward(params: &mut ParamStore, w: usize, b: usize, x: &[f64], grad_out: &[f64], want_input_grad: bool) -> Option<Vec<f64>> {
    let input_grad = want_input_grad.then(|| {
        let wt = params.tensor(w);
        let mut gx = vec![0.0; wt.cols];
        for (r, &g) in grad_out.iter().enumerate() {
            for (gxi, &a) in gx.iter_mut().zip(wt.row(r)) {
                *gxi += g * a;
            }
        }
        gx
    });
    let wt = params.tensor_mut(w);
    if wt.trainable {
        let cols = wt.cols;
        for (r, &g) in grad_out.iter().enumerate() {
            for (gw, &v) in wt.grad[r * cols..(r + 1) * cols].iter_mut().zip(x) {
                *gw += g * v;
            }
        }
    }
    let bt = params.tensor_mut(b);
    if bt.trainable {
        for (gb, &g) in bt.grad.iter_mut().zip(grad_out) {
            *gb += g;
        }
    }
    input_grad
}

/// Bottleneck tensors: `weight: C×D`, `bias: 1×C`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bottleneck {
    pub weight: usize,
    pub bias: usize,
}

impl Bottleneck {
    pub fn add<R: Rng>(params: &mut ParamStore, classes: usize, dim: usize, rng: &mut R) -> Self {
        let weight = params.add(BOTTLENECK_WEIGHT, classes, dim, Init::FanInUniform { scale: 1.0 }, rng);
        let bias = params.add(BOTTLENECK_BIAS, 1, classes, Init::Zeros, rng);
        Self { weight, bias }
    }

    pub fn find(params: &ParamStore) -> Result<Self> {
        let weight = params
            .index_of(BOTTLENECK_WEIGHT)
            .ok_or_else(|| Error::Data("missing bottleneck.weight".into()))?;
        let bias = params
            .index_of(BOTTLENECK_BIAS)
            .ok_or_else(|| Error::Data("missing bottleneck.bias".into()))?;
        Ok(Self { weight, bias })
    }

    pub fn logits(&self, params: &ParamStore, e: &[f64]) -> Vec<f64> {
        affine(params.tensor(self.weight), params.tensor(self.bias), e)
    }

    /// Backpropagate `grad_s` (gradient w.r.t. the softmax output) into the bottleneck.
    pub fn backward(&self, params: &mut ParamStore, e: &[f64], s: &[f64], grad_s: &[f64]) {
        let gz = softmax_backward(s, grad_s);
        affine_backward(params, self.weight, self.bias, e, &gz, false);
    }
}

/// `s = softmax(W·e + b)` from a store holding `bottleneck.weight` and `bottleneck.bias`.
pub fn bottleneck_forward(params: &ParamStore, e: &[f64]) -> Result<Vec<f64>> {
    let b = Bottleneck::find(params)?;
    let w = params.tensor(b.weight);
    let bias = params.tensor(b.bias);
    if w.cols != e.len() || bias.cols != w.rows || bias.rows != 1 {
        return Err(Error::Data(format!(
            "bottleneck is {}x{} with bias 1x{} but the embedding has dimension {}",
            w.rows,
            w.cols,
            bias.cols,
            e.len()
        )));
    }
    Ok(softmax(&b.logits(params, e)))
}
