//! Multi-class SkillAggregation with per-judge confusion estimates.
//!
//! Each judge k gets a row-stochastic `C×C` matrix `Ĉ_k` (row-softmax over
//! logits, shared or per-item). A judge's vote distribution is predicted as
//! `s·Ĉ_k`, and the regularizer penalizes every row's distance to the last row
//! on the first `C-1` columns. The same network with frozen identity
//! transforms is the backbone of the neural baselines.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{argmax, GroupEstimates, JudgmentDataset};
use crate::error::{Error, Result};
use crate::neural::{
    affine, affine_backward, fit, log_softmax, softmax, softmax_backward, Bottleneck, Init, OptimizerConfig,
    ParamStore, TrainReport, PROB_CLAMP,
};
use crate::skill_agg::{dev_labels, fraction_correct, SkillInput, SkillMode};

pub const METHOD_NAME: &str = "skillagg-multiclass";

const CONFUSION_LOGITS: &str = "confusion.logits";
const CONFUSION_WEIGHT: &str = "confusion.weight";
const CONFUSION_BIAS: &str = "confusion.bias";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MulticlassConfig {
    pub mode: SkillMode,
    pub skill_input: SkillInput,
    pub lambda: f64,
    /// Initial diagonal entry of every confusion estimate; the remaining mass
    /// is spread evenly over the other columns.
    pub init_diagonal: f64,
}

impl Default for MulticlassConfig {
    fn default() -> Self {
        Self {
            mode: SkillMode::Task,
            skill_input: SkillInput::Embedding,
            lambda: 0.1,
            init_diagonal: 0.7,
        }
    }
}

impl MulticlassConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if !(self.init_diagonal > 0.0 && self.init_diagonal < 1.0) {
            return Err(Error::Config(format!("init_diagonal must lie in (0, 1), got {}", self.init_diagonal)));
        }
        Ok(())
    }
}

/// Diagonal logit giving `diagonal` on the diagonal after row-softmax with
/// zero off-diagonal logits.
pub fn diagonal_logit(diagonal: f64, classes: usize) -> f64 {
    (diagonal * (classes as f64 - 1.0) / (1.0 - diagonal)).ln()
}

/// A row-stochastic `C×C` matrix, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Confusion {
    pub classes: usize,
    pub data: Vec<f64>,
}

impl Confusion {
    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        Self {
            classes: rows.len(),
            data: rows.concat(),
        }
    }

    pub fn identity(classes: usize) -> Self {
        let mut data = vec![0.0; classes * classes];
        for c in 0..classes {
            data[c * classes + c] = 1.0;
        }
        Self { classes, data }
    }

    pub fn uniform(classes: usize) -> Self {
        Self {
            classes,
            data: vec![1.0 / classes as f64; classes * classes],
        }
    }

    /// Row-softmax of `C×C` logits.
    pub fn from_logits(classes: usize, logits: &[f64]) -> Self {
        Self {
            classes,
            data: logits.chunks(classes).flat_map(softmax).collect(),
        }
    }

    pub fn get(&self, c: usize, b: usize) -> f64 {
        self.data[c * self.classes + b]
    }

    pub fn row(&self, c: usize) -> &[f64] {
        &self.data[c * self.classes..(c + 1) * self.classes]
    }

    /// `s·Ĉ`.
    pub fn mix(&self, s: &[f64]) -> Vec<f64> {
        let c = self.classes;
        (0..c).map(|b| (0..c).map(|r| s[r] * self.get(r, b)).sum()).collect()
    }

    /// `Σ_{b<C-1} Σ_{c<C-1} (Ĉ[c,b] - Ĉ[C-1,b])²`.
    pub fn regularizer(&self) -> f64 {
        let last = self.classes - 1;
        let mut total = 0.0;
        for b in 0..last {
            for c in 0..last {
                total += (self.get(c, b) - self.get(last, b)).powi(2);
            }
        }
        total
    }
}

/// Per-item loss from explicit parts; `targets` holds one C-vector per judge.
pub fn item_loss_from_parts(s: &[f64], confusions: &[Confusion], targets: &[Vec<f64>], lambda: f64) -> f64 {
    confusions
        .iter()
        .zip(targets)
        .map(|(conf, t)| {
            let ce: f64 = conf
                .mix(s)
                .iter()
                .zip(t)
                .map(|(p, t)| -t * p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP).ln())
                .sum();
            ce + lambda * conf.regularizer()
        })
        .sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MulticlassPosterior {
    pub class: usize,
    /// Unnormalized log posterior per class.
    pub log_scores: Vec<f64>,
    /// Set when every class had zero posterior mass and argmax s was used.
    pub fallback: bool,
}

impl MulticlassPosterior {
    fn decide(log_scores: Vec<f64>, s: &[f64]) -> Self {
        if log_scores.iter().all(|v| *v == f64::NEG_INFINITY) {
            return Self {
                class: argmax(s),
                log_scores,
                fallback: true,
            };
        }
        Self {
            class: argmax(&log_scores),
            log_scores,
            fallback: false,
        }
    }

    /// Normalized posterior probabilities.
    pub fn probabilities(&self) -> Vec<f64> {
        if self.fallback {
            return vec![f64::NAN; self.log_scores.len()];
        }
        softmax(&self.log_scores)
    }
}

/// `argmax_c ln s_c + Σ_k ln Ĉ_k[c, b_k]` from explicit probabilities.
pub fn posterior_from_parts(s: &[f64], confusions: &[Confusion], votes: &[usize]) -> MulticlassPosterior {
    let log_scores = (0..s.len())
        .map(|c| s[c].ln() + confusions.iter().zip(votes).map(|(m, &b)| m.get(c, b).ln()).sum::<f64>())
        .collect();
    MulticlassPosterior::decide(log_scores, s)
}

#[derive(Debug, Clone, PartialEq)]
enum ConfusionHeads {
    /// Frozen identity transforms: every judge predicts `s` itself.
    Identity,
    Task { logits: usize },
    Context { weight: usize, bias: usize },
}

/// Bottleneck over C classes plus per-judge confusion heads.
#[derive(Debug, Clone, PartialEq)]
pub struct MulticlassSkillModel {
    config: MulticlassConfig,
    num_judges: usize,
    num_classes: usize,
    dim: usize,
    params: ParamStore,
    bottleneck: Bottleneck,
    heads: ConfusionHeads,
}

impl MulticlassSkillModel {
    pub fn new(num_judges: usize, num_classes: usize, dim: usize, config: MulticlassConfig, seed: u64) -> Result<Self> {
        Self::build(num_judges, num_classes, dim, config, seed, false)
    }

    /// Model whose judge transforms are fixed to the identity.
    pub(crate) fn identity(num_judges: usize, num_classes: usize, dim: usize, seed: u64) -> Result<Self> {
        let config = MulticlassConfig {
            lambda: 0.0,
            ..Default::default()
        };
        Self::build(num_judges, num_classes, dim, config, seed, true)
    }

    fn build(
        num_judges: usize,
        num_classes: usize,
        dim: usize,
        config: MulticlassConfig,
        seed: u64,
        identity: bool,
    ) -> Result<Self> {
        config.validate()?;
        if num_judges == 0 || dim == 0 || num_classes < 2 {
            return Err(Error::Config(
                "model needs at least one judge, two classes and a non-empty embedding".into(),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let bottleneck = Bottleneck::add(&mut params, num_classes, dim, &mut rng);
        let c = num_classes;
        let diag = diagonal_logit(config.init_diagonal, c);
        let pattern: Vec<f64> = (0..num_judges * c * c)
            .map(|i| if (i % (c * c)).is_multiple_of(c + 1) { diag } else { 0.0 })
            .collect();
        let heads = if identity {
            ConfusionHeads::Identity
        } else {
            match config.mode {
                SkillMode::Task => {
                    let logits = params.add(CONFUSION_LOGITS, num_judges * c, c, Init::Zeros, &mut rng);
                    params.tensor_mut(logits).data = pattern;
                    ConfusionHeads::Task { logits }
                }
                SkillMode::Context => {
                    let input = match config.skill_input {
                        SkillInput::Embedding => dim,
                        SkillInput::Bottleneck => c,
                    };
                    let weight = params.add(CONFUSION_WEIGHT, num_judges * c * c, input, Init::Zeros, &mut rng);
                    let bias = params.add(CONFUSION_BIAS, 1, num_judges * c * c, Init::Zeros, &mut rng);
                    params.tensor_mut(bias).data = pattern;
                    ConfusionHeads::Context { weight, bias }
                }
            }
        };
        Ok(Self {
            config,
            num_judges,
            num_classes,
            dim,
            params,
            bottleneck,
            heads,
        })
    }

    pub fn config(&self) -> &MulticlassConfig {
        &self.config
    }

    pub fn num_judges(&self) -> usize {
        self.num_judges
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn is_identity(&self) -> bool {
        self.heads == ConfusionHeads::Identity
    }

    fn check_dim(&self, e: &[f64]) -> Result<()> {
        if e.len() == self.dim {
            Ok(())
        } else {
            Err(Error::Data(format!("embedding has dimension {}, model expects {}", e.len(), self.dim)))
        }
    }

    pub(crate) fn check_dataset(&self, ds: &JudgmentDataset) -> Result<()> {
        if ds.num_classes() != self.num_classes {
            return Err(Error::Data(format!(
                "dataset has {} classes, model has {}",
                ds.num_classes(),
                self.num_classes
            )));
        }
        if ds.num_judges() != self.num_judges {
            return Err(Error::Data(format!(
                "dataset has {} judges, model has {}",
                ds.num_judges(),
                self.num_judges
            )));
        }
        match ds.embedding_dim() {
            Some(d) if d == self.dim => Ok(()),
            Some(d) => Err(Error::Data(format!("embeddings have dimension {d}, model expects {}", self.dim))),
            None if ds.is_empty() => Ok(()),
            None => Err(Error::Data("this method requires embeddings".into())),
        }
    }

    fn embedding<'a>(&self, ds: &'a JudgmentDataset, n: usize) -> Result<&'a [f64]> {
        let item = &ds.items()[n];
        item.embedding()
            .ok_or_else(|| Error::Data(format!("item {:?} has no embedding", item.id())))
    }

    /// Bottleneck logits, softmax output, head input and confusion logits.
    fn forward(&self, e: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>) {
        let z = self.bottleneck.logits(&self.params, e);
        let s = softmax(&z);
        let (x, logits) = match &self.heads {
            ConfusionHeads::Identity => (Vec::new(), Vec::new()),
            ConfusionHeads::Task { logits } => (Vec::new(), self.params.tensor(*logits).data.clone()),
            ConfusionHeads::Context { weight, bias } => {
                let x = match self.config.skill_input {
                    SkillInput::Embedding => e.to_vec(),
                    SkillInput::Bottleneck => s.clone(),
                };
                let l = affine(self.params.tensor(*weight), self.params.tensor(*bias), &x);
                (x, l)
            }
        };
        (z, s, x, logits)
    }

    fn confusions_from_logits(&self, logits: &[f64]) -> Vec<Confusion> {
        let c = self.num_classes;
        match self.heads {
            ConfusionHeads::Identity => vec![Confusion::identity(c); self.num_judges],
            _ => logits.chunks(c * c).map(|l| Confusion::from_logits(c, l)).collect(),
        }
    }

    pub fn bottleneck(&self, e: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(e)?;
        Ok(softmax(&self.bottleneck.logits(&self.params, e)))
    }

    pub fn confusions(&self, e: &[f64]) -> Result<Vec<Confusion>> {
        self.check_dim(e)?;
        let (_, _, _, logits) = self.forward(e);
        Ok(self.confusions_from_logits(&logits))
    }

    /// Predicted vote distribution of judge `k`: `s·Ĉ_k`.
    pub fn predict(&self, e: &[f64], k: usize) -> Result<Vec<f64>> {
        if k >= self.num_judges {
            return Err(Error::Data(format!("judge {k} out of range 0..{}", self.num_judges)));
        }
        let s = self.bottleneck(e)?;
        Ok(self.confusions(e)?[k].mix(&s))
    }

    fn item_loss(&mut self, ds: &JudgmentDataset, n: usize, grad: bool) -> Result<f64> {
        let e = self.embedding(ds, n)?;
        let (_, s, x, logits) = self.forward(e);
        let confusions = self.confusions_from_logits(&logits);
        let c = self.num_classes;
        let last = c - 1;
        let lambda = self.config.lambda;
        let mut grad_s = vec![0.0; c];
        let mut grad_logits = vec![0.0; logits.len()];
        let mut loss = 0.0;
        for (k, conf) in confusions.iter().enumerate() {
            let t = ds.judgment_vector(n, k);
            let p = conf.mix(&s);
            let mut term = 0.0;
            let mut gp = vec![0.0; c];
            for b in 0..c {
                let pc = p[b].clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
                if t[b] != 0.0 {
                    term -= t[b] * pc.ln();
                    if pc == p[b] {
                        gp[b] = -t[b] / p[b];
                    }
                }
            }
            let reg = if self.is_identity() { 0.0 } else { conf.regularizer() };
            term += lambda * reg;
            if !term.is_finite() {
                let id = ds.items()[n].id();
                return Err(Error::Numeric(format!("non-finite loss at item {id:?}, judge {k}")));
            }
            loss += term;
            if !grad {
                continue;
            }
            for r in 0..c {
                grad_s[r] += (0..c).map(|b| gp[b] * conf.get(r, b)).sum::<f64>();
            }
            if self.is_identity() {
                continue;
            }
            let mut grad_conf: Vec<f64> = (0..c * c).map(|i| s[i / c] * gp[i % c]).collect();
            for b in 0..last {
                for r in 0..last {
                    let d = 2.0 * lambda * (conf.get(r, b) - conf.get(last, b));
                    grad_conf[r * c + b] += d;
                    grad_conf[last * c + b] -= d;
                }
            }
            for r in 0..c {
                let g = softmax_backward(conf.row(r), &grad_conf[r * c..(r + 1) * c]);
                let offset = k * c * c + r * c;
                grad_logits[offset..offset + c].copy_from_slice(&g);
            }
        }
        if grad {
            match self.heads {
                ConfusionHeads::Identity => {}
                ConfusionHeads::Task { logits } => {
                    for (g, d) in self.params.tensor_mut(logits).grad.iter_mut().zip(&grad_logits) {
                        *g += d;
                    }
                }
                ConfusionHeads::Context { weight, bias } => {
                    let through_s = self.config.skill_input == SkillInput::Bottleneck;
                    if let Some(gx) = affine_backward(&mut self.params, weight, bias, &x, &grad_logits, through_s) {
                        for (g, d) in grad_s.iter_mut().zip(&gx) {
                            *g += d;
                        }
                    }
                }
            }
            let e = self.embedding(ds, n)?;
            self.bottleneck.backward(&mut self.params, e, &s, &grad_s);
        }
        Ok(loss)
    }

    fn batch_loss(&mut self, ds: &JudgmentDataset, indices: &[usize], grad: bool) -> Result<f64> {
        self.check_dataset(ds)?;
        let mut total = 0.0;
        for &n in indices {
            total += self.item_loss(ds, n, grad)?;
        }
        Ok(total)
    }

    pub fn loss(&self, ds: &JudgmentDataset, indices: &[usize]) -> Result<f64> {
        self.clone().batch_loss(ds, indices, false)
    }

    pub fn loss_and_grad(&mut self, ds: &JudgmentDataset, indices: &[usize]) -> Result<f64> {
        self.batch_loss(ds, indices, true)
    }

    /// Posterior decision from the context and hard class votes.
    pub fn posterior(&self, e: &[f64], votes: &[usize]) -> Result<MulticlassPosterior> {
        self.check_dim(e)?;
        if votes.len() != self.num_judges {
            return Err(Error::Data(format!("{} votes for {} judges", votes.len(), self.num_judges)));
        }
        if let Some(b) = votes.iter().find(|&&b| b >= self.num_classes) {
            return Err(Error::Data(format!("vote {b} out of range 0..{}", self.num_classes)));
        }
        let (z, s, _, logits) = self.forward(e);
        let log_s = log_softmax(&z);
        let c = self.num_classes;
        let log_rows: Vec<Vec<f64>> = match self.heads {
            ConfusionHeads::Identity => {
                return Ok(posterior_from_parts(&s, &vec![Confusion::identity(c); self.num_judges], votes));
            }
            _ => logits.chunks(c).map(log_softmax).collect(),
        };
        let log_scores = (0..c)
            .map(|r| log_s[r] + votes.iter().enumerate().map(|(k, &b)| log_rows[k * c + r][b]).sum::<f64>())
            .collect();
        Ok(MulticlassPosterior::decide(log_scores, &s))
    }

    pub fn posterior_infer(&self, ds: &JudgmentDataset, n: usize) -> Result<MulticlassPosterior> {
        let votes: Vec<usize> = (0..ds.num_judges()).map(|k| ds.hard_vote(n, k)).collect();
        self.posterior(self.embedding(ds, n)?, &votes)
    }

    /// Posterior group estimates. Scores are P(c=1) for binary data and the
    /// probability of the chosen class otherwise.
    pub fn infer(&self, ds: &JudgmentDataset, method: &str) -> Result<GroupEstimates> {
        self.check_dataset(ds)?;
        let mut estimates = Vec::with_capacity(ds.len());
        let mut scores = Vec::with_capacity(ds.len());
        for n in 0..ds.len() {
            let p = self.posterior_infer(ds, n)?;
            let probs = p.probabilities();
            scores.push(if ds.is_binary() { probs[1] } else { probs[p.class] });
            estimates.push(p.class);
        }
        Ok(GroupEstimates::new(method, ds, estimates, Some(scores)))
    }

    /// `argmax s` group estimates; judge votes are not consulted.
    pub fn bottleneck_estimates(&self, ds: &JudgmentDataset, method: &str) -> Result<GroupEstimates> {
        self.check_dataset(ds)?;
        let mut estimates = Vec::with_capacity(ds.len());
        let mut scores = Vec::with_capacity(ds.len());
        for n in 0..ds.len() {
            let s = self.bottleneck(self.embedding(ds, n)?)?;
            let c = argmax(&s);
            scores.push(if ds.is_binary() { s[1] } else { s[c] });
            estimates.push(c);
        }
        Ok(GroupEstimates::new(method, ds, estimates, Some(scores)))
    }

    /// Mean confusion estimate per judge over the items of `ds`.
    pub fn mean_confusions(&self, ds: &JudgmentDataset) -> Result<Vec<Confusion>> {
        self.check_dataset(ds)?;
        if ds.is_empty() {
            return Err(Error::Data("cannot summarize confusions over an empty dataset".into()));
        }
        let c = self.num_classes;
        let mut sums = vec![vec![0.0; c * c]; self.num_judges];
        for n in 0..ds.len() {
            for (sum, conf) in sums.iter_mut().zip(self.confusions(self.embedding(ds, n)?)?) {
                for (a, v) in sum.iter_mut().zip(&conf.data) {
                    *a += v;
                }
            }
        }
        let len = ds.len() as f64;
        Ok(sums
            .into_iter()
            .map(|data| Confusion {
                classes: c,
                data: data.into_iter().map(|v| v / len).collect(),
            })
            .collect())
    }

    pub fn checkpoint_metadata(&self, kind: &str) -> serde_json::Value {
        serde_json::json!({
            "kind": kind,
            "config": self.config,
            "num_judges": self.num_judges,
            "num_classes": self.num_classes,
            "dim": self.dim,
            "identity": self.is_identity(),
        })
    }

    pub fn from_checkpoint(params: ParamStore, metadata: &serde_json::Value, kind: &str) -> Result<Self> {
        if metadata["kind"] != kind {
            return Err(Error::Data(format!("checkpoint kind {} is not {kind}", metadata["kind"])));
        }
        let config: MulticlassConfig = serde_json::from_value(metadata["config"].clone())
            .map_err(|e| Error::Data(format!("bad checkpoint config: {e}")))?;
        let count = |key: &str| metadata[key].as_u64().unwrap_or(0) as usize;
        let identity = metadata["identity"].as_bool().unwrap_or(false);
        let mut model = Self::build(count("num_judges"), count("num_classes"), count("dim"), config, 0, identity)?;
        if !model.params.same_layout(&params) {
            return Err(Error::Data("checkpoint tensors do not match the model layout".into()));
        }
        model.params = params;
        Ok(model)
    }
}

/// How a checkpoint is scored on the dev set.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum DevDecision {
    Posterior,
    Bottleneck,
}

/// Train `model` on `ds` and keep the epoch scoring best on `dev`.
pub(crate) fn train_model(
    model: MulticlassSkillModel,
    ds: &JudgmentDataset,
    dev: Option<&JudgmentDataset>,
    optimizer: &OptimizerConfig,
    decision: DevDecision,
) -> Result<(MulticlassSkillModel, TrainReport)> {
    model.check_dataset(ds)?;
    let dev = dev.filter(|d| !d.is_empty());
    if let Some(d) = dev {
        if d.num_classes() != model.num_classes || d.embedding_dim() != Some(model.dim) {
            return Err(Error::Data("dev set does not match the training data".into()));
        }
    }
    let labels = dev.map(dev_labels).transpose()?;
    fit(
        model,
        ds.len(),
        optimizer,
        |m| &mut m.params,
        |m, batch| m.loss_and_grad(ds, batch),
        |m| {
            let (d, labels) = (dev?, labels.as_ref()?);
            let predicted = (0..d.len()).map(|n| {
                let decided = match decision {
                    DevDecision::Posterior => m.posterior_infer(d, n).map(|p| p.class),
                    DevDecision::Bottleneck => m.embedding(d, n).and_then(|e| m.bottleneck(e)).map(|s| argmax(&s)),
                };
                decided.unwrap_or(0)
            });
            Some(fraction_correct(predicted, labels))
        },
    )
}

/// Train multi-class SkillAggregation; checkpoints are chosen by posterior dev accuracy.
pub fn train(
    ds: &JudgmentDataset,
    dev: Option<&JudgmentDataset>,
    optimizer: &OptimizerConfig,
    config: &MulticlassConfig,
) -> Result<(MulticlassSkillModel, TrainReport)> {
    let dim = ds
        .embedding_dim()
        .ok_or_else(|| Error::Data("SkillAggregation requires embeddings".into()))?;
    let model = MulticlassSkillModel::new(ds.num_judges(), ds.num_classes(), dim, config.clone(), optimizer.seed)?;
    train_model(model, ds, dev, optimizer, DevDecision::Posterior)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::dataset::Item;
    use crate::neural::{grad_check, logit};
    use crate::skill_agg::{self, SkillAggConfig, SkillAggModel};
    use rand::Rng;

    pub(crate) fn random_dataset(n: usize, k: usize, c: usize, d: usize, seed: u64) -> JudgmentDataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let items = (0..n)
            .map(|i| {
                let e: Vec<f64> = (0..d).map(|_| rng.random_range(-1.5..1.5)).collect();
                let y: Vec<f64> = (0..k)
                    .flat_map(|_| {
                        let raw: Vec<f64> = (0..c).map(|_| rng.random_range(0.05..1.0)).collect();
                        let total: f64 = raw.iter().sum();
                        raw.into_iter().map(move |v| v / total)
                    })
                    .collect();
                Item::new(format!("i{i}"), y).with_embedding(e).with_label(rng.random_range(0..c))
            })
            .collect();
        JudgmentDataset::with_default_names(items, k, c).unwrap()
    }

    fn perturbed(m: &mut MulticlassSkillModel, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for t in m.params_mut().tensors_mut() {
            for v in &mut t.data {
                *v += rng.random_range(-0.5..0.5);
            }
        }
    }

    #[test]
    fn mix_examples() {
        let s = [0.2, 0.3, 0.5];
        assert_eq!(Confusion::identity(3).mix(&s), s.to_vec());
        for p in Confusion::uniform(3).mix(&s) {
            assert!((p - 1.0 / 3.0).abs() < 1e-15);
        }
        let rows = vec![vec![0.6, 0.3, 0.1], vec![0.2, 0.5, 0.3], vec![0.1, 0.1, 0.8]];
        let m = Confusion::from_rows(&rows);
        let expected = [
            0.2 * 0.6 + 0.3 * 0.2 + 0.5 * 0.1,
            0.2 * 0.3 + 0.3 * 0.5 + 0.5 * 0.1,
            0.2 * 0.1 + 0.3 * 0.3 + 0.5 * 0.8,
        ];
        for (a, b) in m.mix(&s).iter().zip(expected) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn regularizer_examples() {
        let same = Confusion::from_rows(&vec![vec![0.2, 0.3, 0.5]; 3]);
        assert_eq!(same.regularizer(), 0.0);
        assert_eq!(Confusion::identity(3).regularizer(), 2.0);
        let (p0, p1) = (0.8, 0.65);
        let two = Confusion::from_rows(&[vec![p0, 1.0 - p0], vec![1.0 - p1, p1]]);
        assert!((two.regularizer() - (p0 + p1 - 1.0_f64).powi(2)).abs() < 1e-15);
    }

    #[test]
    fn initial_confusions_have_requested_diagonal() {
        for mode in [SkillMode::Task, SkillMode::Context] {
            let cfg = MulticlassConfig {
                mode,
                ..Default::default()
            };
            let m = MulticlassSkillModel::new(2, 4, 3, cfg, 0).unwrap();
            for conf in m.confusions(&[0.1, 0.2, 0.3]).unwrap() {
                for c in 0..4 {
                    assert!((conf.row(c).iter().sum::<f64>() - 1.0).abs() < 1e-9);
                    for b in 0..4 {
                        let want = if b == c { 0.7 } else { 0.1 };
                        assert!((conf.get(c, b) - want).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn gradients_pass_grad_check() {
        let ds = random_dataset(16, 3, 3, 4, 2);
        let all: Vec<usize> = (0..16).collect();
        let variants = [
            (SkillMode::Task, SkillInput::Embedding, false),
            (SkillMode::Context, SkillInput::Embedding, false),
            (SkillMode::Context, SkillInput::Bottleneck, false),
            (SkillMode::Task, SkillInput::Embedding, true),
        ];
        for (mode, input, identity) in variants {
            for lambda in [0.0, 0.1] {
                let cfg = MulticlassConfig {
                    mode,
                    skill_input: input,
                    lambda,
                    ..Default::default()
                };
                let mut m = if identity {
                    MulticlassSkillModel::identity(3, 3, 4, 1).unwrap()
                } else {
                    MulticlassSkillModel::new(3, 3, 4, cfg, 1).unwrap()
                };
                perturbed(&mut m, 9);
                let template = m.clone();
                let err = grad_check(
                    |p| {
                        let mut mm = template.clone();
                        *mm.params_mut() = p.clone();
                        let l = mm.loss_and_grad(&ds, &all)?;
                        *p = mm.params().clone();
                        Ok(l)
                    },
                    m.params(),
                    1e-5,
                    usize::MAX,
                    0,
                )
                .unwrap();
                assert!(err <= 1e-4, "{mode:?} {input:?} identity={identity} λ={lambda}: {err}");
            }
        }
    }

    #[test]
    fn model_loss_matches_parts() {
        let ds = random_dataset(5, 2, 3, 3, 4);
        let mut m = MulticlassSkillModel::new(2, 3, 3, MulticlassConfig::default(), 5).unwrap();
        perturbed(&mut m, 6);
        let expected: f64 = (0..5)
            .map(|n| {
                let e = ds.items()[n].embedding().unwrap();
                let targets: Vec<Vec<f64>> = (0..2).map(|k| ds.judgment_vector(n, k)).collect();
                item_loss_from_parts(&m.bottleneck(e).unwrap(), &m.confusions(e).unwrap(), &targets, 0.1)
            })
            .sum();
        assert!((m.loss(&ds, &[0, 1, 2, 3, 4]).unwrap() - expected).abs() < 1e-10);
    }

    #[test]
    fn two_classes_match_binary_model() {
        let ds = skill_agg::tests::random_dataset(12, 3, 4, 8);
        let mut binary = SkillAggModel::new(3, 4, SkillAggConfig::default(), 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for t in binary.params_mut().tensors_mut() {
            for v in &mut t.data {
                *v += rng.random_range(-0.5..0.5);
            }
        }
        let mut multi = MulticlassSkillModel::new(3, 2, 4, MulticlassConfig::default(), 3).unwrap();
        let w = binary.params().tensor(0).clone();
        let b = binary.params().tensor(1).clone();
        multi.params_mut().tensor_mut(0).data = w.data;
        multi.params_mut().tensor_mut(1).data = b.data;
        let l = binary.params().tensor(2).data.clone();
        // Row 0 = [l0, 0], row 1 = [0, l1] reproduces (p0, p1) = (σ(l0), σ(l1)).
        let logits: Vec<f64> = l.chunks(2).flat_map(|p| [p[0], 0.0, 0.0, p[1]]).collect();
        multi.params_mut().tensor_mut(2).data = logits;
        let all: Vec<usize> = (0..12).collect();
        assert!((binary.loss(&ds, &all).unwrap() - multi.loss(&ds, &all).unwrap()).abs() < 1e-9);
        for n in 0..12 {
            let a = binary.posterior_infer(&ds.items()[n]).unwrap();
            let b = multi.posterior_infer(&ds, n).unwrap();
            assert_eq!(a.class, b.class);
            assert!((a.log_ratio - (b.log_scores[1] - b.log_scores[0])).abs() < 1e-9);
        }
        assert!((diagonal_logit(0.7, 2) - logit(0.7)).abs() < 1e-12);
    }

    #[test]
    fn posterior_examples() {
        let s = [1.0 / 3.0; 3];
        let ident = vec![Confusion::identity(3); 3];
        assert_eq!(posterior_from_parts(&s, &ident, &[2, 2, 2]).class, 2);
        let uniform = vec![Confusion::uniform(3); 2];
        assert_eq!(posterior_from_parts(&[0.2, 0.5, 0.3], &uniform, &[0, 2]).class, 1);
        let split = posterior_from_parts(&s, &ident, &[0, 1, 2]);
        assert!(split.fallback);
        assert_eq!(split.class, 0);
        assert_eq!(posterior_from_parts(&s, &uniform, &[1, 1]).class, 0);
    }

    #[test]
    fn model_posterior_matches_parts() {
        let ds = random_dataset(40, 3, 3, 4, 12);
        let cfg = MulticlassConfig {
            mode: SkillMode::Context,
            ..Default::default()
        };
        let mut m = MulticlassSkillModel::new(3, 3, 4, cfg, 2).unwrap();
        perturbed(&mut m, 3);
        for n in 0..40 {
            let e = ds.items()[n].embedding().unwrap();
            let votes: Vec<usize> = (0..3).map(|k| ds.hard_vote(n, k)).collect();
            let a = m.posterior_infer(&ds, n).unwrap();
            let b = posterior_from_parts(&m.bottleneck(e).unwrap(), &m.confusions(e).unwrap(), &votes);
            assert_eq!(a.class, b.class);
            for (x, y) in a.log_scores.iter().zip(&b.log_scores) {
                assert!((x - y).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn zero_epochs_return_initial_model() {
        let ds = random_dataset(10, 2, 3, 3, 1);
        let opt = OptimizerConfig {
            epochs: 0,
            seed: 4,
            ..Default::default()
        };
        let (m, _) = train(&ds, Some(&ds), &opt, &MulticlassConfig::default()).unwrap();
        assert_eq!(m, MulticlassSkillModel::new(2, 3, 3, MulticlassConfig::default(), 4).unwrap());
    }

    #[test]
    fn checkpoint_round_trip() {
        let mut m = MulticlassSkillModel::new(2, 3, 3, MulticlassConfig::default(), 1).unwrap();
        perturbed(&mut m, 2);
        let meta = m.checkpoint_metadata("multiclass");
        let bytes = crate::neural::checkpoint::encode_checkpoint(m.params(), &meta);
        let (p, meta) = crate::neural::checkpoint::decode_checkpoint(&bytes).unwrap();
        assert_eq!(MulticlassSkillModel::from_checkpoint(p.clone(), &meta, "multiclass").unwrap(), m);
        assert!(MulticlassSkillModel::from_checkpoint(p, &meta, "crowdlayer").is_err());
    }
}
