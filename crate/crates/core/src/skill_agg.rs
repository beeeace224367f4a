//! SkillAggregation for binary judgments.
//!
//! A bottleneck `s = softmax(W·e + b)` predicts the class distribution from a
//! frozen context embedding. Each judge k has a skill-estimate pair
//! `(p0, p1) ≈ (P(b=0 | c=0), P(b=1 | c=1))`, either shared across items
//! ([`SkillMode::Task`]) or produced per item by a sigmoid-affine head
//! ([`SkillMode::Context`]). The judge's vote is predicted as
//!
//! ```text
//! P(b=0 | X) = p0·s0 + (1 - p1)·s1  =  (p0 + p1 - 1)·s0 + (1 - p1)
//! ```
//!
//! and training minimizes `Σ CE(P(b=1|X), y) + λ Σ (p0 + p1 - 1)²`. Group
//! estimates come from the posterior under conditional independence:
//!
//! ```text
//! r = s1 Π p1^b (1-p1)^(1-b) / (s0 Π p0^(1-b) (1-p0)^b),   c = 1[r > 1]
//! ```

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{binarize, GroupEstimates, Item, JudgmentDataset};
use crate::error::{Error, Result};
use crate::neural::{
    affine, affine_backward, fit, log_sigmoid, logit, sigmoid, softmax, Bottleneck, Init, OptimizerConfig,
    ParamStore, TrainReport, PROB_CLAMP,
};

pub const METHOD_TASK: &str = "skillagg";
pub const METHOD_CONTEXT: &str = "skillagg-x";
pub const METHOD_NO_REG: &str = "skillagg-noreg";

const SKILL_LOGITS: &str = "skills.logits";
const SKILL_WEIGHT: &str = "skills.weight";
const SKILL_BIAS: &str = "skills.bias";

/// Whether skill estimates are shared across items or depend on the context.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SkillMode {
    Task,
    Context,
}

/// What the context-specific skill heads read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SkillInput {
    Embedding,
    Bottleneck,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SkillAggConfig {
    pub mode: SkillMode,
    pub skill_input: SkillInput,
    pub lambda: f64,
    /// Initial value of both skill estimates.
    pub init_skill: f64,
}

impl Default for SkillAggConfig {
    fn default() -> Self {
        Self {
            mode: SkillMode::Task,
            skill_input: SkillInput::Embedding,
            lambda: 0.1,
            init_skill: 0.7,
        }
    }
}

impl SkillAggConfig {
    /// The unregularized preset.
    pub fn no_reg() -> Self {
        Self {
            lambda: 0.0,
            ..Self::default()
        }
    }

    pub fn context() -> Self {
        Self {
            mode: SkillMode::Context,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if !(self.init_skill > 0.0 && self.init_skill < 1.0) {
            return Err(Error::Config(format!("init_skill must lie in (0, 1), got {}", self.init_skill)));
        }
        Ok(())
    }
}

/// A judge's skill-estimate pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SkillVector {
    /// ≈ P(b = 0 | c = 0)
    pub p0: f64,
    /// ≈ P(b = 1 | c = 1)
    pub p1: f64,
}

impl SkillVector {
    pub fn new(p0: f64, p1: f64) -> Self {
        Self { p0, p1 }
    }

    pub fn from_logits(l0: f64, l1: f64) -> Self {
        Self {
            p0: sigmoid(l0),
            p1: sigmoid(l1),
        }
    }

    /// `p0 + p1 - 1`: how strongly the predicted vote tracks the class.
    pub fn slope(&self) -> f64 {
        self.p0 + self.p1 - 1.0
    }
}

/// P(b = 1 | X) for bottleneck output `s` and skills `skill`.
pub fn predict_from_parts(s: [f64; 2], skill: SkillVector) -> f64 {
    1.0 - (skill.p0 * s[0] + (1.0 - skill.p1) * s[1])
}

/// Loss contribution of one item: `Σ_k CE(P̂_k, y_k) + λ Σ_k slope_k²`.
/// Probabilities are clamped to `[1e-7, 1 - 1e-7]` before the logarithm.
pub fn item_loss_from_parts(s: [f64; 2], skills: &[SkillVector], targets: &[f64], lambda: f64) -> f64 {
    skills
        .iter()
        .zip(targets)
        .map(|(skill, &y)| {
            let p = predict_from_parts(s, *skill).clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
            -(y * p.ln() + (1.0 - y) * (1.0 - p).ln()) + lambda * skill.slope().powi(2)
        })
        .sum()
}

/// Outcome of posterior inference for one item.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Posterior {
    pub class: usize,
    /// ln r; ±∞ when one side of the ratio vanishes.
    pub log_ratio: f64,
    /// Set when the denominator of r was zero.
    pub degenerate: bool,
}

impl Posterior {
    /// P̂(c = 1 | X, b).
    pub fn probability(&self) -> f64 {
        sigmoid(self.log_ratio)
    }
}

/// Posterior decision from explicit probabilities, in log-space.
pub fn posterior_from_parts(s: [f64; 2], skills: &[SkillVector], votes: &[u8]) -> Posterior {
    let mut log_num = s[1].ln();
    let mut log_den = s[0].ln();
    for (skill, &b) in skills.iter().zip(votes) {
        if b == 1 {
            log_num += skill.p1.ln();
            log_den += (1.0 - skill.p0).ln();
        } else {
            log_num += (1.0 - skill.p1).ln();
            log_den += skill.p0.ln();
        }
    }
    if log_den == f64::NEG_INFINITY {
        let class = usize::from(log_num > f64::NEG_INFINITY);
        let log_ratio = if class == 1 { f64::INFINITY } else { f64::NAN };
        return Posterior {
            class,
            log_ratio,
            degenerate: true,
        };
    }
    let log_ratio = log_num - log_den;
    Posterior {
        class: usize::from(log_ratio > 0.0),
        log_ratio,
        degenerate: false,
    }
}

#[derive(Debug, Clone, PartialEq)]
enum SkillHeads {
    Task { logits: usize },
    Context { weight: usize, bias: usize },
}

/// Bottleneck plus skill heads.
#[derive(Debug, Clone, PartialEq)]
pub struct SkillAggModel {
    config: SkillAggConfig,
    num_judges: usize,
    dim: usize,
    params: ParamStore,
    bottleneck: Bottleneck,
    heads: SkillHeads,
}

struct Forward {
    s: Vec<f64>,
    skill_input: Vec<f64>,
    /// `[l0_0, l1_0, l0_1, l1_1, ...]`
    skill_logits: Vec<f64>,
}

impl SkillAggModel {
    /// Fresh model; parameters are a deterministic function of `seed`.
    pub fn new(num_judges: usize, dim: usize, config: SkillAggConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        if num_judges == 0 || dim == 0 {
            return Err(Error::Config("model needs at least one judge and a non-empty embedding".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let bottleneck = Bottleneck::add(&mut params, 2, dim, &mut rng);
        let init = logit(config.init_skill);
        let heads = match config.mode {
            SkillMode::Task => SkillHeads::Task {
                logits: params.add(SKILL_LOGITS, num_judges, 2, Init::Constant(init), &mut rng),
            },
            SkillMode::Context => {
                let input = match config.skill_input {
                    SkillInput::Embedding => dim,
                    SkillInput::Bottleneck => 2,
                };
                SkillHeads::Context {
                    weight: params.add(SKILL_WEIGHT, 2 * num_judges, input, Init::Zeros, &mut rng),
                    bias: params.add(SKILL_BIAS, 1, 2 * num_judges, Init::Constant(init), &mut rng),
                }
            }
        };
        Ok(Self {
            config,
            num_judges,
            dim,
            params,
            bottleneck,
            heads,
        })
    }

    pub fn config(&self) -> &SkillAggConfig {
        &self.config
    }

    pub fn num_judges(&self) -> usize {
        self.num_judges
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

    pub fn set_lambda(&mut self, lambda: f64) {
        self.config.lambda = lambda;
    }

    fn check_dim(&self, e: &[f64]) -> Result<()> {
        if e.len() == self.dim {
            Ok(())
        } else {
            Err(Error::Data(format!("embedding has dimension {}, model expects {}", e.len(), self.dim)))
        }
    }

    fn forward(&self, e: &[f64]) -> Forward {
        let s = softmax(&self.bottleneck.logits(&self.params, e));
        let (skill_input, skill_logits) = match &self.heads {
            SkillHeads::Task { logits } => (Vec::new(), self.params.tensor(*logits).data.clone()),
            SkillHeads::Context { weight, bias } => {
                let x = match self.config.skill_input {
                    SkillInput::Embedding => e.to_vec(),
                    SkillInput::Bottleneck => s.clone(),
                };
                let l = affine(self.params.tensor(*weight), self.params.tensor(*bias), &x);
                (x, l)
            }
        };
        Forward {
            s,
            skill_input,
            skill_logits,
        }
    }

    /// Bottleneck output `s`.
    pub fn bottleneck(&self, e: &[f64]) -> Result<[f64; 2]> {
        self.check_dim(e)?;
        let s = softmax(&self.bottleneck.logits(&self.params, e));
        Ok([s[0], s[1]])
    }

    /// Skill estimates of every judge for context `e`.
    pub fn skills(&self, e: &[f64]) -> Result<Vec<SkillVector>> {
        self.check_dim(e)?;
        let f = self.forward(e);
        Ok(f.skill_logits
            .chunks(2)
            .map(|l| SkillVector::from_logits(l[0], l[1]))
            .collect())
    }

    /// P̂(b_k = 1 | X).
    pub fn predict_judgment(&self, e: &[f64], k: usize) -> Result<f64> {
        if k >= self.num_judges {
            return Err(Error::Data(format!("judge {k} out of range 0..{}", self.num_judges)));
        }
        let s = self.bottleneck(e)?;
        Ok(predict_from_parts(s, self.skills(e)?[k]))
    }

    /// Loss of one item; accumulates gradients when `grad` is set.
    fn item_loss(&mut self, e: &[f64], targets: &[f64], grad: bool, id: &str) -> Result<f64> {
        let f = self.forward(e);
        let lambda = self.config.lambda;
        let (s0, s1) = (f.s[0], f.s[1]);
        let mut grad_s = vec![0.0; 2];
        let mut grad_logits = vec![0.0; 2 * self.num_judges];
        let mut loss = 0.0;
        for (k, &y) in targets.iter().enumerate() {
            let p0 = sigmoid(f.skill_logits[2 * k]);
            let p1 = sigmoid(f.skill_logits[2 * k + 1]);
            let p = (1.0 - p0) * s0 + p1 * s1;
            let pc = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
            let ce = -(y * pc.ln() + (1.0 - y) * (1.0 - pc).ln());
            let slope = p0 + p1 - 1.0;
            let term = ce + lambda * slope * slope;
            if !term.is_finite() {
                return Err(Error::Numeric(format!("non-finite loss at item {id:?}, judge {k}")));
            }
            loss += term;
            if grad {
                let gp = if pc == p { (p - y) / (p * (1.0 - p)) } else { 0.0 };
                let gp0 = -gp * s0 + 2.0 * lambda * slope;
                let gp1 = gp * s1 + 2.0 * lambda * slope;
                grad_s[0] += gp * (1.0 - p0);
                grad_s[1] += gp * p1;
                grad_logits[2 * k] = gp0 * p0 * (1.0 - p0);
                grad_logits[2 * k + 1] = gp1 * p1 * (1.0 - p1);
            }
        }
        if grad {
            match self.heads {
                SkillHeads::Task { logits } => {
                    let t = self.params.tensor_mut(logits);
                    for (g, d) in t.grad.iter_mut().zip(&grad_logits) {
                        *g += d;
                    }
                }
                SkillHeads::Context { weight, bias } => {
                    let through_s = self.config.skill_input == SkillInput::Bottleneck;
                    if let Some(gx) =
                        affine_backward(&mut self.params, weight, bias, &f.skill_input, &grad_logits, through_s)
                    {
                        grad_s[0] += gx[0];
                        grad_s[1] += gx[1];
                    }
                }
            }
            self.bottleneck.backward(&mut self.params, e, &f.s, &grad_s);
        }
        Ok(loss)
    }

    fn batch_loss(&mut self, ds: &JudgmentDataset, indices: &[usize], grad: bool) -> Result<f64> {
        self.check_dataset(ds)?;
        let mut total = 0.0;
        for &n in indices {
            let item = &ds.items()[n];
            let e = item.embedding().ok_or_else(|| missing_embedding(item))?;
            total += self.item_loss(e, item.judgments(), grad, item.id())?;
        }
        Ok(total)
    }

    /// Training objective over the items at `indices`.
    pub fn loss(&self, ds: &JudgmentDataset, indices: &[usize]) -> Result<f64> {
        self.clone().batch_loss(ds, indices, false)
    }

    /// Objective and its gradient (accumulated into the parameter store).
    pub fn loss_and_grad(&mut self, ds: &JudgmentDataset, indices: &[usize]) -> Result<f64> {
        self.batch_loss(ds, indices, true)
    }

    fn check_dataset(&self, ds: &JudgmentDataset) -> Result<()> {
        if !ds.is_binary() {
            return Err(Error::Config("binary SkillAggregation needs a binary dataset".into()));
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
            None => Err(Error::Data("SkillAggregation requires embeddings".into())),
        }
    }

    /// Posterior decision from the context and binary votes, in log-space.
    pub fn posterior(&self, e: &[f64], votes: &[u8]) -> Result<Posterior> {
        self.check_dim(e)?;
        if votes.len() != self.num_judges {
            return Err(Error::Data(format!("{} votes for {} judges", votes.len(), self.num_judges)));
        }
        let z = self.bottleneck.logits(&self.params, e);
        let f = self.forward(e);
        let mut log_ratio = z[1] - z[0];
        for (l, &b) in f.skill_logits.chunks(2).zip(votes) {
            let (l0, l1) = (l[0], l[1]);
            log_ratio += if b == 1 {
                log_sigmoid(l1) - log_sigmoid(-l0)
            } else {
                log_sigmoid(-l1) - log_sigmoid(l0)
            };
        }
        Ok(Posterior {
            class: usize::from(log_ratio > 0.0),
            log_ratio,
            degenerate: false,
        })
    }

    /// Binarize the item's judgments and decide by the posterior.
    pub fn posterior_infer(&self, item: &Item) -> Result<Posterior> {
        let e = item.embedding().ok_or_else(|| missing_embedding(item))?;
        let votes: Vec<u8> = item.judgments().iter().map(|&y| binarize(y).as_u8()).collect();
        self.posterior(e, &votes)
    }

    /// Posterior group estimates; scores are P̂(c = 1 | X, b).
    pub fn infer(&self, ds: &JudgmentDataset, method: &str) -> Result<GroupEstimates> {
        self.check_dataset(ds)?;
        let mut estimates = Vec::with_capacity(ds.len());
        let mut scores = Vec::with_capacity(ds.len());
        for item in ds.items() {
            let p = self.posterior_infer(item)?;
            estimates.push(p.class);
            scores.push(p.probability());
        }
        Ok(GroupEstimates::new(method, ds, estimates, Some(scores)))
    }

    /// Per-judge slopes, averaged over the items of `ds` in context mode.
    pub fn mean_slopes(&self, ds: &JudgmentDataset) -> Result<Vec<f64>> {
        Ok(self.skill_summary(ds)?.into_iter().map(|s| s.slope.mean).collect())
    }

    /// Per-judge skill statistics over `ds` (constant across items in task mode).
    pub fn skill_summary(&self, ds: &JudgmentDataset) -> Result<Vec<JudgeSkillSummary>> {
        self.check_dataset(ds)?;
        let per_item: Vec<Vec<SkillVector>> = match self.config.mode {
            SkillMode::Task => vec![self.task_skills()],
            SkillMode::Context => ds
                .items()
                .iter()
                .map(|item| self.skills(item.embedding().ok_or_else(|| missing_embedding(item))?))
                .collect::<Result<_>>()?,
        };
        if per_item.is_empty() {
            return Err(Error::Data("cannot summarize skills over an empty dataset".into()));
        }
        Ok((0..self.num_judges)
            .map(|k| {
                let p0: Vec<f64> = per_item.iter().map(|s| s[k].p0).collect();
                let p1: Vec<f64> = per_item.iter().map(|s| s[k].p1).collect();
                let slope: Vec<f64> = per_item.iter().map(|s| s[k].slope()).collect();
                JudgeSkillSummary {
                    name: ds.judge_names()[k].clone(),
                    p0: Stats::of(&p0),
                    p1: Stats::of(&p1),
                    slope: Stats::of(&slope),
                }
            })
            .collect())
    }

    fn task_skills(&self) -> Vec<SkillVector> {
        match self.heads {
            SkillHeads::Task { logits } => self
                .params
                .tensor(logits)
                .data
                .chunks(2)
                .map(|l| SkillVector::from_logits(l[0], l[1]))
                .collect(),
            SkillHeads::Context { .. } => unreachable!("task skills requested from a context model"),
        }
    }

    pub fn checkpoint_metadata(&self) -> serde_json::Value {
        serde_json::json!({
            "kind": "skillagg",
            "config": self.config,
            "num_judges": self.num_judges,
            "dim": self.dim,
        })
    }

    /// Rebuild a model from checkpoint contents.
    pub fn from_checkpoint(params: ParamStore, metadata: &serde_json::Value) -> Result<Self> {
        if metadata["kind"] != "skillagg" {
            return Err(Error::Data(format!("checkpoint kind {} is not skillagg", metadata["kind"])));
        }
        let config: SkillAggConfig = serde_json::from_value(metadata["config"].clone())
            .map_err(|e| Error::Data(format!("bad checkpoint config: {e}")))?;
        let num_judges = metadata["num_judges"].as_u64().unwrap_or(0) as usize;
        let dim = metadata["dim"].as_u64().unwrap_or(0) as usize;
        let mut model = Self::new(num_judges, dim, config, 0)?;
        if !model.params.same_layout(&params) {
            return Err(Error::Data("checkpoint tensors do not match the model layout".into()));
        }
        model.params = params;
        Ok(model)
    }
}

fn missing_embedding(item: &Item) -> Error {
    Error::Data(format!("item {:?} has no embedding", item.id()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stats {
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
}

impl Stats {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Self {
            mean,
            std: var.sqrt(),
            min: values.iter().copied().fold(f64::INFINITY, f64::min),
            max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgeSkillSummary {
    pub name: String,
    pub p0: Stats,
    pub p1: Stats,
    pub slope: Stats,
}

/// Dev-set labels, read once.
pub(crate) fn dev_labels(dev: &JudgmentDataset) -> Result<Vec<usize>> {
    dev.items()
        .iter()
        .map(|i| {
            i.label()
                .ok_or_else(|| Error::Data(format!("dev item {:?} has no label", i.id())))
        })
        .collect()
}

pub(crate) fn fraction_correct(predicted: impl Iterator<Item = usize>, labels: &[usize]) -> f64 {
    let hits = predicted.zip(labels).filter(|(p, l)| p == *l).count();
    hits as f64 / labels.len() as f64
}

/// Train with mini-batches over `ds` (labels unused) and keep the epoch whose
/// posterior decisions score best on `dev`.
pub fn train(
    ds: &JudgmentDataset,
    dev: Option<&JudgmentDataset>,
    optimizer: &OptimizerConfig,
    config: &SkillAggConfig,
) -> Result<(SkillAggModel, TrainReport)> {
    let dim = ds
        .embedding_dim()
        .ok_or_else(|| Error::Data("SkillAggregation requires embeddings".into()))?;
    let model = SkillAggModel::new(ds.num_judges(), dim, config.clone(), optimizer.seed)?;
    model.check_dataset(ds)?;
    let dev = dev.filter(|d| !d.is_empty());
    let labels = dev.map(dev_labels).transpose()?;
    if let Some(d) = dev {
        model.check_dataset(d)?;
    }
    fit(
        model,
        ds.len(),
        optimizer,
        |m| &mut m.params,
        |m, batch| m.loss_and_grad(ds, batch),
        |m| {
            let (d, labels) = (dev?, labels.as_ref()?);
            let predicted = d.items().iter().map(|i| m.posterior_infer(i).map(|p| p.class).unwrap_or(0));
            Some(fraction_correct(predicted, labels))
        },
    )
}

/// Result of a λ search on the dev set.
#[derive(Debug, Clone)]
pub struct TunedSkillAgg {
    pub model: SkillAggModel,
    pub report: TrainReport,
    pub lambda: f64,
    /// `(λ, best dev accuracy)` per grid entry.
    pub search: Vec<(f64, Option<f64>)>,
}

impl TunedSkillAgg {
    pub fn dev_accuracy(&self) -> Option<f64> {
        self.report.dev_accuracy.get(self.report.selected_epoch.checked_sub(1)?).copied()
    }
}

/// Train once per λ in `grid` and keep the best dev accuracy (earliest grid
/// entry on ties). Without a dev set only the first grid value is trained.
pub fn train_tuned(
    ds: &JudgmentDataset,
    dev: Option<&JudgmentDataset>,
    optimizer: &OptimizerConfig,
    config: &SkillAggConfig,
    grid: &[f64],
) -> Result<TunedSkillAgg> {
    if grid.is_empty() {
        return Err(Error::Config("lambda grid is empty".into()));
    }
    let has_dev = dev.is_some_and(|d| !d.is_empty());
    let grid = if has_dev { grid } else { &grid[..1] };
    let mut best: Option<TunedSkillAgg> = None;
    let mut search = Vec::with_capacity(grid.len());
    for &lambda in grid {
        let cfg = SkillAggConfig {
            lambda,
            ..config.clone()
        };
        let (model, report) = train(ds, dev, optimizer, &cfg)?;
        let candidate = TunedSkillAgg {
            model,
            report,
            lambda,
            search: Vec::new(),
        };
        let acc = candidate.dev_accuracy();
        search.push((lambda, acc));
        let better = match (&best, acc) {
            (None, _) => true,
            (Some(b), Some(a)) => b.dev_accuracy().is_none_or(|ba| a > ba),
            (Some(_), None) => false,
        };
        if better {
            best = Some(candidate);
        }
    }
    let mut best = best.expect("grid is non-empty");
    best.search = search;
    Ok(best)
}
