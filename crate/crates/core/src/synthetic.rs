//! Synthetic worlds under the conditional-independence model, and exact Bayes oracles.
//!
//! Every item draws a class from the prior, an embedding from a class-conditional
//! isotropic Gaussian, and one vote per judge from that judge's confusion row.
//! Each vote is then emitted as a soft probability on the vote's side of 0.5.

use std::cmp::Ordering;

use num::traits::Float;
use num::{BigInt, BigRational, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dataset::{default_judge_names, Item, JudgmentDataset};
use crate::error::{Error, Result};

/// A judge's true behaviour: binary skills or a full confusion matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum JudgeSkill {
    Binary { p0: f64, p1: f64 },
    Confusion { confusion: Vec<Vec<f64>> },
}

impl JudgeSkill {
    /// Row `c` holds P(vote = b | class = c).
    pub fn confusion(&self) -> Vec<Vec<f64>> {
        match self {
            Self::Binary { p0, p1 } => vec![vec![*p0, 1.0 - p0], vec![1.0 - p1, *p1]],
            Self::Confusion { confusion } => confusion.clone(),
        }
    }

    /// Mean diagonal entry.
    pub fn mean_skill(&self) -> f64 {
        let m = self.confusion();
        m.iter().enumerate().map(|(c, row)| row[c]).sum::<f64>() / m.len() as f64
    }
}

/// Independent `p0, p1 ~ U[low, high]` per judge.
pub fn uniform_skills(k: usize, low: f64, high: f64, seed: u64) -> Vec<JudgeSkill> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..k)
        .map(|_| JudgeSkill::Binary {
            p0: rng.random_range(low..=high),
            p1: rng.random_range(low..=high),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbeddingSpec {
    pub dim: usize,
    /// Distance between any two class means.
    pub separation: f64,
    /// Shared isotropic noise scale; large values make embeddings uninformative.
    pub sigma: f64,
    /// Divide embeddings by `sqrt(sigma² + separation²)` so their scale stays O(1).
    pub standardize: bool,
}

impl Default for EmbeddingSpec {
    fn default() -> Self {
        Self {
            dim: 16,
            separation: 1.349,
            sigma: 1.0,
            standardize: true,
        }
    }
}

impl EmbeddingSpec {
    fn scale(&self) -> f64 {
        if self.standardize {
            (self.sigma * self.sigma + self.separation * self.separation).sqrt()
        } else {
            1.0
        }
    }

    /// Unscaled class mean: `separation/√2` on axis `c`.
    fn mean(&self, c: usize) -> Vec<f64> {
        let mut m = vec![0.0; self.dim];
        m[c] = self.separation / std::f64::consts::SQRT_2;
        m
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmissionSpec {
    /// Beta concentration of the emitted confidence around the judge's skill.
    pub concentration: f64,
}

impl Default for EmissionSpec {
    fn default() -> Self {
        Self { concentration: 8.0 }
    }
}

fn default_classes() -> usize {
    2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CiWorldSpec {
    pub n: usize,
    #[serde(default = "default_classes")]
    pub classes: usize,
    /// Uniform when absent.
    #[serde(default)]
    pub class_prior: Option<Vec<f64>>,
    pub skills: Vec<JudgeSkill>,
    #[serde(default)]
    pub embedding: EmbeddingSpec,
    /// Per-judge sharpening exponent γ ≥ 1 applied to emitted probabilities.
    #[serde(default)]
    pub overconfidence: Option<Vec<f64>>,
    #[serde(default)]
    pub emission: EmissionSpec,
    #[serde(default)]
    pub seed: u64,
}

impl CiWorldSpec {
    /// Binary world with default embeddings and emission.
    pub fn binary(n: usize, skills: Vec<JudgeSkill>, seed: u64) -> Self {
        Self {
            n,
            classes: 2,
            class_prior: None,
            skills,
            embedding: EmbeddingSpec::default(),
            overconfidence: None,
            emission: EmissionSpec::default(),
            seed,
        }
    }

    pub fn num_judges(&self) -> usize {
        self.skills.len()
    }

    pub fn prior(&self) -> Vec<f64> {
        self.class_prior
            .clone()
            .unwrap_or_else(|| vec![1.0 / self.classes as f64; self.classes])
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.classes < 2 {
            return bad(format!("classes must be >= 2, got {}", self.classes));
        }
        if self.skills.is_empty() {
            return bad("at least one judge is required".into());
        }
        let prior = self.prior();
        if prior.len() != self.classes
            || prior.iter().any(|p| !(0.0..=1.0).contains(p))
            || (prior.iter().sum::<f64>() - 1.0).abs() > 1e-9
        {
            return bad(format!("class_prior must be a probability vector of length {}", self.classes));
        }
        for (k, skill) in self.skills.iter().enumerate() {
            let m = skill.confusion();
            if m.len() != self.classes || m.iter().any(|r| r.len() != self.classes) {
                return bad(format!("judge {k}: confusion must be {0}x{0}", self.classes));
            }
            for row in &m {
                if row.iter().any(|p| !(0.0..=1.0).contains(p)) || (row.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                    return bad(format!("judge {k}: skills must be probabilities with rows summing to 1"));
                }
            }
        }
        let e = &self.embedding;
        if !(e.sigma > 0.0 && e.sigma.is_finite()) {
            return bad(format!("sigma must be > 0, got {}", e.sigma));
        }
        if !(e.separation >= 0.0 && e.separation.is_finite()) {
            return bad(format!("separation must be >= 0, got {}", e.separation));
        }
        if e.dim < self.classes {
            return bad(format!("embedding dim {} is smaller than the class count", e.dim));
        }
        if let Some(g) = &self.overconfidence {
            if g.len() != self.skills.len() || g.iter().any(|v| !(*v >= 1.0 && v.is_finite())) {
                return bad("overconfidence needs one exponent >= 1 per judge".into());
            }
        }
        if !(self.emission.concentration > 0.0 && self.emission.concentration.is_finite()) {
            return bad("emission concentration must be > 0".into());
        }
        Ok(())
    }

    /// True P(c | e) for an embedding produced by [`generate`].
    pub fn class_posterior(&self, e: &[f64]) -> Vec<f64> {
        let scale = self.embedding.scale();
        let var = (self.embedding.sigma / scale).powi(2);
        let logs: Vec<f64> = self
            .prior()
            .iter()
            .enumerate()
            .map(|(c, p)| {
                let d2: f64 = self
                    .embedding
                    .mean(c)
                    .iter()
                    .zip(e)
                    .map(|(m, x)| (x - m / scale).powi(2))
                    .sum();
                p.ln() - d2 / (2.0 * var)
            })
            .collect();
        let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let w: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
        let total: f64 = w.iter().sum();
        w.into_iter().map(|v| v / total).collect()
    }
}

fn sample_index<R: Rng>(rng: &mut R, probs: &[f64]) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.iter().rposition(|p| *p > 0.0).unwrap_or(0)
}

fn sharpen(v: &[f64], gamma: f64) -> Vec<f64> {
    let powered: Vec<f64> = v.iter().map(|x| x.powf(gamma)).collect();
    let total: f64 = powered.iter().sum();
    powered.into_iter().map(|x| x / total).collect()
}

/// Soft judgment for vote `b`: the vote's share is `1/C + (1 - 1/C)·u`.
fn emit<R: Rng>(rng: &mut R, b: usize, classes: usize, skill: f64, spec: &EmissionSpec, gamma: f64) -> Vec<f64> {
    let m = (2.0 * skill - 1.0).clamp(0.02, 0.98);
    let beta = Beta::new(spec.concentration * m, spec.concentration * (1.0 - m)).expect("positive parameters");
    let u = beta.sample(rng).clamp(1e-6, 1.0 - 1e-6);
    let c = classes as f64;
    let top = 1.0 / c + (1.0 - 1.0 / c) * u;
    let rest = (1.0 - top) / (c - 1.0);
    let v: Vec<f64> = (0..classes).map(|i| if i == b { top } else { rest }).collect();
    if gamma == 1.0 {
        v
    } else {
        sharpen(&v, gamma)
    }
}

/// Draw a fully labeled dataset with embeddings. Each item uses its own RNG
/// stream, so item `n` does not depend on how many items precede it.
pub fn generate(spec: &CiWorldSpec) -> Result<JudgmentDataset> {
    spec.validate()?;
    let prior = spec.prior();
    let confusions: Vec<Vec<Vec<f64>>> = spec.skills.iter().map(JudgeSkill::confusion).collect();
    let skills: Vec<f64> = spec.skills.iter().map(JudgeSkill::mean_skill).collect();
    let scale = spec.embedding.scale();
    let c = spec.classes;
    let items = (0..spec.n)
        .map(|n| {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            rng.set_stream(n as u64);
            let label = sample_index(&mut rng, &prior);
            let mean = spec.embedding.mean(label);
            let embedding: Vec<f64> = mean
                .iter()
                .map(|m| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    // Stored as f32 on disk; round now so files round-trip exactly.
                    f64::from(((m + spec.embedding.sigma * z) / scale) as f32)
                })
                .collect();
            let mut judgments = Vec::with_capacity(spec.skills.len() * c);
            for (k, conf) in confusions.iter().enumerate() {
                let b = sample_index(&mut rng, &conf[label]);
                let gamma = spec.overconfidence.as_ref().map_or(1.0, |g| g[k]);
                let y = emit(&mut rng, b, c, skills[k], &spec.emission, gamma);
                if c == 2 {
                    judgments.push(y[1]);
                } else {
                    judgments.extend(y);
                }
            }
            Item::new(format!("s{n:06}"), judgments)
                .with_embedding(embedding)
                .with_label(label)
        })
        .collect();
    JudgmentDataset::new(items, default_judge_names(spec.skills.len()), c)
}

fn rational(x: f64) -> BigRational {
    BigRational::from_float(x).expect("finite probability")
}

/// Exact P(c | s, votes) under conditional independence, in rational arithmetic.
/// `confusions[k][c][b]` is P(b | c) for judge k. Returns `None` when every
/// class has zero mass.
pub fn exact_posterior(s: &[f64], confusions: &[Vec<Vec<f64>>], votes: &[usize]) -> Option<Vec<BigRational>> {
    let joint: Vec<BigRational> = (0..s.len())
        .map(|c| {
            let mut p = rational(s[c]);
            for (m, &b) in confusions.iter().zip(votes) {
                p *= rational(m[c][b]);
            }
            p
        })
        .collect();
    let total: BigRational = joint.iter().cloned().sum();
    if total.is_zero() {
        return None;
    }
    Some(joint.into_iter().map(|p| p / &total).collect())
}

/// Nonnegative dyadic number `mantissa · 2^exp`; every finite f64 is one,
/// and products stay exact.
#[derive(Clone)]
struct Dyadic {
    mantissa: BigInt,
    exp: i64,
}

impl Dyadic {
    fn from_f64(x: f64) -> Self {
        assert!(x.is_finite() && x >= 0.0, "probability must be finite and nonnegative");
        let (m, e, _) = x.integer_decode();
        Self {
            mantissa: BigInt::from(m),
            exp: e as i64,
        }
    }

    fn mul(&mut self, x: f64) {
        let other = Self::from_f64(x);
        self.mantissa *= other.mantissa;
        self.exp += other.exp;
    }

    fn cmp(&self, other: &Self) -> Ordering {
        let shift = self.exp.min(other.exp);
        let a = &self.mantissa << (self.exp - shift) as usize;
        let b = &other.mantissa << (other.exp - shift) as usize;
        a.cmp(&b)
    }
}

/// Brute-force Bayes decision: argmax of the exact posterior, ties to the
/// smallest index; `argmax s` when every class has zero mass.
///
/// The posterior shares one normalizer, so the exact joints are compared.
pub fn bayes_oracle(s: &[f64], confusions: &[Vec<Vec<f64>>], votes: &[usize]) -> usize {
    let joint: Vec<Dyadic> = (0..s.len())
        .map(|c| {
            let mut p = Dyadic::from_f64(s[c]);
            for (m, &b) in confusions.iter().zip(votes) {
                p.mul(m[c][b]);
            }
            p
        })
        .collect();
    let mut best = 0;
    if joint.iter().all(|p| p.mantissa.is_zero()) {
        for c in 1..s.len() {
            if s[c] > s[best] {
                best = c;
            }
        }
        return best;
    }
    for c in 1..joint.len() {
        if joint[c].cmp(&joint[best]) == Ordering::Greater {
            best = c;
        }
    }
    best
}

/// Binary-skill convenience wrapper around [`bayes_oracle`].
pub fn bayes_oracle_binary(s: [f64; 2], skills: &[(f64, f64)], votes: &[u8]) -> usize {
    let confusions: Vec<Vec<Vec<f64>>> = skills
        .iter()
        .map(|&(p0, p1)| vec![vec![p0, 1.0 - p0], vec![1.0 - p1, p1]])
        .collect();
    let votes: Vec<usize> = votes.iter().map(|&b| b as usize).collect();
    bayes_oracle(&s, &confusions, &votes)
}

/// Monte-Carlo Bayes-optimal accuracy with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimalAccuracy {
    pub accuracy: f64,
    pub stderr: f64,
    pub samples: usize,
}

/// Decide `samples` fresh items of the world with the true parameters.
/// The draw uses `seed` in place of the world's own seed.
pub fn optimal_accuracy(spec: &CiWorldSpec, samples: usize, seed: u64) -> Result<OptimalAccuracy> {
    if samples == 0 {
        return Err(Error::Config("optimal_accuracy needs at least one sample".into()));
    }
    let world = CiWorldSpec {
        n: samples,
        seed,
        ..spec.clone()
    };
    let ds = generate(&world)?;
    let confusions: Vec<Vec<Vec<f64>>> = spec.skills.iter().map(JudgeSkill::confusion).collect();
    let mut hits = 0usize;
    for (n, item) in ds.items().iter().enumerate() {
        let s = spec.class_posterior(item.embedding().expect("generated items carry embeddings"));
        let votes: Vec<usize> = (0..ds.num_judges()).map(|k| ds.hard_vote(n, k)).collect();
        if Some(bayes_oracle(&s, &confusions, &votes)) == item.label() {
            hits += 1;
        }
    }
    let acc = hits as f64 / samples as f64;
    Ok(OptimalAccuracy {
        accuracy: acc,
        stderr: (acc * (1.0 - acc) / samples as f64).sqrt(),
        samples,
    })
}
