//! Two-coin Dawid-Skene EM over binarized votes.
//!
//! Each judge k has `p1 = P(b=1 | c=1)` and `p0 = P(b=0 | c=0)`. The class
//! prior is fixed at 0.5, so the E-step posterior is
//!
//! ```text
//! q_n = foo / (foo + bar)
//! foo = Π_k p1^b (1-p1)^(1-b)
//! bar = Π_k p0^(1-b) (1-p0)^b
//! ```
//!
//! computed in log-space with entries clamped to `[1e-10, 1 - 1e-10]`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{GroupEstimates, JudgmentDataset};
use crate::error::{Error, Result};

pub const METHOD_NAME: &str = "dawid-skene";

const CLAMP: f64 = 1e-10;

/// Confusion entries for one judge.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JudgeConfusion {
    /// P(b = 0 | c = 0)
    pub p0: f64,
    /// P(b = 1 | c = 1)
    pub p1: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DsDiagnostics {
    /// Items whose E-step normalizer was degenerate (q forced to 0.5).
    pub degenerate_items: usize,
    /// M-steps where Σq = 0 left the class-1 column unchanged.
    pub collapsed_class1: usize,
    /// M-steps where Σ(1-q) = 0 left the class-0 column unchanged.
    pub collapsed_class0: usize,
    /// Whether the final state was label-flipped during canonicalization.
    pub flipped: bool,
    /// Items whose final likelihood ratio was exactly 1 (assigned 0).
    pub tied_items: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DsState {
    pub confusion: Vec<JudgeConfusion>,
    /// Per-item posterior P(c_n = 1); empty until the first E-step.
    pub q: Vec<f64>,
    pub iteration: usize,
    pub converged: bool,
    pub diagnostics: DsDiagnostics,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DsConfig {
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for DsConfig {
    fn default() -> Self {
        Self {
            max_iter: 100,
            tol: 1e-6,
        }
    }
}

/// Draw every confusion entry from U[0.5, 1].
pub fn ds_init(num_judges: usize, seed: u64) -> DsState {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let confusion = (0..num_judges)
        .map(|_| {
            let p0 = rng.random_range(0.5..=1.0);
            let p1 = rng.random_range(0.5..=1.0);
            JudgeConfusion { p0, p1 }
        })
        .collect();
    DsState {
        confusion,
        q: Vec::new(),
        iteration: 0,
        converged: false,
        diagnostics: DsDiagnostics::default(),
    }
}

fn clamp(p: f64) -> f64 {
    p.clamp(CLAMP, 1.0 - CLAMP)
}

/// ln(foo) - ln(bar) for one item's votes.
fn log_ratio(confusion: &[JudgeConfusion], votes: &[u8]) -> f64 {
    let mut log_foo = 0.0;
    let mut log_bar = 0.0;
    for (c, &b) in confusion.iter().zip(votes) {
        let (p0, p1) = (clamp(c.p0), clamp(c.p1));
        if b == 1 {
            log_foo += p1.ln();
            log_bar += (1.0 - p0).ln();
        } else {
            log_foo += (1.0 - p1).ln();
            log_bar += p0.ln();
        }
    }
    log_foo - log_bar
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn check_votes(state: &DsState, votes: &[Vec<u8>]) -> Result<()> {
    let k = state.confusion.len();
    if let Some(row) = votes.iter().find(|r| r.len() != k || r.iter().any(|&b| b > 1)) {
        return Err(Error::Data(format!(
            "vote row {row:?} does not match {k} binary judges"
        )));
    }
    Ok(())
}

/// Posterior q_n = P(c_n = 1 | votes) under the current confusion values.
pub fn ds_e_step(mut state: DsState, votes: &[Vec<u8>]) -> Result<DsState> {
    check_votes(&state, votes)?;
    state.q = votes
        .iter()
        .map(|row| {
            let lr = log_ratio(&state.confusion, row);
            if lr.is_nan() {
                state.diagnostics.degenerate_items += 1;
                0.5
            } else {
                sigmoid(lr)
            }
        })
        .collect();
    Ok(state)
}

/// Re-estimate confusion values from the current posteriors.
pub fn ds_m_step(mut state: DsState, votes: &[Vec<u8>]) -> Result<DsState> {
    check_votes(&state, votes)?;
    if state.q.len() != votes.len() {
        return Err(Error::Data("m-step called before the e-step populated q".into()));
    }
    let sum_q: f64 = state.q.iter().sum();
    let sum_not_q: f64 = state.q.iter().map(|q| 1.0 - q).sum();
    if sum_q == 0.0 {
        state.diagnostics.collapsed_class1 += 1;
    }
    if sum_not_q == 0.0 {
        state.diagnostics.collapsed_class0 += 1;
    }
    for (k, conf) in state.confusion.iter_mut().enumerate() {
        let mut hit1 = 0.0;
        let mut hit0 = 0.0;
        for (row, &q) in votes.iter().zip(&state.q) {
            if row[k] == 1 {
                hit1 += q;
            } else {
                hit0 += 1.0 - q;
            }
        }
        if sum_q != 0.0 {
            conf.p1 = hit1 / sum_q;
        }
        if sum_not_q != 0.0 {
            conf.p0 = hit0 / sum_not_q;
        }
    }
    Ok(state)
}

/// Observed-data log-likelihood of the votes with a uniform class prior.
pub fn log_likelihood(state: &DsState, votes: &[Vec<u8>]) -> f64 {
    votes
        .iter()
        .map(|row| {
            let mut log_foo = 0.0;
            let mut log_bar = 0.0;
            for (c, &b) in state.confusion.iter().zip(row) {
                let (p0, p1) = (clamp(c.p0), clamp(c.p1));
                log_foo += if b == 1 { p1.ln() } else { (1.0 - p1).ln() };
                log_bar += if b == 1 { (1.0 - p0).ln() } else { p0.ln() };
            }
            let m = log_foo.max(log_bar);
            m + (0.5 * ((log_foo - m).exp() + (log_bar - m).exp())).ln()
        })
        .sum()
}

fn max_change(a: &[JudgeConfusion], b: &[JudgeConfusion]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x.p0 - y.p0).abs().max((x.p1 - y.p1).abs()))
        .fold(0.0, f64::max)
}

/// Binary hard votes as a 0/1 matrix.
pub fn binary_votes(ds: &JudgmentDataset) -> Result<Vec<Vec<u8>>> {
    if !ds.is_binary() {
        return Err(Error::Config("Dawid-Skene requires a binary dataset".into()));
    }
    Ok(ds
        .hard_votes()
        .into_iter()
        .map(|row| row.into_iter().map(|v| v as u8).collect())
        .collect())
}

/// Run EM until `max_iter` iterations or a max-norm change ≤ `tol`, then assign
/// `1[foo / bar > 1]` from the final confusion values.
pub fn ds_run(ds: &JudgmentDataset, config: &DsConfig, seed: u64) -> Result<(GroupEstimates, DsState)> {
    let votes = binary_votes(ds)?;
    let mut state = ds_init(ds.num_judges(), seed);
    if config.max_iter == 0 {
        log::warn!("dawid-skene: max_iter = 0, labels come from the random initialization");
    }
    while state.iteration < config.max_iter {
        let previous = state.confusion.clone();
        state = ds_e_step(state, &votes)?;
        state = ds_m_step(state, &votes)?;
        state.iteration += 1;
        if max_change(&state.confusion, &previous) <= config.tol {
            state.converged = true;
            break;
        }
    }

    let mean_diag: f64 =
        state.confusion.iter().map(|c| (c.p0 + c.p1) / 2.0).sum::<f64>() / state.confusion.len() as f64;
    if mean_diag < 0.5 {
        for c in &mut state.confusion {
            *c = JudgeConfusion {
                p0: 1.0 - c.p1,
                p1: 1.0 - c.p0,
            };
        }
        state.diagnostics.flipped = true;
    }

    state = ds_e_step(state, &votes)?;
    let estimates = votes
        .iter()
        .map(|row| {
            let lr = log_ratio(&state.confusion, row);
            if lr == 0.0 {
                state.diagnostics.tied_items += 1;
            }
            usize::from(lr > 0.0)
        })
        .collect();
    let est = GroupEstimates::new(METHOD_NAME, ds, estimates, Some(state.q.clone()));
    Ok((est, state))
}

/// JSON document of per-judge confusion values.
pub fn state_report(state: &DsState, judge_names: &[String]) -> serde_json::Value {
    let judges: Vec<serde_json::Value> = judge_names
        .iter()
        .zip(&state.confusion)
        .map(|(name, c)| serde_json::json!({ "name": name, "p0": c.p0, "p1": c.p1 }))
        .collect();
    serde_json::json!({
        "judges": judges,
        "iterations": state.iteration,
        "converged": state.converged,
        "diagnostics": state.diagnostics,
    })
}
