//! Context-independent baselines: probability averaging and majority voting.

use crate::dataset::{argmax, binarize, GroupEstimates, JudgmentDataset};
use crate::error::{Error, Result};

pub const AVERAGE_PROB: &str = "average";
pub const MAJORITY_VOTE: &str = "majority";

/// Means within this distance of 0.5 count as ties. Summation error on
/// decimal inputs (0.7 + 0.7 + 0.1) would otherwise break exact ties.
pub const AVERAGE_TIE_TOLERANCE: f64 = 1e-12;

/// Predict 1 when the judges' mean probability exceeds 0.5; ties go to 0.
/// Scores are the means.
pub fn average_prob(ds: &JudgmentDataset) -> Result<GroupEstimates> {
    if !ds.is_binary() {
        return Err(Error::Config("average_prob requires a binary dataset".into()));
    }
    let k = ds.num_judges() as f64;
    let means: Vec<f64> = ds
        .items()
        .iter()
        .map(|item| item.judgments().iter().sum::<f64>() / k)
        .collect();
    let estimates = means.iter().map(|&m| usize::from(m > 0.5 + AVERAGE_TIE_TOLERANCE)).collect();
    Ok(GroupEstimates::new(AVERAGE_PROB, ds, estimates, Some(means)))
}

/// Plurality of hard votes. In binary mode this is `1[mean vote > 0.5]`, so an
/// even split goes to 0; in multi-class mode ties go to the smallest class.
/// Scores are the vote share of the winning class (binary: share of 1-votes).
pub fn majority_vote(ds: &JudgmentDataset) -> GroupEstimates {
    let k = ds.num_judges();
    let c = ds.num_classes();
    let mut estimates = Vec::with_capacity(ds.len());
    let mut scores = Vec::with_capacity(ds.len());
    for n in 0..ds.len() {
        let mut counts = vec![0usize; c];
        for j in 0..k {
            counts[ds.hard_vote(n, j)] += 1;
        }
        if ds.is_binary() {
            let share = counts[1] as f64 / k as f64;
            estimates.push(binarize(share).as_class());
            scores.push(share);
        } else {
            let shares: Vec<f64> = counts.iter().map(|&x| x as f64 / k as f64).collect();
            let winner = argmax(&shares);
            estimates.push(winner);
            scores.push(shares[winner]);
        }
    }
    GroupEstimates::new(MAJORITY_VOTE, ds, estimates, Some(scores))
}
