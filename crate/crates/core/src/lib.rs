//! Reference-free aggregation of probabilistic judgments from K unreliable
//! judges: averaging, majority voting, Dawid-Skene EM, Crowdlayer and
//! SkillAggregation (task- and context-specific skills, regularized training,
//! posterior inference), plus a conditional-independence data generator and
//! an evaluation harness.

pub mod baselines;
pub mod dataset;
pub mod dawid_skene;
pub mod error;
pub mod eval;
pub mod multiclass;
pub mod neural;
pub mod neural_baselines;
pub mod pipeline;
pub mod skill_agg;
pub mod synthetic;

pub use dataset::{GroupEstimates, Item, JudgmentDataset};
pub use error::{Error, ErrorKind, Result};
