//! Method roster, run configuration, and a single entry point that runs any
//! method on a dataset.

use std::fmt;
use std::str::FromStr;

use log::{info, warn};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::baselines::{average_prob, majority_vote};
use crate::dataset::{split_dev, GroupEstimates, JudgmentDataset};
use crate::dawid_skene::{ds_run, state_report, DsConfig};
use crate::error::{Error, Result};
use crate::multiclass::{self, MulticlassConfig, MulticlassSkillModel};
use crate::neural::{OptimizerConfig, ParamStore};
use crate::neural_baselines::{crowdlayer_train, train_on_majority, CrowdlayerConfig};
use crate::skill_agg::{train_tuned, SkillAggConfig, SkillAggModel, SkillMode};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Average,
    Majority,
    DawidSkene,
    Crowdlayer,
    TrainMv,
    Skillagg,
    SkillaggX,
    SkillaggNoreg,
}

impl Method {
    pub const ALL: [Method; 8] = [
        Method::Average,
        Method::Majority,
        Method::DawidSkene,
        Method::Crowdlayer,
        Method::TrainMv,
        Method::Skillagg,
        Method::SkillaggX,
        Method::SkillaggNoreg,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Average => "average",
            Method::Majority => "majority",
            Method::DawidSkene => "dawid-skene",
            Method::Crowdlayer => "crowdlayer",
            Method::TrainMv => "train-mv",
            Method::Skillagg => "skillagg",
            Method::SkillaggX => "skillagg-x",
            Method::SkillaggNoreg => "skillagg-noreg",
        }
    }

    /// Whether the method trains a network on embeddings.
    pub fn is_neural(self) -> bool {
        !matches!(self, Method::Average | Method::Majority | Method::DawidSkene)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| {
                let names: Vec<&str> = Method::ALL.iter().map(|m| m.name()).collect();
                Error::Config(format!("unknown method {s:?}; expected one of {}", names.join(", ")))
            })
    }
}

/// SkillAggregation options plus the optional λ search grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SkillAggSection {
    #[serde(flatten)]
    pub model: SkillAggConfig,
    /// When set and a dev set exists, λ is chosen from this grid.
    pub lambda_grid: Option<Vec<f64>>,
    /// Options for multi-class datasets.
    pub multiclass: MulticlassConfig,
}

impl SkillAggSection {
    fn preset(model: SkillAggConfig) -> Self {
        let multiclass = MulticlassConfig {
            mode: model.mode,
            skill_input: model.skill_input,
            lambda: model.lambda,
            init_diagonal: model.init_skill,
        };
        Self {
            model,
            lambda_grid: None,
            multiclass,
        }
    }
}

impl Default for SkillAggSection {
    fn default() -> Self {
        Self::preset(SkillAggConfig::default())
    }
}

fn default_skillagg_x() -> SkillAggSection {
    SkillAggSection::preset(SkillAggConfig::context())
}

fn default_skillagg_noreg() -> SkillAggSection {
    SkillAggSection::preset(SkillAggConfig::no_reg())
}

/// Merge `patch` into `base`, recursing into objects. Keys absent from `base`
/// are errors, so typos inside a section are caught despite the flattening.
fn overlay(base: &mut serde_json::Value, patch: serde_json::Value, path: &str) -> std::result::Result<(), String> {
    match (base, patch) {
        (serde_json::Value::Object(b), serde_json::Value::Object(p)) => {
            for (key, value) in p {
                let here = format!("{path}.{key}");
                match b.get_mut(&key) {
                    Some(slot) if slot.is_object() => overlay(slot, value, &here)?,
                    Some(slot) => *slot = value,
                    None => return Err(format!("unknown field `{here}`")),
                }
            }
            Ok(())
        }
        (b, p) => {
            *b = p;
            Ok(())
        }
    }
}

/// A partial section only overrides the keys it names; the rest keep the
/// method's preset (context heads for `skillagg_x`, λ = 0 for `skillagg_noreg`).
fn section_over<'de, D>(preset: SkillAggSection, name: &str, d: D) -> std::result::Result<SkillAggSection, D::Error>
where
    D: serde::Deserializer<'de>,
{
    use serde::de::Error as _;
    let patch = serde_json::Value::deserialize(d)?;
    let mut base = serde_json::to_value(preset).map_err(D::Error::custom)?;
    overlay(&mut base, patch, name).map_err(D::Error::custom)?;
    serde_json::from_value(base).map_err(D::Error::custom)
}

fn skillagg_section<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<SkillAggSection, D::Error> {
    section_over(SkillAggSection::default(), "skillagg", d)
}

fn skillagg_x_section<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<SkillAggSection, D::Error> {
    section_over(default_skillagg_x(), "skillagg_x", d)
}

fn skillagg_noreg_section<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<SkillAggSection, D::Error> {
    section_over(default_skillagg_noreg(), "skillagg_noreg", d)
}

/// One JSON document configuring every method. Fields are optional.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    /// Labeled items held out for checkpoint and λ selection; 0 disables.
    pub dev_size: usize,
    pub optimizer: OptimizerConfig,
    pub dawid_skene: DsConfig,
    pub crowdlayer: CrowdlayerConfig,
    #[serde(deserialize_with = "skillagg_section")]
    pub skillagg: SkillAggSection,
    #[serde(deserialize_with = "skillagg_x_section")]
    pub skillagg_x: SkillAggSection,
    #[serde(deserialize_with = "skillagg_noreg_section")]
    pub skillagg_noreg: SkillAggSection,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            dev_size: 250,
            optimizer: OptimizerConfig::default(),
            dawid_skene: DsConfig::default(),
            crowdlayer: CrowdlayerConfig::default(),
            skillagg: SkillAggSection::default(),
            skillagg_x: default_skillagg_x(),
            skillagg_noreg: default_skillagg_noreg(),
        }
    }
}

impl PipelineConfig {
    /// SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }

    /// The optimizer config with the run seed applied.
    pub fn optimizer(&self) -> OptimizerConfig {
        OptimizerConfig {
            seed: self.seed,
            ..self.optimizer.clone()
        }
    }

    fn section(&self, method: Method) -> &SkillAggSection {
        match method {
            Method::SkillaggX => &self.skillagg_x,
            Method::SkillaggNoreg => &self.skillagg_noreg,
            _ => &self.skillagg,
        }
    }
}

/// Dev/evaluation split used by every method of a run.
#[derive(Debug, Clone)]
pub struct Split {
    pub dev: Option<JudgmentDataset>,
    pub rest: JudgmentDataset,
}

/// Hold out `dev_size` labeled items when the data has enough of them.
pub fn prepare_split(ds: &JudgmentDataset, config: &PipelineConfig) -> Result<Split> {
    let labeled = ds.items().iter().filter(|i| i.has_label()).count();
    if config.dev_size == 0 || labeled < config.dev_size {
        if config.dev_size > 0 {
            warn!(
                "{labeled} labeled items is fewer than dev_size {}; no dev set",
                config.dev_size
            );
        }
        return Ok(Split {
            dev: None,
            rest: ds.clone(),
        });
    }
    let (dev, rest) = split_dev(ds, config.dev_size, config.seed)?;
    Ok(Split { dev: Some(dev), rest })
}

/// Everything a method run produces.
#[derive(Debug, Clone)]
pub struct MethodOutput {
    pub estimates: GroupEstimates,
    /// Method-specific details (skills, confusions, training curves).
    pub report: serde_json::Value,
    /// Trained parameters and checkpoint metadata for neural methods.
    pub checkpoint: Option<(ParamStore, serde_json::Value)>,
}

fn simple(estimates: GroupEstimates) -> MethodOutput {
    MethodOutput {
        estimates,
        report: serde_json::json!({}),
        checkpoint: None,
    }
}

fn to_json<T: Serialize>(value: &T) -> serde_json::Value {
    serde_json::to_value(value).expect("report serializes")
}

/// Run `method` on `ds`, using `dev` (if any) for model selection.
pub fn run_method(
    method: Method,
    ds: &JudgmentDataset,
    dev: Option<&JudgmentDataset>,
    config: &PipelineConfig,
) -> Result<MethodOutput> {
    if method.is_neural() {
        if !ds.has_embeddings() {
            return Err(Error::Data(format!("method {method} requires embeddings")));
        }
        if dev.is_none() && config.dev_size > 0 {
            return Err(Error::Data(format!(
                "method {method} needs a dev set of {} labeled items; set dev_size to 0 to keep the final epoch instead",
                config.dev_size
            )));
        }
    }
    let optimizer = config.optimizer();
    info!("running {method} on {} items", ds.len());
    match method {
        Method::Average => average_prob(ds).map(simple),
        Method::Majority => Ok(simple(majority_vote(ds))),
        Method::DawidSkene => {
            let (estimates, state) = ds_run(ds, &config.dawid_skene, config.seed)?;
            Ok(MethodOutput {
                estimates,
                report: state_report(&state, ds.judge_names()),
                checkpoint: None,
            })
        }
        Method::Crowdlayer | Method::TrainMv => {
            let (model, train) = if method == Method::Crowdlayer {
                crowdlayer_train(ds, dev, &optimizer, &config.crowdlayer)?
            } else {
                train_on_majority(ds, dev, &optimizer)?
            };
            let mut report = serde_json::json!({ "train": to_json(&train) });
            if method == Method::Crowdlayer {
                report["transforms"] = to_json(&model.transforms(ds)?);
            }
            Ok(MethodOutput {
                estimates: model.estimates(ds)?,
                report,
                checkpoint: Some((model.params().clone(), model.checkpoint_metadata())),
            })
        }
        Method::Skillagg | Method::SkillaggX | Method::SkillaggNoreg => {
            let section = config.section(method);
            if ds.is_binary() {
                run_binary_skillagg(method, section, ds, dev, &optimizer)
            } else {
                run_multiclass_skillagg(method, section, ds, dev, &optimizer)
            }
        }
    }
}

fn run_binary_skillagg(
    method: Method,
    section: &SkillAggSection,
    ds: &JudgmentDataset,
    dev: Option<&JudgmentDataset>,
    optimizer: &OptimizerConfig,
) -> Result<MethodOutput> {
    let grid = match (&section.lambda_grid, dev) {
        (Some(grid), Some(_)) => grid.clone(),
        _ => vec![section.model.lambda],
    };
    let tuned = train_tuned(ds, dev, optimizer, &section.model, &grid)?;
    let model: &SkillAggModel = &tuned.model;
    let search: Vec<serde_json::Value> = tuned
        .search
        .iter()
        .map(|(l, a)| serde_json::json!({ "lambda": l, "dev_accuracy": a }))
        .collect();
    let report = serde_json::json!({
        "mode": section.model.mode,
        "lambda": tuned.lambda,
        "dev_accuracy": tuned.dev_accuracy(),
        "lambda_search": search,
        "train": to_json(&tuned.report),
        "skills": to_json(&model.skill_summary(ds)?),
    });
    Ok(MethodOutput {
        estimates: model.infer(ds, method.name())?,
        report,
        checkpoint: Some((model.params().clone(), model.checkpoint_metadata())),
    })
}

fn run_multiclass_skillagg(
    method: Method,
    section: &SkillAggSection,
    ds: &JudgmentDataset,
    dev: Option<&JudgmentDataset>,
    optimizer: &OptimizerConfig,
) -> Result<MethodOutput> {
    let mut cfg = section.multiclass.clone();
    cfg.mode = section.model.mode;
    cfg.skill_input = section.model.skill_input;
    cfg.lambda = section.model.lambda;
    if section.lambda_grid.is_some() {
        warn!("{method}: lambda_grid is only used for binary data");
    }
    let (model, train): (MulticlassSkillModel, _) = multiclass::train(ds, dev, optimizer, &cfg)?;
    let report = serde_json::json!({
        "mode": cfg.mode,
        "lambda": cfg.lambda,
        "train": to_json(&train),
        "confusions": to_json(&model.mean_confusions(ds)?),
    });
    let kind = if cfg.mode == SkillMode::Context { "multiclass-x" } else { "multiclass" };
    Ok(MethodOutput {
        estimates: model.infer(ds, method.name())?,
        report,
        checkpoint: Some((model.params().clone(), model.checkpoint_metadata(kind))),
    })
}
