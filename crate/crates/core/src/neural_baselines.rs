//! Context-dependent baselines: Crowdlayer and train-on-majority-vote.
//!
//! Both fit the bottleneck classifier and decide by `argmax s`; judge votes
//! never enter inference. Crowdlayer learns a row-stochastic transform per
//! judge between `s` and that judge's vote distribution. Train-on-majority is
//! the same network with one frozen identity head fitted to one-hot majority
//! labels.

use serde::{Deserialize, Serialize};

use crate::baselines::majority_vote;
use crate::dataset::{argmax, GroupEstimates, Item, JudgmentDataset};
use crate::error::{Error, Result};
use crate::multiclass::{train_model, Confusion, DevDecision, MulticlassConfig, MulticlassSkillModel};
use crate::neural::{OptimizerConfig, ParamStore, TrainReport};
use crate::skill_agg::SkillMode;

pub const CROWDLAYER: &str = "crowdlayer";
pub const TRAIN_ON_MAJORITY: &str = "train-mv";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CrowdlayerConfig {
    /// Diagonal of the initial transforms. When absent the transform logits
    /// start at the identity matrix, i.e. a diagonal of `e / (e + C - 1)`.
    pub init_diagonal: Option<f64>,
}

impl CrowdlayerConfig {
    pub fn diagonal(&self, classes: usize) -> f64 {
        self.init_diagonal
            .unwrap_or_else(|| std::f64::consts::E / (std::f64::consts::E + classes as f64 - 1.0))
    }
}

/// A trained bottleneck classifier with its training-time judge heads.
#[derive(Debug, Clone, PartialEq)]
pub struct NeuralBaseline {
    method: String,
    net: MulticlassSkillModel,
}

impl NeuralBaseline {
    pub fn method(&self) -> &str {
        &self.method
    }

    pub fn params(&self) -> &ParamStore {
        self.net.params()
    }

    pub fn num_classes(&self) -> usize {
        self.net.num_classes()
    }

    pub fn bottleneck(&self, e: &[f64]) -> Result<Vec<f64>> {
        self.net.bottleneck(e)
    }

    /// `argmax s`, ties to the smallest class index.
    pub fn infer(&self, e: &[f64]) -> Result<usize> {
        Ok(argmax(&self.net.bottleneck(e)?))
    }

    pub fn infer_item(&self, item: &Item) -> Result<usize> {
        let e = item
            .embedding()
            .ok_or_else(|| Error::Data(format!("item {:?} has no embedding", item.id())))?;
        self.infer(e)
    }

    /// Group estimates for every item of `ds`; judge columns are not read.
    pub fn estimates(&self, ds: &JudgmentDataset) -> Result<GroupEstimates> {
        let mut estimates = Vec::with_capacity(ds.len());
        let mut scores = Vec::with_capacity(ds.len());
        for item in ds.items() {
            let e = item
                .embedding()
                .ok_or_else(|| Error::Data(format!("item {:?} has no embedding", item.id())))?;
            let s = self.net.bottleneck(e)?;
            let c = argmax(&s);
            scores.push(if s.len() == 2 { s[1] } else { s[c] });
            estimates.push(c);
        }
        Ok(GroupEstimates::new(self.method.clone(), ds, estimates, Some(scores)))
    }

    /// Learned transforms averaged over `ds` (identity for frozen heads).
    pub fn transforms(&self, ds: &JudgmentDataset) -> Result<Vec<Confusion>> {
        self.net.mean_confusions(ds)
    }

    pub fn checkpoint_metadata(&self) -> serde_json::Value {
        self.net.checkpoint_metadata(&self.method)
    }

    pub fn from_checkpoint(params: ParamStore, metadata: &serde_json::Value) -> Result<Self> {
        let method = metadata["kind"].as_str().unwrap_or_default().to_string();
        if method != CROWDLAYER && method != TRAIN_ON_MAJORITY {
            return Err(Error::Data(format!("checkpoint kind {method:?} is not a neural baseline")));
        }
        let net = MulticlassSkillModel::from_checkpoint(params, metadata, &method)?;
        Ok(Self { method, net })
    }
}

fn embedding_dim(ds: &JudgmentDataset) -> Result<usize> {
    ds.embedding_dim()
        .ok_or_else(|| Error::Data("this method requires embeddings".into()))
}

/// Crowdlayer with learned per-judge transforms.
pub fn crowdlayer_train(
    ds: &JudgmentDataset,
    dev: Option<&JudgmentDataset>,
    optimizer: &OptimizerConfig,
    config: &CrowdlayerConfig,
) -> Result<(NeuralBaseline, TrainReport)> {
    let model_config = MulticlassConfig {
        mode: SkillMode::Task,
        lambda: 0.0,
        init_diagonal: config.diagonal(ds.num_classes()),
        ..Default::default()
    };
    let net = MulticlassSkillModel::new(ds.num_judges(), ds.num_classes(), embedding_dim(ds)?, model_config, optimizer.seed)?;
    let (net, report) = train_model(net, ds, dev, optimizer, DevDecision::Bottleneck)?;
    Ok((
        NeuralBaseline {
            method: CROWDLAYER.into(),
            net,
        },
        report,
    ))
}

/// Crowdlayer whose transforms are frozen to the identity.
pub fn crowdlayer_train_frozen(
    ds: &JudgmentDataset,
    dev: Option<&JudgmentDataset>,
    optimizer: &OptimizerConfig,
) -> Result<(NeuralBaseline, TrainReport)> {
    let net = MulticlassSkillModel::identity(ds.num_judges(), ds.num_classes(), embedding_dim(ds)?, optimizer.seed)?;
    let (net, report) = train_model(net, ds, dev, optimizer, DevDecision::Bottleneck)?;
    Ok((
        NeuralBaseline {
            method: CROWDLAYER.into(),
            net,
        },
        report,
    ))
}

/// One-judge dataset whose judgments are one-hot majority-vote labels.
pub fn majority_targets(ds: &JudgmentDataset) -> Result<JudgmentDataset> {
    let mv = majority_vote(ds);
    let c = ds.num_classes();
    let items = ds
        .items()
        .iter()
        .zip(&mv.estimates)
        .map(|(item, &label)| {
            let judgments = if c == 2 {
                vec![label as f64]
            } else {
                (0..c).map(|b| if b == label { 1.0 } else { 0.0 }).collect()
            };
            let mut out = Item::new(item.id(), judgments);
            if let Some(e) = item.embedding() {
                out = out.with_embedding(e.to_vec());
            }
            out
        })
        .collect();
    JudgmentDataset::new(items, vec!["majority".into()], c)
}

/// Fit the bottleneck to majority-vote pseudo-labels with hard-label CE.
pub fn train_on_majority(
    ds: &JudgmentDataset,
    dev: Option<&JudgmentDataset>,
    optimizer: &OptimizerConfig,
) -> Result<(NeuralBaseline, TrainReport)> {
    let targets = majority_targets(ds)?;
    let dev_targets = dev.map(keep_labels_only).transpose()?;
    let (mut model, report) = crowdlayer_train_frozen(&targets, dev_targets.as_ref(), optimizer)?;
    model.method = TRAIN_ON_MAJORITY.into();
    Ok((model, report))
}

/// A dev set reshaped to the one-judge layout; only labels and embeddings matter.
fn keep_labels_only(dev: &JudgmentDataset) -> Result<JudgmentDataset> {
    let c = dev.num_classes();
    let width = if c == 2 { 1 } else { c };
    let items = dev
        .items()
        .iter()
        .map(|item| {
            let mut out = Item::new(item.id(), vec![1.0 / width as f64; width]);
            if let Some(e) = item.embedding() {
                out = out.with_embedding(e.to_vec());
            }
            if let Some(l) = item.label() {
                out = out.with_label(l);
            }
            out
        })
        .collect();
    JudgmentDataset::new(items, vec!["majority".into()], c)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::multiclass::tests::random_dataset as random_multiclass;
    use crate::skill_agg::tests::random_dataset;

    fn opt(epochs: usize) -> OptimizerConfig {
        OptimizerConfig {
            epochs,
            batch_size: 8,
            learning_rate: 0.01,
            seed: 7,
            ..Default::default()
        }
    }

    #[test]
    fn default_transforms_start_from_identity_logits() {
        let ds = random_multiclass(6, 2, 3, 3, 1);
        let (m, _) = crowdlayer_train(&ds, None, &opt(0), &CrowdlayerConfig::default()).unwrap();
        let logits = &m.params().tensor(2).data;
        for (i, v) in logits.iter().enumerate() {
            let want = if (i % 9) % 4 == 0 { 1.0 } else { 0.0 };
            assert!((v - want).abs() < 1e-12);
        }
    }

    #[test]
    fn frozen_transforms_predict_s() {
        let ds = random_dataset(10, 2, 3, 1);
        let (m, _) = crowdlayer_train_frozen(&ds, None, &opt(0)).unwrap();
        for conf in m.transforms(&ds).unwrap() {
            assert_eq!(conf, Confusion::identity(2));
        }
    }

    #[test]
    fn inference_examples() {
        let ds = random_dataset(4, 2, 2, 1);
        let (mut m, _) = crowdlayer_train_frozen(&ds, None, &opt(0)).unwrap();
        for t in m.net.params_mut().tensors_mut() {
            t.data.fill(0.0);
        }
        assert_eq!(m.infer(&[1.0, 1.0]).unwrap(), 0);
        let bias = m.net.params().index_of(crate::neural::BOTTLENECK_BIAS).unwrap();
        m.net.params_mut().tensor_mut(bias).data = vec![0.7f64.ln(), 0.3f64.ln()];
        assert_eq!(m.infer(&[0.3, -2.0]).unwrap(), 0);
    }

    #[test]
    fn inference_ignores_votes() {
        let ds = random_dataset(30, 3, 4, 2);
        let (m, _) = crowdlayer_train(&ds, None, &opt(2), &CrowdlayerConfig::default()).unwrap();
        let flipped: Vec<Item> = ds
            .items()
            .iter()
            .map(|i| {
                let y = i.judgments().iter().map(|v| 1.0 - v).collect();
                Item::new(i.id(), y).with_embedding(i.embedding().unwrap().to_vec())
            })
            .collect();
        let flipped = JudgmentDataset::with_default_names(flipped, 3, 2).unwrap();
        assert_eq!(m.estimates(&ds).unwrap().estimates, m.estimates(&flipped).unwrap().estimates);
    }

    #[test]
    fn frozen_crowdlayer_and_train_mv_share_trajectories() {
        for ds in [random_dataset(40, 3, 4, 3), random_multiclass(40, 3, 3, 4, 3)] {
            let dev = ds.subset(&(0..10).collect::<Vec<_>>());
            let targets = majority_targets(&ds).unwrap();
            let (a, ra) = crowdlayer_train_frozen(&targets, Some(&keep_labels_only(&dev).unwrap()), &opt(4)).unwrap();
            let (b, rb) = train_on_majority(&ds, Some(&dev), &opt(4)).unwrap();
            assert_eq!(a.params(), b.params());
            assert_eq!(ra, rb);
        }
    }

    #[test]
    fn zero_epochs_return_initial_model() {
        let ds = random_dataset(16, 2, 3, 4);
        let (a, _) = train_on_majority(&ds, None, &opt(0)).unwrap();
        let init = MulticlassSkillModel::identity(1, 2, 3, 7).unwrap();
        assert_eq!(a.params(), init.params());
        let (c, r) = crowdlayer_train(&ds, Some(&ds), &opt(0), &CrowdlayerConfig::default()).unwrap();
        assert_eq!(r.selected_epoch, 0);
        assert_eq!(c.params().tensor(0), init.params().tensor(0));
    }

    #[test]
    fn unanimous_separable_data_reaches_majority_accuracy() {
        let items: Vec<Item> = (0..80)
            .map(|i| {
                let c = i % 2;
                let x = if c == 1 { 2.0 } else { -2.0 };
                let y = if c == 1 { 0.9 } else { 0.1 };
                Item::new(format!("i{i}"), vec![y; 3]).with_embedding(vec![x, 0.5]).with_label(c)
            })
            .collect();
        let ds = JudgmentDataset::with_default_names(items, 3, 2).unwrap();
        let o = OptimizerConfig {
            epochs: 20,
            learning_rate: 0.05,
            batch_size: 16,
            ..Default::default()
        };
        let (m, _) = train_on_majority(&ds, Some(&ds), &o).unwrap();
        let est = m.estimates(&ds).unwrap();
        let labels: Vec<usize> = ds.items().iter().map(|i| i.label().unwrap()).collect();
        assert_eq!(est.estimates, labels);
    }

    #[test]
    fn checkpoint_round_trip() {
        let ds = random_dataset(10, 2, 3, 1);
        for (m, _) in [
            crowdlayer_train(&ds, None, &opt(1), &CrowdlayerConfig::default()).unwrap(),
            train_on_majority(&ds, None, &opt(1)).unwrap(),
        ] {
            let meta = m.checkpoint_metadata();
            let bytes = crate::neural::checkpoint::encode_checkpoint(m.params(), &meta);
            let (p, meta) = crate::neural::checkpoint::decode_checkpoint(&bytes).unwrap();
            assert_eq!(NeuralBaseline::from_checkpoint(p, &meta).unwrap(), m);
        }
    }
}
