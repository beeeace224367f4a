//! Domain types for judgment datasets, plus ingestion and serialization.
//!
//! Judgments live in a UTF-8 JSONL file, one record per item:
//!
//! ```text
//! {"id": "q17", "judgments": [0.91, 0.12, 0.66], "label": 1}
//! ```
//!
//! Multi-class records carry one probability vector per judge instead of a
//! scalar (`"judgments": [[0.1, 0.7, 0.2], ...]`). Embeddings are stored
//! out-of-line in a dense little-endian binary file (see [`save_embeddings`]).

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Magic bytes opening an embeddings file.
pub const EMBEDDINGS_MAGIC: &[u8; 8] = b"SKAGEMB1";

/// Row sums of multi-class judgment vectors must be within this of 1.
const ROW_SUM_TOLERANCE: f64 = 1e-6;

/// Label-read auditing. Aggregation code must never look at ground truth;
/// tests reset the counter, run a method and assert it stayed at zero.
pub mod audit {
    use std::cell::Cell;

    thread_local! {
        static LABEL_READS: Cell<u64> = const { Cell::new(0) };
    }

    pub(crate) fn record() {
        LABEL_READS.with(|c| c.set(c.get() + 1));
    }

    /// Number of `Item::label` reads on the current thread since the last reset.
    pub fn label_reads() -> u64 {
        LABEL_READS.with(|c| c.get())
    }

    pub fn reset_label_reads() {
        LABEL_READS.with(|c| c.set(0));
    }
}

/// Normalized probability that a judge emits the positive decision.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct JudgeProbability(f64);

impl JudgeProbability {
    pub fn new(value: f64) -> Result<Self> {
        if value.is_finite() && (0.0..=1.0).contains(&value) {
            Ok(Self(value))
        } else {
            Err(Error::Data(format!("probability {value} outside [0, 1]")))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }

    pub fn binarize(self) -> BinaryVote {
        binarize(self.0)
    }
}

impl TryFrom<f64> for JudgeProbability {
    type Error = Error;
    fn try_from(value: f64) -> Result<Self> {
        Self::new(value)
    }
}

impl From<JudgeProbability> for f64 {
    fn from(p: JudgeProbability) -> f64 {
        p.0
    }
}

/// A hard binary decision.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct BinaryVote(bool);

impl BinaryVote {
    pub const ZERO: BinaryVote = BinaryVote(false);
    pub const ONE: BinaryVote = BinaryVote(true);

    pub fn is_positive(self) -> bool {
        self.0
    }

    pub fn as_u8(self) -> u8 {
        u8::from(self.0)
    }

    pub fn as_class(self) -> usize {
        usize::from(self.0)
    }
}

/// Normalize a raw (P(yes), P(no)) pair into the probability of the positive decision.
pub fn normalize_probability(p_yes: f64, p_no: f64) -> Result<JudgeProbability> {
    if !(p_yes.is_finite() && p_no.is_finite()) || p_yes < 0.0 || p_no < 0.0 {
        return Err(Error::Data(format!(
            "cannot normalize ({p_yes}, {p_no}): inputs must be finite and non-negative"
        )));
    }
    let total = p_yes + p_no;
    if total <= 0.0 {
        return Err(Error::Data("cannot normalize: both probabilities are zero".into()));
    }
    JudgeProbability::new(p_yes / total)
}

/// `1` exactly when `y > 0.5`; a tie at 0.5 goes to `0`.
pub fn binarize(y: f64) -> BinaryVote {
    BinaryVote(y > 0.5)
}

/// Index of the largest entry, smallest index on ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// One rated item: context embedding, K judgments and an optional label.
#[derive(Debug, Clone, PartialEq)]
pub struct Item {
    id: String,
    embedding: Option<Vec<f64>>,
    /// K values in binary mode, K×C row-major probability vectors otherwise.
    judgments: Vec<f64>,
    label: Option<usize>,
}

impl Item {
    pub fn new(id: impl Into<String>, judgments: Vec<f64>) -> Self {
        Self {
            id: id.into(),
            embedding: None,
            judgments,
            label: None,
        }
    }

    pub fn with_label(mut self, label: usize) -> Self {
        self.label = Some(label);
        self
    }

    pub fn with_embedding(mut self, embedding: Vec<f64>) -> Self {
        self.embedding = Some(embedding);
        self
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn embedding(&self) -> Option<&[f64]> {
        self.embedding.as_deref()
    }

    pub fn judgments(&self) -> &[f64] {
        &self.judgments
    }

    /// Ground-truth class. Every call is counted by [`audit`].
    pub fn label(&self) -> Option<usize> {
        audit::record();
        self.label
    }

    pub fn has_label(&self) -> bool {
        self.label.is_some()
    }

    pub(crate) fn set_embedding(&mut self, embedding: Vec<f64>) {
        self.embedding = Some(embedding);
    }
}

/// An ordered, validated collection of items rated by the same K judges.
#[derive(Debug, Clone, PartialEq)]
pub struct JudgmentDataset {
    items: Vec<Item>,
    judge_names: Vec<String>,
    num_classes: usize,
    embedding_dim: Option<usize>,
}

impl JudgmentDataset {
    pub fn new(items: Vec<Item>, judge_names: Vec<String>, num_classes: usize) -> Result<Self> {
        if num_classes < 2 {
            return Err(Error::Data(format!("num_classes must be >= 2, got {num_classes}")));
        }
        let k = judge_names.len();
        if k == 0 {
            return Err(Error::Data("at least one judge is required".into()));
        }
        let width = if num_classes == 2 { k } else { k * num_classes };
        let mut seen = HashSet::with_capacity(items.len());
        let embedding_dim = items.first().and_then(|i| i.embedding.as_ref().map(Vec::len));
        for item in &items {
            if !seen.insert(item.id.as_str()) {
                return Err(Error::Data(format!("duplicate item id {:?}", item.id)));
            }
            if item.judgments.len() != width {
                return Err(Error::Data(format!(
                    "item {:?} has {} judgment values, expected {width}",
                    item.id,
                    item.judgments.len()
                )));
            }
            validate_judgments(&item.judgments, num_classes)
                .map_err(|m| Error::Data(format!("item {:?}: {m}", item.id)))?;
            if let Some(label) = item.label {
                if label >= num_classes {
                    return Err(Error::Data(format!(
                        "item {:?} has label {label} outside 0..{num_classes}",
                        item.id
                    )));
                }
            }
            match (&item.embedding, embedding_dim) {
                (Some(e), Some(d)) if e.len() == d => {
                    if e.iter().any(|v| !v.is_finite()) {
                        return Err(Error::Data(format!("item {:?} has a non-finite embedding", item.id)));
                    }
                }
                (None, None) => {}
                (Some(e), Some(d)) => {
                    return Err(Error::Data(format!(
                        "item {:?} embedding has dimension {}, expected {d}",
                        item.id,
                        e.len()
                    )));
                }
                _ => return Err(Error::Data("embeddings must be present for all items or none".into())),
            }
        }
        Ok(Self {
            items,
            judge_names,
            num_classes,
            embedding_dim,
        })
    }

    /// Dataset with default judge names `judge_0..judge_{K-1}`.
    pub fn with_default_names(items: Vec<Item>, num_judges: usize, num_classes: usize) -> Result<Self> {
        Self::new(items, default_judge_names(num_judges), num_classes)
    }

    pub fn items(&self) -> &[Item] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn num_judges(&self) -> usize {
        self.judge_names.len()
    }

    pub fn judge_names(&self) -> &[String] {
        &self.judge_names
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn is_binary(&self) -> bool {
        self.num_classes == 2
    }

    pub fn embedding_dim(&self) -> Option<usize> {
        self.embedding_dim
    }

    pub fn has_embeddings(&self) -> bool {
        self.embedding_dim.is_some()
    }

    pub fn labeled_fraction(&self) -> f64 {
        if self.items.is_empty() {
            return 0.0;
        }
        self.items.iter().filter(|i| i.has_label()).count() as f64 / self.items.len() as f64
    }

    /// Binary-mode probability of judge `k` on item `n`.
    pub fn judgment(&self, n: usize, k: usize) -> f64 {
        debug_assert!(self.is_binary());
        self.items[n].judgments[k]
    }

    /// Probability vector of judge `k` on item `n`; binary mode yields `[1-y, y]`.
    pub fn judgment_vector(&self, n: usize, k: usize) -> Vec<f64> {
        if self.is_binary() {
            let y = self.items[n].judgments[k];
            vec![1.0 - y, y]
        } else {
            let c = self.num_classes;
            self.items[n].judgments[k * c..(k + 1) * c].to_vec()
        }
    }

    /// Hard class vote of judge `k` on item `n` (binarized or argmax).
    pub fn hard_vote(&self, n: usize, k: usize) -> usize {
        if self.is_binary() {
            binarize(self.items[n].judgments[k]).as_class()
        } else {
            let c = self.num_classes;
            argmax(&self.items[n].judgments[k * c..(k + 1) * c])
        }
    }

    /// N×K matrix of hard votes.
    pub fn hard_votes(&self) -> Vec<Vec<usize>> {
        (0..self.len())
            .map(|n| (0..self.num_judges()).map(|k| self.hard_vote(n, k)).collect())
            .collect()
    }

    /// Copy of the dataset with every label removed.
    pub fn without_labels(&self) -> Self {
        let mut out = self.clone();
        for item in &mut out.items {
            item.label = None;
        }
        out
    }

    /// Dataset restricted to the given judges, in the given order.
    pub fn select_judges(&self, judges: &[usize]) -> Result<Self> {
        if judges.is_empty() {
            return Err(Error::Config("judge subset must contain at least 1 judge".into()));
        }
        let k = self.num_judges();
        if let Some(&bad) = judges.iter().find(|&&j| j >= k) {
            return Err(Error::Config(format!("judge index {bad} out of range 0..{k}")));
        }
        let c = self.num_classes;
        let items = self
            .items
            .iter()
            .map(|item| {
                let judgments = if self.is_binary() {
                    judges.iter().map(|&j| item.judgments[j]).collect()
                } else {
                    judges
                        .iter()
                        .flat_map(|&j| item.judgments[j * c..(j + 1) * c].iter().copied())
                        .collect()
                };
                Item { judgments, ..item.clone() }
            })
            .collect();
        let names = judges.iter().map(|&j| self.judge_names[j].clone()).collect();
        Self::new(items, names, c)
    }

    /// Dataset containing the items at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            items: indices.iter().map(|&i| self.items[i].clone()).collect(),
            judge_names: self.judge_names.clone(),
            num_classes: self.num_classes,
            embedding_dim: self.embedding_dim,
        }
    }

    pub(crate) fn items_mut(&mut self) -> &mut [Item] {
        &mut self.items
    }

    pub(crate) fn refresh_embedding_dim(&mut self) {
        self.embedding_dim = self.items.first().and_then(|i| i.embedding.as_ref().map(Vec::len));
    }
}

pub fn default_judge_names(k: usize) -> Vec<String> {
    (0..k).map(|i| format!("judge_{i}")).collect()
}

fn validate_judgments(values: &[f64], num_classes: usize) -> std::result::Result<(), String> {
    if let Some(v) = values.iter().find(|v| !v.is_finite() || !(0.0..=1.0).contains(*v)) {
        return Err(format!("judgment value {v} outside [0, 1]"));
    }
    if num_classes > 2 {
        for row in values.chunks(num_classes) {
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
                return Err(format!("judgment vector sums to {sum}, expected 1"));
            }
        }
    }
    Ok(())
}

/// Aggregated per-item decisions produced by one method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupEstimates {
    pub method: String,
    pub ids: Vec<String>,
    pub estimates: Vec<usize>,
    pub scores: Option<Vec<f64>>,
}

impl GroupEstimates {
    pub fn new(method: impl Into<String>, ds: &JudgmentDataset, estimates: Vec<usize>, scores: Option<Vec<f64>>) -> Self {
        debug_assert_eq!(estimates.len(), ds.len());
        Self {
            method: method.into(),
            ids: ds.items().iter().map(|i| i.id().to_string()).collect(),
            estimates,
            scores,
        }
    }

    pub fn len(&self) -> usize {
        self.estimates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.estimates.is_empty()
    }
}

/// Options controlling [`load_judgments`].
#[derive(Debug, Clone, Default)]
pub struct IngestOptions {
    /// Embeddings file to attach; every item must have a row in it.
    pub embeddings: Option<PathBuf>,
    pub judge_names: Option<Vec<String>>,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum JudgmentsField {
    Binary(Vec<f64>),
    Multiclass(Vec<Vec<f64>>),
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct JudgmentRecord {
    id: String,
    judgments: JudgmentsField,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    label: Option<i64>,
}

#[derive(Serialize, Deserialize)]
struct EstimateRecord {
    id: String,
    estimate: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    score: Option<f64>,
}

/// Read a judgments JSONL file. Item order equals file order.
pub fn load_judgments(path: impl AsRef<Path>, options: &IngestOptions) -> Result<JudgmentDataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };

    let mut items = Vec::new();
    let mut shape: Option<(usize, usize)> = None; // (K, C)
    let mut seen = HashSet::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: JudgmentRecord =
            serde_json::from_str(&line).map_err(|e| parse_err(lineno, format!("malformed record: {e}")))?;
        let (k, c, judgments) = match record.judgments {
            JudgmentsField::Binary(v) => (v.len(), 2, v),
            JudgmentsField::Multiclass(rows) => {
                let c = rows.first().map_or(0, Vec::len);
                if c < 3 || rows.iter().any(|r| r.len() != c) {
                    return Err(parse_err(
                        lineno,
                        "multi-class judgments need equal-length vectors of at least 3 classes".into(),
                    ));
                }
                (rows.len(), c, rows.into_iter().flatten().collect())
            }
        };
        if k == 0 {
            return Err(parse_err(lineno, "record has no judgments".into()));
        }
        match shape {
            None => shape = Some((k, c)),
            Some((k0, c0)) if (k0, c0) != (k, c) => {
                return Err(parse_err(
                    lineno,
                    format!("inconsistent shape: {k} judges × {c} classes, expected {k0} × {c0}"),
                ));
            }
            _ => {}
        }
        validate_judgments(&judgments, c).map_err(|m| parse_err(lineno, m))?;
        if !seen.insert(record.id.clone()) {
            return Err(parse_err(lineno, format!("duplicate id {:?}", record.id)));
        }
        let mut item = Item::new(record.id, judgments);
        if let Some(label) = record.label {
            if label < 0 || label as usize >= c {
                return Err(parse_err(lineno, format!("label {label} outside 0..{c}")));
            }
            item.label = Some(label as usize);
        }
        items.push(item);
    }

    let (k, c) = shape.ok_or_else(|| Error::Data(format!("{}: no records", path.display())))?;
    let names = match &options.judge_names {
        Some(names) if names.len() != k => {
            return Err(Error::Config(format!("{} judge names given, file has {k} judges", names.len())));
        }
        Some(names) => names.clone(),
        None => default_judge_names(k),
    };
    let mut ds = JudgmentDataset::new(items, names, c)?;
    if let Some(emb_path) = &options.embeddings {
        attach_embeddings(&mut ds, emb_path)?;
    }
    Ok(ds)
}

/// Write the canonical JSONL form of a dataset.
pub fn save_judgments(ds: &JudgmentDataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
    for item in ds.items() {
        let judgments = if ds.is_binary() {
            JudgmentsField::Binary(item.judgments.clone())
        } else {
            JudgmentsField::Multiclass(item.judgments.chunks(ds.num_classes()).map(<[f64]>::to_vec).collect())
        };
        let record = JudgmentRecord {
            id: item.id.clone(),
            judgments,
            label: item.label.map(|l| l as i64),
        };
        serde_json::to_writer(&mut out, &record).map_err(|e| Error::Data(e.to_string()))?;
        out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

/// Write embeddings: magic, u64 N, u64 D, N×D f32 row-major, then a JSON id index.
pub fn save_embeddings(ds: &JudgmentDataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let d = ds
        .embedding_dim()
        .ok_or_else(|| Error::Data("dataset has no embeddings".into()))?;
    let mut out = BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
    let mut bytes = Vec::with_capacity(24 + ds.len() * d * 4);
    bytes.extend_from_slice(EMBEDDINGS_MAGIC);
    bytes.extend_from_slice(&(ds.len() as u64).to_le_bytes());
    bytes.extend_from_slice(&(d as u64).to_le_bytes());
    for item in ds.items() {
        for &v in item.embedding().unwrap_or_default() {
            bytes.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    let ids: Vec<&str> = ds.items().iter().map(Item::id).collect();
    bytes.extend_from_slice(serde_json::to_string(&ids).map_err(|e| Error::Data(e.to_string()))?.as_bytes());
    out.write_all(&bytes).map_err(|e| Error::io(path, e))?;
    out.flush().map_err(|e| Error::io(path, e))
}

/// Embedding rows keyed by item id.
pub fn load_embeddings(path: impl AsRef<Path>) -> Result<(usize, HashMap<String, Vec<f64>>)> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    let bad = |m: &str| Error::Data(format!("{}: {m}", path.display()));
    if bytes.len() < 24 || &bytes[..8] != EMBEDDINGS_MAGIC {
        return Err(bad("not an embeddings file (bad magic)"));
    }
    let n = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let d = u64::from_le_bytes(bytes[16..24].try_into().unwrap()) as usize;
    let body = n
        .checked_mul(d)
        .and_then(|x| x.checked_mul(4))
        .ok_or_else(|| bad("header overflow"))?;
    if bytes.len() < 24 + body {
        return Err(bad("truncated embedding matrix"));
    }
    let ids: Vec<String> =
        serde_json::from_slice(&bytes[24 + body..]).map_err(|e| bad(&format!("bad id index: {e}")))?;
    if ids.len() != n {
        return Err(bad(&format!("id index has {} entries, header says {n}", ids.len())));
    }
    let mut rows = HashMap::with_capacity(n);
    for (r, id) in ids.into_iter().enumerate() {
        let start = 24 + r * d * 4;
        let row: Vec<f64> = bytes[start..start + d * 4]
            .chunks_exact(4)
            .map(|b| f64::from(f32::from_le_bytes(b.try_into().unwrap())))
            .collect();
        if rows.insert(id.clone(), row).is_some() {
            return Err(bad(&format!("duplicate id {id:?} in index")));
        }
    }
    Ok((d, rows))
}

fn attach_embeddings(ds: &mut JudgmentDataset, path: &Path) -> Result<()> {
    let (_, mut rows) = load_embeddings(path)?;
    for item in ds.items_mut() {
        let row = rows
            .remove(item.id())
            .ok_or_else(|| Error::Data(format!("no embedding for item {:?} in {}", item.id(), path.display())))?;
        item.set_embedding(row);
    }
    ds.refresh_embedding_dim();
    Ok(())
}

/// Sample `dev_size` labeled items as a development set; `rest` is the complement.
/// Both keep the original item order.
pub fn split_dev(ds: &JudgmentDataset, dev_size: usize, seed: u64) -> Result<(JudgmentDataset, JudgmentDataset)> {
    let mut labeled: Vec<usize> = (0..ds.len()).filter(|&n| ds.items[n].has_label()).collect();
    if dev_size > labeled.len() {
        return Err(Error::Data(format!(
            "dev set of {dev_size} requested but only {} labeled items",
            labeled.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    labeled.shuffle(&mut rng);
    let mut in_dev = vec![false; ds.len()];
    for &n in &labeled[..dev_size] {
        in_dev[n] = true;
    }
    let dev: Vec<usize> = (0..ds.len()).filter(|&n| in_dev[n]).collect();
    let rest: Vec<usize> = (0..ds.len()).filter(|&n| !in_dev[n]).collect();
    Ok((ds.subset(&dev), ds.subset(&rest)))
}

/// Per-item, per-judge mean of two judgment sets over the same ids (e.g. a
/// judging run and its response-swapped counterpart).
pub fn average_judgments(a: &JudgmentDataset, b: &JudgmentDataset) -> Result<JudgmentDataset> {
    if a.num_judges() != b.num_judges() || a.num_classes() != b.num_classes() {
        return Err(Error::Data(format!(
            "shape mismatch: {}×{} vs {}×{} judges × classes",
            a.num_judges(),
            a.num_classes(),
            b.num_judges(),
            b.num_classes()
        )));
    }
    let index: HashMap<&str, &Item> = b.items().iter().map(|i| (i.id(), i)).collect();
    if let Some(missing) = a.items().iter().find(|i| !index.contains_key(i.id())) {
        return Err(Error::Data(format!("id {:?} missing from second file", missing.id())));
    }
    if a.len() != b.len() {
        let ids: HashSet<&str> = a.items().iter().map(Item::id).collect();
        let extra = b.items().iter().find(|i| !ids.contains(i.id())).map(Item::id).unwrap_or("");
        return Err(Error::Data(format!("id {extra:?} missing from first file")));
    }
    let items = a
        .items()
        .iter()
        .map(|ia| {
            let ib = index[ia.id()];
            let judgments = ia
                .judgments
                .iter()
                .zip(&ib.judgments)
                .map(|(x, y)| (x + y) / 2.0)
                .collect();
            Item {
                judgments,
                label: ia.label.or(ib.label),
                ..ia.clone()
            }
        })
        .collect();
    JudgmentDataset::new(items, a.judge_names().to_vec(), a.num_classes())
}

pub fn save_estimates(est: &GroupEstimates, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
    for (i, (id, &estimate)) in est.ids.iter().zip(&est.estimates).enumerate() {
        let record = EstimateRecord {
            id: id.clone(),
            estimate,
            score: est.scores.as_ref().map(|s| s[i]),
        };
        serde_json::to_writer(&mut out, &record).map_err(|e| Error::Data(e.to_string()))?;
        out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

pub fn load_estimates(path: impl AsRef<Path>, method: impl Into<String>) -> Result<GroupEstimates> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut est = GroupEstimates {
        method: method.into(),
        ids: Vec::new(),
        estimates: Vec::new(),
        scores: Some(Vec::new()),
    };
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: EstimateRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        est.ids.push(record.id);
        est.estimates.push(record.estimate);
        match (record.score, est.scores.as_mut()) {
            (Some(s), Some(scores)) => scores.push(s),
            _ => est.scores = None,
        }
    }
    Ok(est)
}
