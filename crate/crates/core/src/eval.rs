//! Metrics, judge-subset and dataset-size sweeps, and run reports.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use itertools::Itertools;
use log::info;
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::majority_vote;
use crate::dataset::{GroupEstimates, JudgmentDataset};
use crate::error::{Error, Result};
use crate::pipeline::{prepare_split, run_method, Method, PipelineConfig};

/// Fraction of labeled items whose estimate matches the label.
pub fn accuracy(estimates: &GroupEstimates, ds: &JudgmentDataset) -> Result<f64> {
    if estimates.len() != ds.len() {
        return Err(Error::Data(format!(
            "{} estimates for {} items",
            estimates.len(),
            ds.len()
        )));
    }
    let mut hits = 0usize;
    let mut labeled = 0usize;
    for ((id, &est), item) in estimates.ids.iter().zip(&estimates.estimates).zip(ds.items()) {
        if id != item.id() {
            return Err(Error::Data(format!("estimate id {id:?} does not match item {:?}", item.id())));
        }
        if let Some(label) = item.label() {
            labeled += 1;
            hits += usize::from(est == label);
        }
    }
    if labeled == 0 {
        return Err(Error::Data("no labeled items to score".into()));
    }
    Ok(hits as f64 / labeled as f64)
}

/// Accuracy of each judge's hard vote against the labels.
pub fn per_judge_accuracy(ds: &JudgmentDataset) -> Result<Vec<f64>> {
    let labeled: Vec<(usize, usize)> = ds
        .items()
        .iter()
        .enumerate()
        .filter_map(|(n, item)| item.label().map(|l| (n, l)))
        .collect();
    if labeled.is_empty() {
        return Err(Error::Data("no labeled items to score".into()));
    }
    Ok((0..ds.num_judges())
        .map(|k| {
            let hits = labeled.iter().filter(|&&(n, l)| ds.hard_vote(n, k) == l).count();
            hits as f64 / labeled.len() as f64
        })
        .collect())
}

/// Pearson correlation between learned slopes and judge accuracies.
pub fn skill_accuracy_pcc(slopes: &[f64], accs: &[f64]) -> Result<f64> {
    if slopes.len() != accs.len() {
        return Err(Error::Data(format!("{} slopes vs {} accuracies", slopes.len(), accs.len())));
    }
    if slopes.len() < 2 {
        return Err(Error::Data("correlation needs at least two judges".into()));
    }
    let n = slopes.len() as f64;
    let mx = slopes.iter().sum::<f64>() / n;
    let my = accs.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in slopes.iter().zip(accs) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return Err(Error::Data("correlation undefined: an input has zero variance".into()));
    }
    Ok(sxy / (sxx * syy).sqrt())
}

/// Accuracy of one method next to majority voting on the same items.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodScore {
    pub method: Method,
    pub accuracy: f64,
    pub majority_accuracy: f64,
    /// `accuracy - majority_accuracy`.
    pub relative: f64,
}

/// Split off the dev set, run every method on the rest and score it there.
pub fn evaluate_methods(ds: &JudgmentDataset, methods: &[Method], config: &PipelineConfig) -> Result<Vec<MethodScore>> {
    let split = prepare_split(ds, config)?;
    score_methods(&split.rest, split.dev.as_ref(), methods, config)
}

fn score_methods(
    rest: &JudgmentDataset,
    dev: Option<&JudgmentDataset>,
    methods: &[Method],
    config: &PipelineConfig,
) -> Result<Vec<MethodScore>> {
    let mv = accuracy(&majority_vote(rest), rest)?;
    methods
        .iter()
        .map(|&method| {
            let out = run_method(method, rest, dev, config)?;
            let acc = accuracy(&out.estimates, rest)?;
            Ok(MethodScore {
                method,
                accuracy: acc,
                majority_accuracy: mv,
                relative: acc - mv,
            })
        })
        .collect()
}

/// Run `jobs` on a pool capped at `workers` threads (0 = rayon default),
/// returning results in job order.
pub fn run_pool<T, R, F>(workers: usize, jobs: Vec<T>, f: F) -> Result<Vec<R>>
where
    T: Send,
    R: Send,
    F: Fn(T) -> Result<R> + Sync + Send,
{
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("cannot build worker pool: {e}")))?;
    pool.install(|| jobs.into_par_iter().map(f).collect())
}

/// Which judge subsets a sweep visits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum SubsetSpec {
    /// Every subset of each listed size.
    All { sizes: Vec<usize> },
    /// Up to `count` distinct random subsets of each listed size.
    Sample { sizes: Vec<usize>, count: usize },
}

impl SubsetSpec {
    /// Judge subsets (sorted indices), deterministic given `seed`.
    pub fn subsets(&self, num_judges: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
        let sizes = match self {
            SubsetSpec::All { sizes } | SubsetSpec::Sample { sizes, .. } => sizes,
        };
        let mut out = Vec::new();
        for &m in sizes {
            if m == 0 {
                return Err(Error::Config("judge subsets need at least one judge".into()));
            }
            if m > num_judges {
                return Err(Error::Config(format!("subset size {m} exceeds {num_judges} judges")));
            }
            match self {
                SubsetSpec::All { .. } => out.extend((0..num_judges).combinations(m)),
                SubsetSpec::Sample { count, .. } => out.extend(sample_subsets(num_judges, m, *count, seed)),
            }
        }
        Ok(out)
    }
}

fn binomial(n: usize, k: usize) -> u128 {
    (0..k as u128).fold(1u128, |acc, i| acc * (n as u128 - i) / (i + 1))
}

fn sample_subsets(k: usize, m: usize, count: usize, seed: u64) -> Vec<Vec<usize>> {
    if binomial(k, m) <= count as u128 {
        return (0..k).combinations(m).collect();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(m as u64);
    let mut seen = BTreeSet::new();
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let mut subset = index::sample(&mut rng, k, m).into_vec();
        subset.sort_unstable();
        if seen.insert(subset.clone()) {
            out.push(subset);
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsetRow {
    pub subset: Vec<usize>,
    pub judges: String,
    pub method: Method,
    pub accuracy: f64,
    pub majority_accuracy: f64,
    pub relative: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsetSweep {
    pub rows: Vec<SubsetRow>,
    /// Per method, the fraction of subsets where it matched or beat majority voting.
    pub win_rate: BTreeMap<Method, f64>,
}

/// Flat form of [`SubsetRow`] for CSV output.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SubsetCsvRow<'a> {
    pub size: usize,
    pub judges: &'a str,
    pub method: Method,
    pub accuracy: f64,
    pub majority_accuracy: f64,
    pub relative: f64,
}

impl SubsetSweep {
    pub fn csv_rows(&self) -> Vec<SubsetCsvRow<'_>> {
        self.rows
            .iter()
            .map(|r| SubsetCsvRow {
                size: r.subset.len(),
                judges: &r.judges,
                method: r.method,
                accuracy: r.accuracy,
                majority_accuracy: r.majority_accuracy,
                relative: r.relative,
            })
            .collect()
    }
}

/// Score `methods` on every subset of judges chosen by `spec`.
pub fn subset_sweep(
    ds: &JudgmentDataset,
    methods: &[Method],
    spec: &SubsetSpec,
    config: &PipelineConfig,
    workers: usize,
) -> Result<SubsetSweep> {
    let subsets = spec.subsets(ds.num_judges(), config.seed)?;
    info!("subset sweep: {} subsets x {} methods", subsets.len(), methods.len());
    let split = prepare_split(ds, config)?;
    let cells: Vec<(Vec<usize>, Method)> = subsets
        .into_iter()
        .flat_map(|s| methods.iter().map(move |&m| (s.clone(), m)))
        .collect();
    let rows = run_pool(workers, cells, |(subset, method)| {
        let rest = split.rest.select_judges(&subset)?;
        let dev = split.dev.as_ref().map(|d| d.select_judges(&subset)).transpose()?;
        let score = score_methods(&rest, dev.as_ref(), &[method], config)?.remove(0);
        Ok(SubsetRow {
            judges: subset.iter().map(|&k| ds.judge_names()[k].as_str()).join("+"),
            subset,
            method,
            accuracy: score.accuracy,
            majority_accuracy: score.majority_accuracy,
            relative: score.relative,
        })
    })?;
    let win_rate = methods
        .iter()
        .map(|&m| {
            let mine: Vec<&SubsetRow> = rows.iter().filter(|r| r.method == m).collect();
            let wins = mine.iter().filter(|r| r.relative >= 0.0).count();
            (m, wins as f64 / mine.len().max(1) as f64)
        })
        .collect();
    Ok(SubsetSweep { rows, win_rate })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SizeRow {
    pub size: usize,
    pub method: Method,
    pub accuracy: f64,
    pub majority_accuracy: f64,
    pub relative: f64,
}

/// Train and score on random subsets of the non-dev items. The dev set is
/// the same for every size; each subset keeps the original item order.
pub fn size_sweep(
    ds: &JudgmentDataset,
    methods: &[Method],
    sizes: &[usize],
    config: &PipelineConfig,
    workers: usize,
) -> Result<Vec<SizeRow>> {
    let split = prepare_split(ds, config)?;
    let pool_len = split.rest.len();
    if let Some(&bad) = sizes.iter().find(|&&s| s > pool_len || s == 0) {
        return Err(Error::Config(format!("size {bad} outside 1..={pool_len} (items outside the dev set)")));
    }
    let cells: Vec<(usize, Method)> = sizes
        .iter()
        .flat_map(|&s| methods.iter().map(move |&m| (s, m)))
        .collect();
    run_pool(workers, cells, |(size, method)| {
        let subset = size_subset(pool_len, size, config.seed);
        let rest = split.rest.subset(&subset);
        let score = score_methods(&rest, split.dev.as_ref(), &[method], config)?.remove(0);
        Ok(SizeRow {
            size,
            method,
            accuracy: score.accuracy,
            majority_accuracy: score.majority_accuracy,
            relative: score.relative,
        })
    })
}

/// Sorted random indices; the full range when `size == n`.
fn size_subset(n: usize, size: usize, seed: u64) -> Vec<usize> {
    if size == n {
        return (0..n).collect();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(size as u64);
    let mut idx = index::sample(&mut rng, n, size).into_vec();
    idx.sort_unstable();
    idx
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaRow {
    pub lambda: f64,
    pub dev_accuracy: Option<f64>,
    pub accuracy: f64,
    pub majority_accuracy: f64,
    pub relative: f64,
}

/// SkillAggregation (the `skillagg` section) at each λ, scored on dev and on the rest.
pub fn lambda_sweep(ds: &JudgmentDataset, lambdas: &[f64], config: &PipelineConfig, workers: usize) -> Result<Vec<LambdaRow>> {
    let split = prepare_split(ds, config)?;
    let mv = accuracy(&majority_vote(&split.rest), &split.rest)?;
    run_pool(workers, lambdas.to_vec(), |lambda| {
        let mut cfg = config.clone();
        cfg.skillagg.model.lambda = lambda;
        cfg.skillagg.multiclass.lambda = lambda;
        cfg.skillagg.lambda_grid = None;
        let out = run_method(Method::Skillagg, &split.rest, split.dev.as_ref(), &cfg)?;
        let acc = accuracy(&out.estimates, &split.rest)?;
        Ok(LambdaRow {
            lambda,
            dev_accuracy: out.report.get("dev_accuracy").and_then(|v| v.as_f64()),
            accuracy: acc,
            majority_accuracy: mv,
            relative: acc - mv,
        })
    })
}

/// Write serializable rows as a CSV table with a header.
pub fn write_csv<T: Serialize>(path: impl AsRef<Path>, rows: &[T]) -> Result<()> {
    let path = path.as_ref();
    let wrap = |e: csv::Error| Error::Data(format!("writing {}: {e}", path.display()));
    let mut writer = csv::Writer::from_path(path).map_err(wrap)?;
    for row in rows {
        writer.serialize(row).map_err(wrap)?;
    }
    writer.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Item;
    use crate::synthetic::{generate, uniform_skills, CiWorldSpec, JudgeSkill};
    use proptest::prelude::*;

    fn labeled(votes: &[&[f64]], labels: &[usize]) -> JudgmentDataset {
        let items = votes
            .iter()
            .zip(labels)
            .enumerate()
            .map(|(i, (v, &l))| Item::new(format!("i{i}"), v.to_vec()).with_label(l))
            .collect();
        JudgmentDataset::with_default_names(items, votes[0].len(), 2).unwrap()
    }

    #[test]
    fn accuracy_examples() {
        let ds = labeled(&[&[0.9], &[0.1], &[0.8], &[0.7]], &[1, 0, 1, 0]);
        let est = |e: Vec<usize>| GroupEstimates::new("x", &ds, e, None);
        assert_eq!(accuracy(&est(vec![1, 0, 1, 0]), &ds).unwrap(), 1.0);
        assert_eq!(accuracy(&est(vec![0, 1, 0, 1]), &ds).unwrap(), 0.0);
        assert_eq!(accuracy(&est(vec![1, 0, 1, 1]), &ds).unwrap(), 0.75);
        assert!(accuracy(&est(vec![1, 0, 1, 1]), &ds.without_labels()).is_err());
        let mut wrong = est(vec![1, 0, 1, 0]);
        wrong.ids[2] = "zz".into();
        assert!(accuracy(&wrong, &ds).is_err());
    }

    #[test]
    fn per_judge_examples() {
        let ds = labeled(&[&[0.9, 0.8], &[0.2, 0.8], &[0.6, 0.8], &[0.4, 0.8]], &[1, 0, 1, 0]);
        assert_eq!(per_judge_accuracy(&ds).unwrap(), vec![1.0, 0.5]);
    }

    #[test]
    fn synthetic_judge_accuracy_matches_skill() {
        let spec = CiWorldSpec::binary(10_000, vec![JudgeSkill::Binary { p0: 0.8, p1: 0.8 }], 4);
        let acc = per_judge_accuracy(&generate(&spec).unwrap()).unwrap()[0];
        assert!((acc - 0.8).abs() <= 0.012, "{acc}");
    }

    #[test]
    fn pcc_examples() {
        let a = [0.1, 0.4, 0.7];
        assert!((skill_accuracy_pcc(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        let neg: Vec<f64> = a.iter().map(|x| -x).collect();
        assert!((skill_accuracy_pcc(&a, &neg).unwrap() + 1.0).abs() < 1e-12);
        // sxy = 0.12, sxx = 0.18, syy = 0.26/3
        let r = skill_accuracy_pcc(&a, &[0.2, 0.5, 0.6]).unwrap();
        assert!((r - 0.12 / (0.18f64 * 0.26 / 3.0).sqrt()).abs() < 1e-12, "{r}");
        assert!((r - 0.9608).abs() < 5e-5, "{r}");
        assert!(skill_accuracy_pcc(&a, &[0.5, 0.5, 0.5]).is_err());
        assert!(skill_accuracy_pcc(&[0.1], &[0.2]).is_err());
    }

    proptest! {
        #[test]
        fn pcc_affine_invariant(
            xs in prop::collection::vec(-5.0f64..5.0, 3..10),
            noise in prop::collection::vec(-1.0f64..1.0, 10),
            scale in 0.1f64..10.0,
            shift in -3.0f64..3.0,
        ) {
            let ys: Vec<f64> = xs.iter().zip(&noise).map(|(x, e)| x + e).collect();
            if let Ok(r) = skill_accuracy_pcc(&xs, &ys) {
                let scaled: Vec<f64> = xs.iter().map(|x| scale * x + shift).collect();
                let r2 = skill_accuracy_pcc(&scaled, &ys).unwrap();
                prop_assert!((r - r2).abs() < 1e-9);
                prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&r));
            }
        }

        #[test]
        fn accuracy_permutation_invariant(
            cells in prop::collection::vec((0usize..2, 0usize..2), 1..30),
            seed in any::<u64>(),
        ) {
            let items: Vec<Item> = cells.iter().enumerate()
                .map(|(i, &(_, l))| Item::new(format!("i{i}"), vec![0.5]).with_label(l)).collect();
            let ds = JudgmentDataset::with_default_names(items, 1, 2).unwrap();
            let est = GroupEstimates::new("x", &ds, cells.iter().map(|c| c.0).collect(), None);
            let acc = accuracy(&est, &ds).unwrap();
            let perm = index::sample(&mut ChaCha8Rng::seed_from_u64(seed), cells.len(), cells.len()).into_vec();
            let pds = ds.subset(&perm);
            let pest = GroupEstimates::new("x", &pds, perm.iter().map(|&n| cells[n].0).collect(), None);
            prop_assert!((accuracy(&pest, &pds).unwrap() - acc).abs() < 1e-12);
            prop_assert!((0.0..=1.0).contains(&acc));
        }
    }

    #[test]
    fn subset_enumeration_counts() {
        let all = SubsetSpec::All { sizes: vec![3] };
        assert_eq!(all.subsets(3, 0).unwrap(), vec![vec![0, 1, 2]]);
        let all = SubsetSpec::All { sizes: vec![3, 4] };
        assert_eq!(all.subsets(6, 0).unwrap().len(), 20 + 15);
        assert!(SubsetSpec::All { sizes: vec![0] }.subsets(3, 0).is_err());
        assert!(SubsetSpec::All { sizes: vec![4] }.subsets(3, 0).is_err());
    }

    #[test]
    fn subset_sampling_is_deterministic_and_distinct() {
        let spec = SubsetSpec::Sample { sizes: vec![3, 5], count: 7 };
        let a = spec.subsets(10, 11).unwrap();
        assert_eq!(a, spec.subsets(10, 11).unwrap());
        assert_ne!(a, spec.subsets(10, 12).unwrap());
        assert_eq!(a.len(), 14);
        assert_eq!(a.iter().collect::<BTreeSet<_>>().len(), 14);
        assert!(a.iter().all(|s| s.windows(2).all(|w| w[0] < w[1])));
        let small = SubsetSpec::Sample { sizes: vec![2], count: 100 };
        assert_eq!(small.subsets(4, 0).unwrap().len(), 6);
    }

    fn sweep_config() -> PipelineConfig {
        let mut cfg = PipelineConfig {
            dev_size: 50,
            ..Default::default()
        };
        cfg.optimizer.epochs = 2;
        cfg
    }

    #[test]
    fn subset_sweep_is_order_stable_across_worker_counts() {
        let ds = generate(&CiWorldSpec::binary(300, uniform_skills(4, 0.6, 0.9, 3), 5)).unwrap();
        let spec = SubsetSpec::All { sizes: vec![3] };
        let methods = [Method::DawidSkene, Method::Skillagg];
        let one = subset_sweep(&ds, &methods, &spec, &sweep_config(), 1).unwrap();
        let four = subset_sweep(&ds, &methods, &spec, &sweep_config(), 4).unwrap();
        assert_eq!(one, four);
        assert_eq!(one.rows.len(), 8);
        assert_eq!(one.rows[0].judges, "judge_0+judge_1+judge_2");
    }

    #[test]
    fn full_size_matches_full_data_result() {
        let ds = generate(&CiWorldSpec::binary(300, uniform_skills(3, 0.6, 0.9, 3), 6)).unwrap();
        let cfg = sweep_config();
        let methods = [Method::Majority, Method::Skillagg];
        let rows = size_sweep(&ds, &methods, &[100, 250], &cfg, 2).unwrap();
        let full = evaluate_methods(&ds, &methods, &cfg).unwrap();
        assert_eq!(rows[2].accuracy, full[0].accuracy);
        assert_eq!(rows[3].accuracy, full[1].accuracy);
        assert_eq!(rows[0].relative, 0.0);
        assert_eq!(rows, size_sweep(&ds, &methods, &[100, 250], &cfg, 1).unwrap());
        assert!(size_sweep(&ds, &methods, &[251], &cfg, 1).is_err());
    }

    #[test]
    fn lambda_sweep_reports_dev_accuracy() {
        let ds = generate(&CiWorldSpec::binary(200, uniform_skills(3, 0.6, 0.9, 3), 6)).unwrap();
        let rows = lambda_sweep(&ds, &[0.0, 0.1], &sweep_config(), 2).unwrap();
        assert_eq!(rows.len(), 2);
        assert!(rows.iter().all(|r| r.dev_accuracy.is_some()));
    }

    #[test]
    fn csv_tables_have_headers() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        let rows = vec![SizeRow {
            size: 10,
            method: Method::Majority,
            accuracy: 0.5,
            majority_accuracy: 0.5,
            relative: 0.0,
        }];
        write_csv(&path, &rows).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text, "size,method,accuracy,majority_accuracy,relative\n10,majority,0.5,0.5,0.0\n");
    }
}
