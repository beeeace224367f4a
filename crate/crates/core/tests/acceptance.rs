//! Acceptance checks on synthetic conditionally-independent data.
//!
//! Prints one PASS/FAIL line per criterion. Criteria listed in
//! `KNOWN_LIMITATIONS` print `FAIL (known limitation)` without failing the
//! run; any other failure exits non-zero.

use std::process::ExitCode;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use skillagg::baselines::{average_prob, majority_vote};
use skillagg::dataset::{binarize, normalize_probability, save_embeddings, save_estimates, save_judgments};
use skillagg::dawid_skene::{ds_run, DsConfig};
use skillagg::eval::{accuracy, evaluate_methods, per_judge_accuracy, run_pool, skill_accuracy_pcc, subset_sweep, SubsetSpec};
use skillagg::multiclass::{MulticlassConfig, MulticlassSkillModel};
use skillagg::neural::checkpoint::encode_checkpoint;
use skillagg::neural::{grad_check, ParamStore};
use skillagg::pipeline::{prepare_split, run_method, Method, PipelineConfig};
use skillagg::skill_agg::{SkillAggConfig, SkillAggModel, SkillInput, SkillMode};
use skillagg::synthetic::{bayes_oracle, bayes_oracle_binary, generate, uniform_skills, CiWorldSpec, JudgeSkill};
use skillagg::{Item, JudgmentDataset};

const KNOWN_LIMITATIONS: &[&str] = &["regularizer-effect"];
const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];

struct Outcome {
    pass: bool,
    detail: String,
}

type Criterion = (&'static str, f64, fn() -> Outcome);

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

/// Optimizer settings shared by every neural run below.
fn run_config(seed: u64) -> PipelineConfig {
    let mut cfg = PipelineConfig {
        seed,
        dev_size: 250,
        ..Default::default()
    };
    cfg.optimizer.learning_rate = 0.01;
    cfg.optimizer.epochs = 20;
    cfg.optimizer.batch_size = 64;
    cfg
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn random_params(params: &mut ParamStore, rng: &mut ChaCha8Rng, scale: f64) {
    for t in params.tensors_mut() {
        for v in &mut t.data {
            *v = rng.random_range(-scale..scale);
        }
    }
}

fn vote_patterns(k: usize, c: usize) -> Vec<Vec<usize>> {
    let total = c.pow(k as u32);
    (0..total)
        .map(|mut code| {
            (0..k)
                .map(|_| {
                    let v = code % c;
                    code /= c;
                    v
                })
                .collect()
        })
        .collect()
}

fn oracle_equivalence() -> Outcome {
    const INSTANCES: usize = 10_000;
    let dim = 4;
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut checked = 0usize;
    let mut disagreements = 0usize;
    for k in 1..=4 {
        let patterns = vote_patterns(k, 2);
        for i in 0..INSTANCES {
            // Alternate skill modes so both head types are exercised.
            let cfg = if i % 2 == 0 { SkillAggConfig::default() } else { SkillAggConfig::context() };
            let mut model = SkillAggModel::new(k, dim, cfg, i as u64).unwrap();
            random_params(model.params_mut(), &mut rng, 3.0);
            let e: Vec<f64> = (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect();
            let s = model.bottleneck(&e).unwrap();
            let skills: Vec<(f64, f64)> = model.skills(&e).unwrap().iter().map(|v| (v.p0, v.p1)).collect();
            for votes in &patterns {
                let votes: Vec<u8> = votes.iter().map(|&v| v as u8).collect();
                let decided = model.posterior(&e, &votes).unwrap().class;
                checked += 1;
                disagreements += usize::from(decided != bayes_oracle_binary(s, &skills, &votes));
            }
        }
    }
    let c = 3;
    let mut mc_checked = 0usize;
    let mut mc_disagreements = 0usize;
    for k in 1..=3 {
        let patterns = vote_patterns(k, c);
        for i in 0..INSTANCES {
            let mode = if i % 2 == 0 { SkillMode::Task } else { SkillMode::Context };
            let cfg = MulticlassConfig {
                mode,
                ..Default::default()
            };
            let mut model = MulticlassSkillModel::new(k, c, dim, cfg, i as u64).unwrap();
            random_params(model.params_mut(), &mut rng, 3.0);
            let e: Vec<f64> = (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect();
            let s = model.bottleneck(&e).unwrap();
            let confusions: Vec<Vec<Vec<f64>>> = model
                .confusions(&e)
                .unwrap()
                .iter()
                .map(|m| (0..c).map(|r| m.row(r).to_vec()).collect())
                .collect();
            for votes in &patterns {
                let decided = model.posterior(&e, votes).unwrap().class;
                mc_checked += 1;
                mc_disagreements += usize::from(decided != bayes_oracle(&s, &confusions, votes));
            }
        }
    }
    outcome(
        disagreements == 0 && mc_disagreements == 0,
        format!(
            "binary K=1..4: {disagreements} disagreements in {checked} decisions; \
             C=3 K=1..3: {mc_disagreements} in {mc_checked}"
        ),
    )
}

fn binary_batch(n: usize, k: usize, d: usize, seed: u64) -> JudgmentDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let items = (0..n)
        .map(|i| {
            let e: Vec<f64> = (0..d).map(|_| rng.random_range(-1.5..1.5)).collect();
            let y: Vec<f64> = (0..k).map(|_| rng.random_range(0.02..0.98)).collect();
            Item::new(format!("g{i}"), y).with_embedding(e)
        })
        .collect();
    JudgmentDataset::with_default_names(items, k, 2).unwrap()
}

fn multiclass_batch(n: usize, k: usize, c: usize, d: usize, seed: u64) -> JudgmentDataset {
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
            Item::new(format!("g{i}"), y).with_embedding(e)
        })
        .collect();
    JudgmentDataset::with_default_names(items, k, c).unwrap()
}

/// Worst relative error over every coordinate, using the library checker
/// and a stricter `|a - n| / max(|a|, |n|, 1e-6)` measure computed here.
fn check_both<F>(mut loss_and_grad: F, params: &ParamStore) -> (f64, f64)
where
    F: FnMut(&mut ParamStore) -> f64,
{
    let library = grad_check(|p| Ok(loss_and_grad(p)), params, 1e-5, usize::MAX, 0).unwrap();
    let mut analytic = params.clone();
    analytic.zero_grad();
    loss_and_grad(&mut analytic);
    let h = 1e-5;
    let mut strict = 0.0f64;
    for i in 0..params.num_params() {
        let (t, j) = params.locate(i);
        let mut eval = |delta: f64| {
            let mut p = params.clone();
            p.tensor_mut(t).data[j] += delta;
            p.zero_grad();
            loss_and_grad(&mut p)
        };
        let numeric = (eval(h) - eval(-h)) / (2.0 * h);
        let a = analytic.tensor(t).grad[j];
        strict = strict.max((a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6));
    }
    (library, strict)
}

fn gradient_correctness() -> Outcome {
    let (k, d) = (4, 6);
    let batch: Vec<usize> = (0..16).collect();
    let binary = binary_batch(16, k, d, 31);
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut worst = (0.0f64, 0.0f64);
    let mut cases = Vec::new();
    for (mode, input) in [
        (SkillMode::Task, SkillInput::Embedding),
        (SkillMode::Context, SkillInput::Embedding),
        (SkillMode::Context, SkillInput::Bottleneck),
    ] {
        for lambda in [0.0, 0.1] {
            let cfg = SkillAggConfig {
                mode,
                skill_input: input,
                lambda,
                ..Default::default()
            };
            let mut model = SkillAggModel::new(k, d, cfg, 3).unwrap();
            random_params(model.params_mut(), &mut rng, 1.0);
            let template = model.clone();
            let (lib, strict) = check_both(
                |p| {
                    let mut m = template.clone();
                    *m.params_mut() = p.clone();
                    let l = m.loss_and_grad(&binary, &batch).unwrap();
                    *p = m.params().clone();
                    l
                },
                model.params(),
            );
            cases.push(format!("{mode:?}/{input:?}/λ={lambda}: {strict:.1e}"));
            worst = (worst.0.max(lib), worst.1.max(strict));
        }
    }
    let c = 3;
    let mc = multiclass_batch(16, k, c, d, 32);
    for mode in [SkillMode::Task, SkillMode::Context] {
        for lambda in [0.0, 0.1] {
            let cfg = MulticlassConfig {
                mode,
                lambda,
                ..Default::default()
            };
            let mut model = MulticlassSkillModel::new(k, c, d, cfg, 4).unwrap();
            random_params(model.params_mut(), &mut rng, 1.0);
            let template = model.clone();
            let (lib, strict) = check_both(
                |p| {
                    let mut m = template.clone();
                    *m.params_mut() = p.clone();
                    let l = m.loss_and_grad(&mc, &batch).unwrap();
                    *p = m.params().clone();
                    l
                },
                model.params(),
            );
            cases.push(format!("multiclass {mode:?}/λ={lambda}: {strict:.1e}"));
            worst = (worst.0.max(lib), worst.1.max(strict));
        }
    }
    outcome(
        worst.0 <= 1e-4 && worst.1 <= 1e-4,
        format!(
            "max relative error {:.2e} (strict {:.2e}) over {} configurations [{}]",
            worst.0,
            worst.1,
            cases.len(),
            cases.join(", ")
        ),
    )
}

fn em_recovery() -> Outcome {
    let mut maes = Vec::new();
    let mut ds_accs = Vec::new();
    let mut mv_accs = Vec::new();
    for seed in SEEDS {
        let skills = uniform_skills(8, 0.6, 0.9, 100 + seed);
        let spec = CiWorldSpec::binary(5000, skills.clone(), seed);
        let ds = generate(&spec).unwrap();
        let (est, state) = ds_run(&ds, &DsConfig::default(), seed).unwrap();
        let mut err = 0.0;
        for (truth, fit) in skills.iter().zip(&state.confusion) {
            let JudgeSkill::Binary { p0, p1 } = truth else { unreachable!() };
            err += (p0 - fit.p0).abs() + (p1 - fit.p1).abs();
        }
        maes.push(err / 16.0);
        ds_accs.push(accuracy(&est, &ds).unwrap());
        mv_accs.push(accuracy(&majority_vote(&ds), &ds).unwrap());
    }
    let (mae, dsa, mva) = (mean(&maes), mean(&ds_accs), mean(&mv_accs));
    outcome(
        mae <= 0.05 && dsa >= mva,
        format!("confusion MAE {mae:.4} (≤ 0.05); accuracy DS {dsa:.4} vs MV {mva:.4}"),
    )
}

/// 5-seed mean accuracy of each method on worlds built by `world(seed)`.
fn seed_means(methods: &[Method], world: impl Fn(u64) -> CiWorldSpec + Sync, cfg: impl Fn(u64) -> PipelineConfig + Sync) -> Vec<f64> {
    let per_seed = run_pool(0, SEEDS.to_vec(), |seed| {
        let ds = generate(&world(seed))?;
        evaluate_methods(&ds, methods, &cfg(seed))
    })
    .unwrap();
    (0..methods.len())
        .map(|i| mean(&per_seed.iter().map(|s| s[i].accuracy).collect::<Vec<_>>()))
        .collect()
}

fn method_ordering() -> Outcome {
    let methods = [Method::Skillagg, Method::Crowdlayer, Method::Majority];
    let means = seed_means(
        &methods,
        |seed| CiWorldSpec::binary(10_000 + 250, uniform_skills(2, 0.55, 0.9, 100 + seed), seed),
        run_config,
    );
    let (sa, cl, mv) = (means[0], means[1], means[2]);
    outcome(
        sa >= cl && cl >= mv && sa - cl >= 0.003,
        format!(
            "K=2, skills U[0.55,0.9], N=10000: SkillAgg {sa:.4} ≥ Crowdlayer {cl:.4} ≥ MV {mv:.4}; \
             SA-CL margin {:.2} pts (≥ 0.3)",
            100.0 * (sa - cl)
        ),
    )
}

fn overconfident_world(seed: u64) -> CiWorldSpec {
    let mut skills = uniform_skills(4, 0.55, 0.9, 100 + seed);
    let mut gammas = vec![1.0; 4];
    for _ in 0..2 {
        skills.push(JudgeSkill::Binary { p0: 0.55, p1: 0.55 });
        gammas.push(5.0);
    }
    let mut spec = CiWorldSpec::binary(2000 + 250, skills, seed);
    spec.overconfidence = Some(gammas);
    spec
}

fn regularizer_effect() -> Outcome {
    let means = seed_means(&[Method::Skillagg, Method::SkillaggNoreg], overconfident_world, run_config);
    let (reg, noreg) = (means[0], means[1]);
    let ctx = seed_means(
        &[Method::SkillaggX],
        overconfident_world,
        |seed| {
            let mut cfg = run_config(seed);
            cfg.skillagg_x.model.lambda = 0.0;
            cfg
        },
    )[0];
    let ctx_reg = seed_means(&[Method::SkillaggX], overconfident_world, run_config)[0];
    let small = seed_means(&[Method::Skillagg], overconfident_world, |seed| {
        let mut cfg = run_config(seed);
        cfg.skillagg.model.lambda = 0.01;
        cfg
    })[0];
    outcome(
        reg >= noreg,
        format!(
            "4 judges U[0.55,0.9] + 2 at 0.55 with γ=5: λ=0.1 {reg:.4} vs λ=0 {noreg:.4} (λ=0.01 {small:.4}); \
             context heads λ=0.1 {ctx_reg:.4} vs λ=0 {ctx:.4}"
        ),
    )
}

fn slope_accuracy_correlation() -> Outcome {
    let mut pccs = Vec::new();
    for seed in SEEDS {
        let spec = CiWorldSpec::binary(2000 + 250, uniform_skills(8, 0.55, 0.9, 100 + seed), seed);
        let ds = generate(&spec).unwrap();
        let cfg = run_config(seed);
        let split = prepare_split(&ds, &cfg).unwrap();
        let out = run_method(Method::Skillagg, &split.rest, split.dev.as_ref(), &cfg).unwrap();
        let slopes: Vec<f64> = out.report["skills"]
            .as_array()
            .unwrap()
            .iter()
            .map(|s| s["slope"]["mean"].as_f64().unwrap())
            .collect();
        let accs = per_judge_accuracy(&split.rest).unwrap();
        pccs.push(skill_accuracy_pcc(&slopes, &accs).unwrap());
    }
    let m = mean(&pccs);
    let min = pccs.iter().copied().fold(f64::INFINITY, f64::min);
    outcome(m >= 0.8, format!("K=8, skills U[0.55,0.9]: mean PCC {m:.4} (≥ 0.8), min over seeds {min:.4}"))
}

fn uninformative_context() -> Outcome {
    let means = seed_means(
        &[Method::Skillagg, Method::DawidSkene],
        |seed| {
            let mut spec = CiWorldSpec::binary(2000 + 250, uniform_skills(8, 0.55, 0.7, 100 + seed), seed);
            spec.embedding.sigma = 1e6;
            spec
        },
        run_config,
    );
    let gap = 100.0 * (means[0] - means[1]).abs();
    outcome(
        gap <= 1.5,
        format!(
            "σ=1e6, K=8 weak judges U[0.55,0.7]: SkillAgg {:.4} vs DS {:.4}, |gap| {gap:.2} pts (≤ 1.5)",
            means[0], means[1]
        ),
    )
}

/// Every artifact a run writes, as bytes.
fn run_artifacts(ds: &JudgmentDataset, methods: &[Method], cfg: &PipelineConfig, workers: usize) -> Vec<Vec<u8>> {
    let dir = tempfile::tempdir().unwrap();
    let split = prepare_split(ds, cfg).unwrap();
    let outs = run_pool(workers, methods.to_vec(), |m| run_method(m, &split.rest, split.dev.as_ref(), cfg)).unwrap();
    let mut bytes = Vec::new();
    for (m, out) in methods.iter().zip(outs) {
        let path = dir.path().join(format!("{m}.jsonl"));
        save_estimates(&out.estimates, &path).unwrap();
        bytes.push(std::fs::read(&path).unwrap());
        bytes.push(serde_json::to_vec(&out.report).unwrap());
        if let Some((params, meta)) = &out.checkpoint {
            bytes.push(encode_checkpoint(params, meta));
        }
    }
    bytes
}

fn dataset_bytes(ds: &JudgmentDataset) -> Vec<Vec<u8>> {
    let dir = tempfile::tempdir().unwrap();
    let (j, e) = (dir.path().join("j.jsonl"), dir.path().join("e.bin"));
    save_judgments(ds, &j).unwrap();
    save_embeddings(ds, &e).unwrap();
    vec![std::fs::read(j).unwrap(), std::fs::read(e).unwrap()]
}

fn determinism() -> Outcome {
    let mut cfg = run_config(9);
    cfg.optimizer.epochs = 5;
    cfg.skillagg.lambda_grid = Some(vec![0.0, 0.1]);
    let spec = CiWorldSpec::binary(1200, uniform_skills(5, 0.55, 0.9, 9), 9);
    let a = generate(&spec).unwrap();
    let b = generate(&spec).unwrap();
    let mut mismatches = Vec::new();
    if dataset_bytes(&a) != dataset_bytes(&b) {
        mismatches.push("generated files".to_string());
    }
    if run_artifacts(&a, &Method::ALL, &cfg, 1) != run_artifacts(&b, &Method::ALL, &cfg, 4) {
        mismatches.push("binary run".to_string());
    }
    let conf = vec![vec![0.7, 0.2, 0.1], vec![0.15, 0.7, 0.15], vec![0.1, 0.2, 0.7]];
    let mc_spec = CiWorldSpec {
        classes: 3,
        ..CiWorldSpec::binary(900, vec![JudgeSkill::Confusion { confusion: conf }; 4], 9)
    };
    let mc = generate(&mc_spec).unwrap();
    let mc_methods = [Method::Majority, Method::Crowdlayer, Method::TrainMv, Method::Skillagg, Method::SkillaggX];
    if run_artifacts(&mc, &mc_methods, &cfg, 1) != run_artifacts(&generate(&mc_spec).unwrap(), &mc_methods, &cfg, 3) {
        mismatches.push("multi-class run".to_string());
    }
    let sweep = |w| {
        let r = subset_sweep(&a, &[Method::DawidSkene, Method::Skillagg], &SubsetSpec::Sample { sizes: vec![3], count: 4 }, &cfg, w)
            .unwrap();
        serde_json::to_vec(&r).unwrap()
    };
    if sweep(1) != sweep(4) {
        mismatches.push("subset sweep".to_string());
    }
    let reseeded = run_artifacts(&a, &[Method::Skillagg], &run_config(10), 1);
    let changed = reseeded != run_artifacts(&a, &[Method::Skillagg], &run_config(11), 1);
    outcome(
        mismatches.is_empty() && changed,
        if mismatches.is_empty() {
            format!(
                "identical bytes across reruns and worker counts (generation, 8 binary methods, 5 multi-class methods, \
                 subset sweep); different seeds change output: {changed}"
            )
        } else {
            format!("mismatched: {}", mismatches.join(", "))
        },
    )
}

fn baseline_identities() -> Outcome {
    let mut failures = Vec::new();
    let mut checked = 0usize;
    for k in 1..=5 {
        let patterns = vote_patterns(k, 11);
        let items: Vec<Item> = patterns
            .iter()
            .enumerate()
            .map(|(i, p)| Item::new(format!("p{i}"), p.iter().map(|&t| t as f64 / 10.0).collect()))
            .collect();
        let ds = JudgmentDataset::with_default_names(items, k, 2).unwrap();
        let avg = average_prob(&ds).unwrap();
        let mv = majority_vote(&ds);
        for (n, p) in patterns.iter().enumerate() {
            // Integer arithmetic on tenths: mean > 0.5 ⟺ Σt > 5K; y > 0.5 ⟺ t > 5.
            let want_avg = usize::from(p.iter().sum::<usize>() > 5 * k);
            let ones = p.iter().filter(|&&t| t > 5).count();
            let want_mv = usize::from(2 * ones > k);
            checked += 1;
            if avg.estimates[n] != want_avg {
                failures.push(format!("average {p:?}"));
            }
            if mv.estimates[n] != want_mv {
                failures.push(format!("majority {p:?}"));
            }
        }
    }
    // Multi-class plurality, ties to the smallest class.
    let c = 3;
    for k in 1..=5 {
        let patterns = vote_patterns(k, c);
        let items: Vec<Item> = patterns
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let y = p
                    .iter()
                    .flat_map(|&v| (0..c).map(move |cls| if cls == v { 0.6 } else { 0.2 }))
                    .collect();
                Item::new(format!("m{i}"), y)
            })
            .collect();
        let ds = JudgmentDataset::with_default_names(items, k, c).unwrap();
        let mv = majority_vote(&ds);
        for (n, p) in patterns.iter().enumerate() {
            let counts: Vec<usize> = (0..c).map(|cls| p.iter().filter(|&&v| v == cls).count()).collect();
            let top = *counts.iter().max().unwrap();
            let want = counts.iter().position(|&x| x == top).unwrap();
            checked += 1;
            if mv.estimates[n] != want {
                failures.push(format!("plurality {p:?}"));
            }
        }
    }
    // Normalization and binarization on the grid.
    for yes in 0..=10u32 {
        for no in 0..=10u32 {
            if yes + no == 0 {
                assert!(normalize_probability(0.0, 0.0).is_err());
                continue;
            }
            let y = normalize_probability(yes as f64 / 10.0, no as f64 / 10.0).unwrap().value();
            checked += 1;
            let want_vote = 2 * yes > yes + no;
            if (y - yes as f64 / (yes + no) as f64).abs() > 1e-15 || binarize(y).is_positive() != want_vote {
                failures.push(format!("normalize ({yes}, {no})"));
            }
        }
    }
    outcome(
        failures.is_empty(),
        if failures.is_empty() {
            format!("{checked} grid fixtures match (K ≤ 5, 0.1 grid, ties to 0 / smallest class)")
        } else {
            format!("{} of {checked} mismatches, first: {}", failures.len(), failures[0])
        },
    )
}

fn main() -> ExitCode {
    // (name, time limit in seconds, check)
    let criteria: [Criterion; 9] = [
        ("oracle-equivalence", 60.0, oracle_equivalence),
        ("gradient-correctness", 60.0, gradient_correctness),
        ("em-recovery", 120.0, em_recovery),
        ("method-ordering", 600.0, method_ordering),
        ("regularizer-effect", 600.0, regularizer_effect),
        ("slope-accuracy-pcc", 300.0, slope_accuracy_correlation),
        ("uninformative-context", 600.0, uninformative_context),
        ("determinism", f64::INFINITY, determinism),
        ("baseline-identities", f64::INFINITY, baseline_identities),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut unexpected = 0;
    for (name, limit, check) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let result = check();
        let secs = start.elapsed().as_secs_f64();
        let in_time = secs <= limit;
        let pass = result.pass && in_time;
        let budget = if limit.is_finite() { format!(", limit {limit:.0}s") } else { String::new() };
        let status = if pass {
            "PASS"
        } else if KNOWN_LIMITATIONS.contains(&name) {
            "FAIL (known limitation)"
        } else {
            unexpected += 1;
            "FAIL"
        };
        println!("{status} [{name}] {} ({secs:.1}s{budget})", result.detail);
    }
    if unexpected > 0 {
        println!("{unexpected} criteria failed");
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
