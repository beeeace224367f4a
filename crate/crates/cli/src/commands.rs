use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use log::{info, warn};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{json, Value};
use skillagg::baselines::majority_vote;
use skillagg::dataset::{
    average_judgments, load_estimates, load_judgments, save_embeddings, save_estimates, save_judgments, IngestOptions,
};
use skillagg::eval::{
    accuracy, lambda_sweep, per_judge_accuracy, run_pool, size_sweep, skill_accuracy_pcc, subset_sweep, write_csv,
    SubsetSpec,
};
use skillagg::neural::save_checkpoint;
use skillagg::pipeline::{prepare_split, run_method, Method, MethodOutput, PipelineConfig};
use skillagg::synthetic::{generate as generate_world, optimal_accuracy, CiWorldSpec};
use skillagg::{Error, JudgmentDataset, Result};

use crate::manifest::Manifest;
use crate::{DataArgs, GlobalArgs, SweepCommand};

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Data(e.to_string()))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::Data(format!("cannot write {}: {e}", path.display())))
}

/// Config-like inputs: a missing or malformed file is a usage error.
fn read_config_file<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::Data(format!("cannot create {}: {e}", dir.display())))
}

fn load_config(g: &GlobalArgs, data: Option<&DataArgs>) -> Result<PipelineConfig> {
    let mut cfg = match &g.config {
        Some(path) => read_config_file(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = g.seed {
        cfg.seed = seed;
    }
    if let Some(d) = data {
        if let Some(v) = d.dev_size {
            cfg.dev_size = v;
        }
        if let Some(v) = d.epochs {
            cfg.optimizer.epochs = v;
        }
        if let Some(v) = d.learning_rate {
            cfg.optimizer.learning_rate = v;
        }
        if let Some(v) = d.batch_size {
            cfg.optimizer.batch_size = v;
        }
        if let Some(v) = d.max_iter {
            cfg.dawid_skene.max_iter = v;
        }
        for section in [&mut cfg.skillagg, &mut cfg.skillagg_x] {
            if let Some(v) = d.lambda {
                section.model.lambda = v;
                section.multiclass.lambda = v;
            }
            if let Some(grid) = &d.lambda_grid {
                section.lambda_grid = Some(grid.clone());
            }
        }
    }
    cfg.optimizer.validate()?;
    Ok(cfg)
}

fn load_data(d: &DataArgs) -> Result<JudgmentDataset> {
    let options = IngestOptions {
        embeddings: d.embeddings.clone(),
        judge_names: None,
    };
    load_judgments(&d.data, &options)
}

fn record_inputs(manifest: &mut Manifest, d: &DataArgs, g: &GlobalArgs) -> Result<()> {
    manifest.input(&d.data)?;
    if let Some(e) = &d.embeddings {
        manifest.input(e)?;
    }
    if let Some(c) = &g.config {
        manifest.input(c)?;
    }
    Ok(())
}

pub fn generate(g: &GlobalArgs, spec_path: &Path, oracle_samples: Option<usize>) -> Result<()> {
    let mut spec: CiWorldSpec = read_config_file(spec_path)?;
    if let Some(seed) = g.seed {
        spec.seed = seed;
    }
    let ds = generate_world(&spec)?;
    create_dir(&g.out_dir)?;
    let judgments = g.out_dir.join("judgments.jsonl");
    let embeddings = g.out_dir.join("embeddings.bin");
    let echo = g.out_dir.join("spec.json");
    save_judgments(&ds, &judgments)?;
    save_embeddings(&ds, &embeddings)?;
    write_json(&echo, &spec)?;
    let spec_hash = crate::manifest::sha256_file(&echo)?;
    let mut manifest = Manifest::new("generate", spec.seed, Some(spec_hash));
    manifest.input(spec_path)?;
    for p in [&judgments, &embeddings, &echo] {
        manifest.output(&g.out_dir, p)?;
    }
    if let Some(samples) = oracle_samples {
        let oracle = optimal_accuracy(&spec, samples, spec.seed)?;
        let path = g.out_dir.join("oracle.json");
        write_json(&path, &oracle)?;
        manifest.output(&g.out_dir, &path)?;
        say!("bayes-optimal accuracy {:.4} ± {:.4}", oracle.accuracy, oracle.stderr);
    }
    manifest.write(&g.out_dir, "generate")?;
    say!(
        "generated {} items, {} judges, {} classes in {}",
        ds.len(),
        ds.num_judges(),
        ds.num_classes(),
        g.out_dir.display()
    );
    Ok(())
}

pub fn validate(data: &Path, embeddings: Option<&Path>) -> Result<()> {
    let options = IngestOptions {
        embeddings: embeddings.map(Path::to_path_buf),
        judge_names: None,
    };
    let ds = load_judgments(data, &options)?;
    let labeled = ds.items().iter().filter(|i| i.has_label()).count();
    let mut summary = json!({
        "items": ds.len(),
        "judges": ds.judge_names(),
        "classes": ds.num_classes(),
        "labeled": labeled,
        "embedding_dim": ds.embedding_dim(),
    });
    if labeled > 0 {
        summary["per_judge_accuracy"] = json!(per_judge_accuracy(&ds)?);
    }
    say!("{}", serde_json::to_string_pretty(&summary).expect("summary serializes"));
    Ok(())
}

fn method_report(method: Method, cfg: &PipelineConfig, items: usize, dev_items: usize, out: &MethodOutput) -> Value {
    json!({
        "method": method,
        "config_hash": cfg.hash(),
        "seed": cfg.seed,
        "items": items,
        "dev_items": dev_items,
        "details": out.report,
    })
}

/// Write estimates, report and checkpoint for one method; returns the paths written.
fn write_method_outputs(dir: &Path, method: Method, report: &Value, out: &MethodOutput) -> Result<Vec<PathBuf>> {
    let estimates = dir.join(format!("{method}.estimates.jsonl"));
    let report_path = dir.join(format!("{method}.report.json"));
    save_estimates(&out.estimates, &estimates)?;
    write_json(&report_path, report)?;
    let mut written = vec![estimates, report_path];
    if let Some((params, meta)) = &out.checkpoint {
        let path = dir.join(format!("{method}.skagmdl"));
        save_checkpoint(&path, params, meta)?;
        written.push(path);
    }
    Ok(written)
}

pub fn aggregate(g: &GlobalArgs, method: Method, d: &DataArgs) -> Result<()> {
    let cfg = load_config(g, Some(d))?;
    let ds = load_data(d)?;
    let split = prepare_split(&ds, &cfg)?;
    let out = run_method(method, &split.rest, split.dev.as_ref(), &cfg)?;
    let dev_items = split.dev.as_ref().map_or(0, |d| d.len());
    let report = method_report(method, &cfg, split.rest.len(), dev_items, &out);
    create_dir(&g.out_dir)?;
    let mut manifest = Manifest::new(format!("aggregate {method}"), cfg.seed, Some(cfg.hash()));
    record_inputs(&mut manifest, d, g)?;
    for p in write_method_outputs(&g.out_dir, method, &report, &out)? {
        manifest.output(&g.out_dir, &p)?;
    }
    manifest.write(&g.out_dir, &format!("aggregate-{method}"))?;
    say!(
        "{method}: {} estimates ({} dev items held out) in {}",
        out.estimates.len(),
        dev_items,
        g.out_dir.display()
    );
    Ok(())
}

/// Per-judge skill slopes from a method report: SkillAggregation slopes or
/// Dawid-Skene `p0 + p1 - 1`.
fn report_slopes(report: &Value) -> Option<Vec<f64>> {
    let details = report.get("details").unwrap_or(report);
    if let Some(skills) = details.get("skills").and_then(Value::as_array) {
        return skills.iter().map(|s| s["slope"]["mean"].as_f64()).collect();
    }
    let judges = details.get("judges")?.as_array()?;
    judges
        .iter()
        .map(|j| Some(j["p0"].as_f64()? + j["p1"].as_f64()? - 1.0))
        .collect()
}

fn method_name_from_path(path: &Path) -> String {
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    for suffix in [".estimates.jsonl", ".jsonl"] {
        if let Some(stem) = name.strip_suffix(suffix) {
            return stem.to_string();
        }
    }
    name
}

#[derive(Debug, Serialize)]
struct ScoreRow {
    method: String,
    items: usize,
    accuracy: f64,
    majority_accuracy: f64,
    relative: f64,
}

#[derive(Debug, Serialize)]
struct JudgeRow<'a> {
    judge: &'a str,
    accuracy: f64,
}

fn print_scores(rows: &[ScoreRow]) {
    let width = rows.iter().map(|r| r.method.len()).max().unwrap_or(6).max(6);
    say!("{:width$}  {:>7}  {:>8}  {:>8}  {:>8}", "method", "items", "accuracy", "majority", "relative");
    for r in rows {
        say!(
            "{:width$}  {:>7}  {:>8.4}  {:>8.4}  {:>+8.4}",
            r.method, r.items, r.accuracy, r.majority_accuracy, r.relative
        );
    }
}

fn judge_rows<'a>(ds: &'a JudgmentDataset, accs: &[f64]) -> Vec<JudgeRow<'a>> {
    ds.judge_names()
        .iter()
        .zip(accs)
        .map(|(judge, &accuracy)| JudgeRow { judge, accuracy })
        .collect()
}

pub fn evaluate(g: &GlobalArgs, data: &Path, estimate_files: &[PathBuf], skill_files: &[PathBuf]) -> Result<()> {
    let ds = load_judgments(data, &IngestOptions::default())?;
    let index: HashMap<&str, usize> = ds.items().iter().enumerate().map(|(n, i)| (i.id(), n)).collect();
    let mut manifest = Manifest::new("evaluate", g.seed.unwrap_or(0), None);
    manifest.input(data)?;
    let mut rows = Vec::new();
    for path in estimate_files {
        manifest.input(path)?;
        let est = load_estimates(path, method_name_from_path(path))?;
        let idx = est
            .ids
            .iter()
            .map(|id| {
                index
                    .get(id.as_str())
                    .copied()
                    .ok_or_else(|| Error::Data(format!("{}: id {id:?} not in {}", path.display(), data.display())))
            })
            .collect::<Result<Vec<_>>>()?;
        let items = ds.subset(&idx);
        let acc = accuracy(&est, &items)?;
        let mv = accuracy(&majority_vote(&items), &items)?;
        rows.push(ScoreRow {
            method: est.method.clone(),
            items: items.len(),
            accuracy: acc,
            majority_accuracy: mv,
            relative: acc - mv,
        });
    }
    let judge_accs = per_judge_accuracy(&ds)?;
    let mut pcc = BTreeMap::new();
    for path in skill_files {
        manifest.input(path)?;
        let report: Value = read_config_file(path)?;
        let name = report["method"].as_str().map_or_else(|| method_name_from_path(path), str::to_string);
        let slopes = report_slopes(&report)
            .ok_or_else(|| Error::Data(format!("{}: no per-judge skills in report", path.display())))?;
        pcc.insert(name, skill_accuracy_pcc(&slopes, &judge_accs)?);
    }

    let tables = g.out_dir.join("tables");
    create_dir(&tables)?;
    let methods_csv = tables.join("evaluation.csv");
    let judges_csv = tables.join("per_judge.csv");
    let summary = g.out_dir.join("evaluation.json");
    write_csv(&methods_csv, &rows)?;
    write_csv(&judges_csv, &judge_rows(&ds, &judge_accs))?;
    let per_judge: BTreeMap<&str, f64> = ds.judge_names().iter().map(String::as_str).zip(judge_accs.iter().copied()).collect();
    write_json(
        &summary,
        &json!({ "methods": rows, "per_judge_accuracy": per_judge, "skill_accuracy_pcc": pcc }),
    )?;
    for p in [&methods_csv, &judges_csv, &summary] {
        manifest.output(&g.out_dir, p)?;
    }
    manifest.write(&g.out_dir, "evaluate")?;
    print_scores(&rows);
    for (name, r) in &pcc {
        say!("{name}: slope-accuracy PCC {r:.4}");
    }
    Ok(())
}

pub fn run(g: &GlobalArgs, methods: &[Method], d: &DataArgs) -> Result<()> {
    let cfg = load_config(g, Some(d))?;
    let ds = load_data(d)?;
    let split = prepare_split(&ds, &cfg)?;
    let rest = &split.rest;
    let dev_items = split.dev.as_ref().map_or(0, |d| d.len());
    let outputs = run_pool(g.workers, methods.to_vec(), |m| run_method(m, rest, split.dev.as_ref(), &cfg))?;

    let estimates_dir = g.out_dir.join("methods");
    let tables = g.out_dir.join("tables");
    create_dir(&estimates_dir)?;
    create_dir(&tables)?;
    let mut manifest = Manifest::new("run", cfg.seed, Some(cfg.hash()));
    record_inputs(&mut manifest, d, g)?;

    let labeled = rest.items().iter().any(|i| i.has_label());
    if !labeled {
        warn!("no labeled items outside the dev set; accuracies are not reported");
    }
    let mv = if labeled { Some(accuracy(&majority_vote(rest), rest)?) } else { None };
    let judge_accs = if labeled { Some(per_judge_accuracy(rest)?) } else { None };
    let mut rows = Vec::new();
    let mut method_reports = BTreeMap::new();
    let mut pcc = BTreeMap::new();
    for (&method, out) in methods.iter().zip(&outputs) {
        let report = method_report(method, &cfg, rest.len(), dev_items, out);
        for p in write_method_outputs(&estimates_dir, method, &report, out)? {
            manifest.output(&g.out_dir, &p)?;
        }
        let mut entry = json!({ "details": out.report });
        if let (Some(mv), Some(accs)) = (mv, &judge_accs) {
            let acc = accuracy(&out.estimates, rest)?;
            entry["accuracy"] = json!(acc);
            entry["relative"] = json!(acc - mv);
            rows.push(ScoreRow {
                method: method.to_string(),
                items: rest.len(),
                accuracy: acc,
                majority_accuracy: mv,
                relative: acc - mv,
            });
            if let Some(slopes) = report_slopes(&out.report) {
                match skill_accuracy_pcc(&slopes, accs) {
                    Ok(r) => {
                        pcc.insert(method, r);
                    }
                    Err(e) => warn!("{method}: {e}"),
                }
            }
        }
        method_reports.insert(method, entry);
    }

    let per_judge: Option<BTreeMap<&str, f64>> = judge_accs
        .as_ref()
        .map(|a| ds.judge_names().iter().map(String::as_str).zip(a.iter().copied()).collect());
    let report = json!({
        "config_hash": cfg.hash(),
        "seed": cfg.seed,
        "items": rest.len(),
        "dev_items": dev_items,
        "majority_accuracy": mv,
        "methods": method_reports,
        "per_judge_accuracy": per_judge,
        "skill_accuracy_pcc": pcc,
    });
    let report_path = g.out_dir.join("report.json");
    write_json(&report_path, &report)?;
    manifest.output(&g.out_dir, &report_path)?;
    if let Some(accs) = &judge_accs {
        let methods_csv = tables.join("methods.csv");
        let judges_csv = tables.join("per_judge.csv");
        write_csv(&methods_csv, &rows)?;
        write_csv(&judges_csv, &judge_rows(&ds, accs))?;
        manifest.output(&g.out_dir, &methods_csv)?;
        manifest.output(&g.out_dir, &judges_csv)?;
    }
    manifest.write(&g.out_dir, "run")?;
    info!("wrote {}", report_path.display());
    print_scores(&rows);
    for (name, r) in &pcc {
        say!("{name}: slope-accuracy PCC {r:.4}");
    }
    Ok(())
}

pub fn average(g: &GlobalArgs, a: &Path, b: &Path, out: &Path) -> Result<()> {
    let da = load_judgments(a, &IngestOptions::default())?;
    let db = load_judgments(b, &IngestOptions::default())?;
    let avg = average_judgments(&da, &db)?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    save_judgments(&avg, out)?;
    create_dir(&g.out_dir)?;
    let mut manifest = Manifest::new("average-judgments", g.seed.unwrap_or(0), None);
    manifest.input(a)?;
    manifest.input(b)?;
    manifest.output(&g.out_dir, out)?;
    manifest.write(&g.out_dir, "average-judgments")?;
    say!("averaged {} items into {}", avg.len(), out.display());
    Ok(())
}

pub fn sweep(g: &GlobalArgs, command: SweepCommand) -> Result<()> {
    let (tag, d) = match &command {
        SweepCommand::Subsets { data, .. } => ("subset_sweep", data),
        SweepCommand::Sizes { data, .. } => ("size_sweep", data),
        SweepCommand::Lambda { data, .. } => ("lambda_sweep", data),
    };
    let cfg = load_config(g, Some(d))?;
    let ds = load_data(d)?;
    let tables = g.out_dir.join("tables");
    create_dir(&tables)?;
    let csv = tables.join(format!("{tag}.csv"));
    let header = json!({ "config_hash": cfg.hash(), "seed": cfg.seed });
    let body = match &command {
        SweepCommand::Subsets { methods, sizes, sample, .. } => {
            let spec = match sample {
                Some(count) => SubsetSpec::Sample { sizes: sizes.clone(), count: *count },
                None => SubsetSpec::All { sizes: sizes.clone() },
            };
            let result = subset_sweep(&ds, methods, &spec, &cfg, g.workers)?;
            write_csv(&csv, &result.csv_rows())?;
            for (m, rate) in &result.win_rate {
                say!("{m}: matches or beats majority voting on {:.1}% of subsets", 100.0 * rate);
            }
            json!({ "subsets": spec, "rows": result.rows, "win_rate": result.win_rate })
        }
        SweepCommand::Sizes { methods, sizes, .. } => {
            let rows = size_sweep(&ds, methods, sizes, &cfg, g.workers)?;
            write_csv(&csv, &rows)?;
            for r in &rows {
                say!("{:>7} {:<16} {:.4} ({:+.4} vs majority)", r.size, r.method, r.accuracy, r.relative);
            }
            json!({ "rows": rows })
        }
        SweepCommand::Lambda { lambdas, .. } => {
            let rows = lambda_sweep(&ds, lambdas, &cfg, g.workers)?;
            write_csv(&csv, &rows)?;
            for r in &rows {
                let dev = r.dev_accuracy.map_or("-".to_string(), |v| format!("{v:.4}"));
                say!("lambda {:<8} dev {dev} accuracy {:.4} ({:+.4} vs majority)", r.lambda, r.accuracy, r.relative);
            }
            json!({ "rows": rows })
        }
    };
    let mut report = header;
    report.as_object_mut().expect("object").extend(body.as_object().expect("object").clone());
    let report_path = g.out_dir.join(format!("{tag}.json"));
    write_json(&report_path, &report)?;
    let mut manifest = Manifest::new(format!("sweep {tag}"), cfg.seed, Some(cfg.hash()));
    record_inputs(&mut manifest, d, g)?;
    manifest.output(&g.out_dir, &csv)?;
    manifest.output(&g.out_dir, &report_path)?;
    manifest.write(&g.out_dir, tag)?;
    Ok(())
}
