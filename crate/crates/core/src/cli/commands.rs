use super::config::{ModelChoice, RunConfig};
use super::dataset::{dataset_files, load_dataset, Dataset};
use super::output::OutputSet;
use super::{CliError, GainChoice, SynthArgs};
use crate::diagnostics::{collect_latent_noise, default_ks_grid, diagnose as run_diagnostics, learn_transfer_cdf, DiagnosticStats};
use crate::estimation::{
    base_labels, estimate_batch, estimate_batch_with_base, fit_a, score, write_estimates_csv, Candidate, EstimateRow,
    FitResult, ModelKind, PaEstimate, SampleRef, A_GRID,
};
use crate::metrics::{pearson_r, reliability_bins, MetricsReport, ScoredPrediction};
use crate::oracle::{
    Gain, HttpOracle, HttpOracleConfig, Oracle, PlaybackOracle, QueryCache, SyntheticModel,
};
use crate::prob_core::{CalibrationModel, Confidence, EmpiricalCdf};
use crate::transforms::TransformSpec;
use crate::workload::{Workload, WorkloadConfig};
use serde_json::json;
use std::ops::Range;
use std::path::{Path, PathBuf};
use std::time::Duration;

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

/// Loads the dataset and wraps the configured oracle in a query cache.
fn open(cfg: &RunConfig) -> Result<(Dataset, QueryCache), CliError> {
    let mut ds = load_dataset(RunConfig::require(&cfg.dataset, "dataset")?)?;
    let chosen = [cfg.model.is_some(), cfg.endpoint.is_some(), cfg.playback.is_some()]
        .iter()
        .filter(|&&b| b)
        .count();
    if chosen != 1 {
        return Err(CliError::Config("set exactly one of `model`, `endpoint`, `playback`".into()));
    }
    let inner: Box<dyn Oracle> = if let Some(path) = &cfg.model {
        let model: SyntheticModel = read_json(path)?;
        if model.input_shape() != Some(ds.shape()) {
            return Err(CliError::Config(format!(
                "model input shape {} does not match dataset shape {}",
                model.input_dim(),
                ds.shape()
            )));
        }
        let k = model.class_count();
        if ds.declared_classes && ds.num_classes != k {
            return Err(CliError::Config(format!(
                "dataset declares {} classes, model has {k}",
                ds.num_classes
            )));
        }
        if let Some(l) = ds.labels.iter().find(|l| l.0 >= k) {
            return Err(CliError::Ingestion(format!("label {l} outside the model's {k} classes")));
        }
        ds.num_classes = k;
        Box::new(model)
    } else if let Some(url) = &cfg.endpoint {
        let mut hc = HttpOracleConfig::new(url.clone());
        hc.input_shape = Some(ds.shape());
        hc.num_classes = Some(ds.num_classes);
        if let Some(t) = cfg.timeout_secs {
            hc.timeout = Duration::from_secs(t);
        }
        if let Some(r) = cfg.max_retries {
            hc.max_retries = r;
        }
        if let Some(k) = cfg.max_in_flight {
            hc.max_in_flight = k;
        }
        Box::new(HttpOracle::new(hc)?)
    } else {
        let path = cfg.playback.as_ref().expect("checked above");
        Box::new(
            PlaybackOracle::open(path)?
                .with_shape(ds.shape())
                .with_num_classes(ds.num_classes),
        )
    };
    let cache = match &cfg.cache {
        Some(p) => QueryCache::persistent(inner, p)?,
        None => QueryCache::in_memory(inner),
    };
    Ok((ds, cache))
}

struct Splits {
    val: Range<usize>,
    test: Range<usize>,
}

fn splits(cfg: &RunConfig, ds: &Dataset, default_test: Option<usize>) -> Result<Splits, CliError> {
    let m = cfg.m.unwrap_or(0);
    if m > ds.len() {
        return Err(CliError::Config(format!("m = {m} exceeds dataset size {}", ds.len())));
    }
    let rest = ds.len() - m;
    let n = cfg.n.or(default_test.map(|d| d.min(rest))).unwrap_or(rest);
    if m + n > ds.len() {
        return Err(CliError::Config(format!("m + n = {} exceeds dataset size {}", m + n, ds.len())));
    }
    Ok(Splits {
        val: 0..m,
        test: m..m + n,
    })
}

fn refs(ds: &Dataset, r: Range<usize>) -> Vec<SampleRef<'_>> {
    r.map(|i| SampleRef {
        id: i as u64,
        image: &ds.images[i],
    })
    .collect()
}

fn check_budget(cfg: &RunConfig, planned: u64) -> Result<(), CliError> {
    match cfg.budget {
        Some(cap) if planned > cap => Err(CliError::Budget { planned, cap }),
        _ => Ok(()),
    }
}

fn model_kind(cfg: &RunConfig) -> Result<ModelKind, CliError> {
    match cfg.model_kind.unwrap_or(ModelChoice::Gaussian) {
        ModelChoice::Gaussian => Ok(ModelKind::Gaussian),
        ModelChoice::Transfer => {
            let path = RunConfig::require(&cfg.transfer_cdf, "transfer_cdf")?;
            let cdf: EmpiricalCdf = read_json(path)?;
            Ok(ModelKind::Transfer(cdf))
        }
    }
}

fn require_s(cfg: &RunConfig) -> Result<usize, CliError> {
    Ok(*RunConfig::require(&cfg.s, "s")?)
}

fn fit_planned(m: usize, specs: usize, s: usize) -> u64 {
    m as u64 * (1 + specs as u64 * s as u64)
}

fn eval_planned(n: usize, s: usize) -> u64 {
    n as u64 * (s as u64 + 1)
}

/// Validation fit: one clean query per sample, then `s` draws per spec.
fn fit_split(
    oracle: &dyn Oracle,
    ds: &Dataset,
    val: Range<usize>,
    specs: &[TransformSpec],
    s: usize,
    seed: u64,
    kind: &ModelKind,
) -> Result<FitResult, CliError> {
    if val.is_empty() {
        return Err(CliError::Config("fitting needs m >= 1 validation samples".into()));
    }
    if s == 0 {
        return Err(CliError::Config("fitting needs s >= 1".into()));
    }
    let samples = refs(ds, val.clone());
    let bases = base_labels(oracle, &samples)?;
    let mut candidates = Vec::with_capacity(specs.len());
    for spec in specs {
        let estimates = estimate_batch_with_base(oracle, &samples, &bases, spec, s, seed)?;
        candidates.push(Candidate {
            spec: *spec,
            estimates,
        });
    }
    Ok(fit_a(&candidates, &ds.labels[val], ds.num_classes, kind, &A_GRID)?)
}

struct Evaluation {
    rows: Vec<EstimateRow>,
    preds: Vec<ScoredPrediction>,
    report: MetricsReport,
}

fn evaluate_naive(oracle: &dyn Oracle, ds: &Dataset, test: Range<usize>) -> Result<Evaluation, CliError> {
    let samples = refs(ds, test.clone());
    let bases = base_labels(oracle, &samples)?;
    let mut rows = Vec::with_capacity(bases.len());
    let mut preds = Vec::with_capacity(bases.len());
    for (i, &b) in test.clone().zip(&bases) {
        rows.push(EstimateRow::naive(ds.names[i].clone(), b));
        preds.push(ScoredPrediction::new(Confidence::ONE, b, ds.labels[i], ds.num_classes)?);
    }
    let report = MetricsReport::evaluate(&preds, 0, None, None)?;
    Ok(Evaluation { rows, preds, report })
}

fn evaluate_model(
    oracle: &dyn Oracle,
    ds: &Dataset,
    test: Range<usize>,
    spec: &TransformSpec,
    s: usize,
    seed: u64,
    model: &CalibrationModel,
) -> Result<Evaluation, CliError> {
    let samples = refs(ds, test.clone());
    let estimates: Vec<PaEstimate> = estimate_batch(oracle, &samples, spec, s, seed)?;
    let conf = crate::estimation::assign_confidences(&estimates, model).map_err(|e| CliError::Other(e.to_string()))?;
    let preds = score(&estimates, &conf, &ds.labels[test.clone()], ds.num_classes)?;
    let rows = test
        .zip(&estimates)
        .zip(&conf)
        .map(|((i, e), &c)| EstimateRow::from_estimate(ds.names[i].clone(), e, c))
        .collect();
    let report = MetricsReport::evaluate(&preds, s, Some(*spec), Some(model.a()))?;
    Ok(Evaluation { rows, preds, report })
}

fn counters(cache: &QueryCache) -> serde_json::Value {
    json!({ "queries": cache.queries(), "remote_calls": cache.remote_calls() })
}

fn summary(command: &str, outputs: &[PathBuf], planned: u64, cache: Option<&QueryCache>, extra: serde_json::Value) -> serde_json::Value {
    let mut v = json!({
        "command": command,
        "outputs": outputs.iter().map(|p| p.display().to_string()).collect::<Vec<_>>(),
        "planned_queries": planned,
    });
    if let Some(c) = cache {
        v.as_object_mut().unwrap().extend(counters(c).as_object().unwrap().clone());
    }
    if let serde_json::Value::Object(map) = extra {
        v.as_object_mut().unwrap().extend(map);
    }
    v
}

pub fn estimate(cfg: &RunConfig) -> Result<serde_json::Value, CliError> {
    let out = cfg.out_dir()?.to_path_buf();
    let s = require_s(cfg)?;
    let (ds, cache) = open(cfg)?;
    let split = splits(cfg, &ds, None)?;
    let seed = cfg.run_seed();
    let mut files = OutputSet::new();
    let (planned, eval) = if s == 0 {
        let planned = split.test.len() as u64;
        check_budget(cfg, planned)?;
        (planned, evaluate_naive(&cache, &ds, split.test.clone())?)
    } else if let Some(path) = &cfg.calibration {
        let fit: FitResult = read_json(path)?;
        let spec = cfg.spec.unwrap_or(fit.best_spec);
        let planned = eval_planned(split.test.len(), s);
        check_budget(cfg, planned)?;
        (planned, evaluate_model(&cache, &ds, split.test.clone(), &spec, s, seed, &fit.model)?)
    } else {
        let specs = cfg.candidate_specs()?;
        let kind = model_kind(cfg)?;
        if split.val.is_empty() {
            return Err(CliError::Config(
                "fitting needs m >= 1 validation samples (or pass `calibration`)".into(),
            ));
        }
        let planned = fit_planned(split.val.len(), specs.len(), s) + eval_planned(split.test.len(), s);
        check_budget(cfg, planned)?;
        let fit = fit_split(&cache, &ds, split.val.clone(), &specs, s, seed, &kind)?;
        let eval = evaluate_model(&cache, &ds, split.test.clone(), &fit.best_spec, s, seed, &fit.model)?;
        files.add_json("fit.json", &fit);
        (planned, eval)
    };
    let mut report = eval.report;
    if let Some(path) = &cfg.diagnostics {
        let d: DiagnosticStats = read_json(path)?;
        report.var = Some(d.var_stat);
        report.ks = Some(d.ks_stat);
    }
    let mut csv = Vec::new();
    write_estimates_csv(&mut csv, &eval.rows)?;
    files.add("estimates.csv", csv);
    files.add_json("metrics.json", &report);
    files.add("reliability.csv", reliability_bins(&eval.preds)?.to_csv());
    let written = files.commit(&out)?;
    Ok(summary(
        "estimate",
        &written,
        planned,
        Some(&cache),
        json!({ "acc": report.acc, "ece": report.ece, "auroc": report.auroc, "brier": report.brier }),
    ))
}

pub fn fit(cfg: &RunConfig) -> Result<serde_json::Value, CliError> {
    let out = cfg.out_dir()?.to_path_buf();
    let s = require_s(cfg)?;
    let specs = cfg.candidate_specs()?;
    let kind = model_kind(cfg)?;
    let (ds, cache) = open(cfg)?;
    let split = splits(cfg, &ds, None)?;
    let planned = fit_planned(split.val.len(), specs.len(), s);
    check_budget(cfg, planned)?;
    let result = fit_split(&cache, &ds, split.val, &specs, s, cfg.run_seed(), &kind)?;
    let mut files = OutputSet::new();
    files.add_json("fit.json", &result);
    let written = files.commit(&out)?;
    Ok(summary(
        "fit",
        &written,
        planned,
        Some(&cache),
        json!({ "best_a": result.best_a, "best_spec": result.best_spec, "objective_value": result.objective_value }),
    ))
}

pub const DEFAULT_DIAGNOSTIC_IMAGES: usize = 100;
pub const DEFAULT_DRAWS: usize = 1000;

fn single_spec(cfg: &RunConfig) -> Result<TransformSpec, CliError> {
    if let Some(spec) = &cfg.spec {
        return Ok(*spec);
    }
    if let Some(path) = &cfg.calibration {
        let fit: FitResult = read_json(path)?;
        return Ok(fit.best_spec);
    }
    Err(CliError::Config("set `spec` (or `calibration` to reuse its best spec)".into()))
}

fn latent_samples(cfg: &RunConfig) -> Result<Vec<crate::diagnostics::LatentNoiseSample>, CliError> {
    let spec = single_spec(cfg)?;
    let (ds, cache) = open(cfg)?;
    let split = splits(cfg, &ds, Some(DEFAULT_DIAGNOSTIC_IMAGES))?;
    let draws = cfg.draws.unwrap_or(DEFAULT_DRAWS);
    let samples = refs(&ds, split.test);
    Ok(collect_latent_noise(&cache, &samples, &spec, draws, cfg.run_seed())?)
}

pub fn diagnose(cfg: &RunConfig) -> Result<serde_json::Value, CliError> {
    let out = cfg.out_dir()?.to_path_buf();
    let samples = latent_samples(cfg)?;
    let (stats, ensemble) = run_diagnostics(&samples, &default_ks_grid())?;
    let mut csv = Vec::new();
    ensemble.write_csv(&mut csv, stats.best_fit_a)?;
    let mut files = OutputSet::new();
    files.add_json("diagnostics.json", &stats);
    files.add("ensemble.csv", csv);
    let written = files.commit(&out)?;
    Ok(summary("diagnose", &written, 0, None, serde_json::to_value(stats).unwrap()))
}

pub fn transfer_fit(cfg: &RunConfig) -> Result<serde_json::Value, CliError> {
    let out = cfg.out_dir()?.to_path_buf();
    let samples = latent_samples(cfg)?;
    let cdf = learn_transfer_cdf(&samples)?;
    let mut files = OutputSet::new();
    files.add_json("transfer_cdf.json", &cdf);
    let written = files.commit(&out)?;
    Ok(summary("transfer-fit", &written, 0, None, json!({ "pooled_draws": cdf.len() })))
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn sweep(cfg: &RunConfig) -> Result<serde_json::Value, CliError> {
    let out = cfg.out_dir()?.to_path_buf();
    let s_list = RunConfig::require(&cfg.s_list, "s_list")?.clone();
    if s_list.is_empty() {
        return Err(CliError::Config("s_list is empty".into()));
    }
    let specs = cfg.candidate_specs()?;
    let kind = model_kind(cfg)?;
    let (ds, cache) = open(cfg)?;
    let split = splits(cfg, &ds, None)?;
    let planned: u64 = s_list
        .iter()
        .map(|&s| {
            if s == 0 {
                split.test.len() as u64
            } else {
                fit_planned(split.val.len(), specs.len(), s) + eval_planned(split.test.len(), s)
            }
        })
        .sum();
    check_budget(cfg, planned)?;
    let seed = cfg.run_seed();
    let mut csv = String::from("S,spec,a,acc,ece,auroc,brier\n");
    for &s in &s_list {
        let report = if s == 0 {
            evaluate_naive(&cache, &ds, split.test.clone())?.report
        } else {
            let fit = fit_split(&cache, &ds, split.val.clone(), &specs, s, seed, &kind)?;
            evaluate_model(&cache, &ds, split.test.clone(), &fit.best_spec, s, seed, &fit.model)?.report
        };
        let spec = report.spec.as_ref().map(|sp| sp.label()).unwrap_or_else(|| "none".into());
        csv.push_str(&format!(
            "{s},{spec},{},{},{},{},{}\n",
            opt(report.a),
            report.acc,
            report.ece,
            opt(report.auroc),
            report.brier
        ));
    }
    let mut files = OutputSet::new();
    files.add("sweep.csv", csv.clone());
    let written = files.commit(&out)?;
    Ok(summary("sweep", &written, planned, Some(&cache), json!({})))
}

fn quote(field: &str) -> String {
    if field.contains([',', '"', '\n']) {
        format!("\"{}\"", field.replace('"', "\"\""))
    } else {
        field.to_string()
    }
}

pub fn report(cfg: &RunConfig) -> Result<serde_json::Value, CliError> {
    let out = cfg.out_dir()?.to_path_buf();
    let runs = RunConfig::require(&cfg.runs, "runs")?;
    let mut reports = Vec::with_capacity(runs.len());
    for r in runs {
        let path = if r.is_dir() { r.join("metrics.json") } else { r.clone() };
        let rep: MetricsReport = read_json(&path)?;
        reports.push((r.display().to_string(), rep));
    }
    let mut table = String::from("run,acc,ece,auroc,brier,var,ks,n,S,a,spec\n");
    for (name, r) in &reports {
        let spec = r.spec.as_ref().map(|sp| sp.label()).unwrap_or_default();
        table.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{}\n",
            quote(name),
            r.acc,
            r.ece,
            opt(r.auroc),
            r.brier,
            opt(r.var),
            opt(r.ks),
            r.n,
            r.s,
            opt(r.a),
            quote(&spec)
        ));
    }
    type Pick = fn(&MetricsReport) -> Option<f64>;
    let xs: [(&str, Pick); 2] = [("var", |r| r.var), ("ks", |r| r.ks)];
    let ys: [(&str, Pick); 3] = [("ece", |r| Some(r.ece)), ("auroc", |r| r.auroc), ("brier", |r| Some(r.brier))];
    let mut pearson = String::from("x,y,r,p_value,n\n");
    for (xn, xf) in xs {
        for (yn, yf) in ys {
            let (a, b): (Vec<f64>, Vec<f64>) = reports
                .iter()
                .filter_map(|(_, r)| Some((xf(r)?, yf(r)?)))
                .unzip();
            match pearson_r(&a, &b) {
                Ok(c) => pearson.push_str(&format!("{xn},{yn},{},{},{}\n", c.r, c.p_value, c.n)),
                Err(e) => {
                    log::warn!("pearson {xn}/{yn}: {e}");
                    pearson.push_str(&format!("{xn},{yn},,,{}\n", a.len()));
                }
            }
        }
    }
    let mut files = OutputSet::new();
    files.add("table.csv", table);
    files.add("pearson.csv", pearson);
    let written = files.commit(&out)?;
    Ok(summary("report", &written, 0, None, json!({ "runs": reports.len() })))
}

pub fn synth(args: &SynthArgs) -> Result<serde_json::Value, CliError> {
    let gain = match args.gain {
        GainChoice::Linear => Gain::Identity,
        GainChoice::Nonlinear => Gain::DEFAULT_NONLINEAR,
    };
    let w = Workload::generate(&WorkloadConfig {
        shape: crate::transforms::Shape::new(args.height, args.width, args.channels),
        latent_dim: args.latent_dim,
        num_classes: args.num_classes,
        gain,
        samples: args.count,
        target_accuracy: args.target_accuracy,
        seed: args.seed,
    })?;
    let mut files = OutputSet::new();
    files.add_json("model.json", &w.model);
    for (name, bytes) in dataset_files(&w.images, &w.labels, args.num_classes) {
        files.add(name, bytes);
    }
    let written = files.commit(&args.out)?;
    let correct = w
        .images
        .iter()
        .zip(&w.labels)
        .filter(|(img, l)| w.model.top1(img).map(|p| p == **l).unwrap_or(false))
        .count();
    Ok(summary(
        "synth",
        &written,
        0,
        None,
        json!({ "samples": w.images.len(), "clean_accuracy": correct as f64 / w.images.len() as f64 }),
    ))
}
