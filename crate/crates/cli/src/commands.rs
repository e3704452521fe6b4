//! The `preprocess`, `train`, `bench`, `params` and `wl-demo` commands.
//!
//! Each command returns a serializable report and writes its artifacts
//! under the resolved output directory. Result files never mix timings
//! with results: wall-clock figures live under a separate `timings` key.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::info;
use serde::Serialize;

use se2p::cache::{read_cache, write_cache};
use se2p::model::save_checkpoint;
use se2p::trainer::{bench, cross_validate_models, prepare_inputs, BenchReport, TrainConfig};
use se2p::wl::{cycle_demo, WlDemo};
use se2p::{
    param_count, preprocess_dataset, Ablation, ConfigClass, CountMode, Dataset, PreprocessedGraph, Preprocessing, Stage,
};

use crate::config::{resolve, ResolvedConfig, RunConfigFile};
use crate::{load_dataset, CliError, CliResult};

fn dataset_of(cfg: &RunConfigFile) -> CliResult<Dataset> {
    let name = cfg
        .dataset
        .as_deref()
        .ok_or_else(|| CliError::config("--dataset is required"))?;
    load_dataset(cfg.data_dir.as_deref(), name)
}

fn ensure_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::config(format!("cannot create {}: {e}", dir.display())))
}

fn write_file(path: &Path, body: &[u8]) -> CliResult<()> {
    fs::write(path, body).map_err(|e| CliError::config(format!("cannot write {}: {e}", path.display())))
}

fn to_json<T: Serialize>(value: &T) -> CliResult<String> {
    serde_json::to_string_pretty(value).map_err(CliError::internal)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PreprocessReport {
    pub dataset: String,
    pub graphs: usize,
    pub config_class: ConfigClass,
    pub stage: Stage,
    pub ablation: Ablation,
    pub p: f64,
    pub r: usize,
    pub l: usize,
    pub levels: usize,
    pub d: usize,
    pub cache: PathBuf,
    pub elapsed_seconds: f64,
}

fn cache_path(rc: &ResolvedConfig) -> PathBuf {
    rc.out.join(format!("{}.cache", rc.run_name()))
}

/// Sidecar recording what a cache was built from. The binary header cannot
/// hold the drop probability or seed, so reuse is decided on this file.
fn cache_meta_path(rc: &ResolvedConfig) -> PathBuf {
    rc.out.join(format!("{}.cache.json", rc.run_name()))
}

#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
struct CacheMeta {
    dataset: String,
    graphs: usize,
    d: usize,
    preprocessing: Preprocessing,
}

fn cache_meta(rc: &ResolvedConfig, ds: &Dataset) -> CacheMeta {
    CacheMeta {
        dataset: ds.name.clone(),
        graphs: ds.len(),
        d: ds.d,
        preprocessing: rc.preprocessing(),
    }
}

fn store_cache(rc: &ResolvedConfig, ds: &Dataset, graphs: &[PreprocessedGraph]) -> CliResult<PathBuf> {
    let path = cache_path(rc);
    write_cache(graphs, &path)?;
    write_file(&cache_meta_path(rc), to_json(&cache_meta(rc, ds))?.as_bytes())?;
    Ok(path)
}

/// Preprocesses the dataset and writes the cache file.
pub fn cmd_preprocess(cfg: &RunConfigFile) -> CliResult<PreprocessReport> {
    let ds = dataset_of(cfg)?;
    let rc = resolve(cfg, &ds)?;
    ensure_dir(&rc.out)?;
    let prep = rc.preprocessing();
    let start = Instant::now();
    let graphs = preprocess_dataset(&ds, &prep)?;
    let elapsed_seconds = start.elapsed().as_secs_f64();
    let cache = store_cache(&rc, &ds, &graphs)?;
    let plan = prep.effective_plan();
    let report = PreprocessReport {
        dataset: ds.name.clone(),
        graphs: graphs.len(),
        config_class: rc.class,
        stage: rc.class.stage(),
        ablation: rc.ablation,
        p: plan.p,
        r: plan.r,
        l: rc.l,
        levels: prep.levels(),
        d: ds.d,
        cache,
        elapsed_seconds,
    };
    println!("graphs: {}", report.graphs);
    println!("R: {}", report.r);
    println!("L: {}", report.l);
    println!("p: {:.4}", report.p);
    println!("elapsed: {:.3}s", report.elapsed_seconds);
    println!("cache: {}", report.cache.display());
    Ok(report)
}

/// Reads the run's cache when it matches the current configuration,
/// otherwise preprocesses and writes it.
fn cached_or_preprocess(rc: &ResolvedConfig, ds: &Dataset) -> CliResult<Vec<PreprocessedGraph>> {
    let path = cache_path(rc);
    let stored: Option<CacheMeta> = fs::read_to_string(cache_meta_path(rc))
        .ok()
        .and_then(|text| serde_json::from_str(&text).ok());
    if path.is_file() && stored.as_ref() == Some(&cache_meta(rc, ds)) {
        let cache = read_cache(&path)?;
        if cache.graphs.len() == ds.len() && cache.header.stage == rc.class.stage() {
            info!("using cache {}", path.display());
            return Ok(cache.graphs);
        }
    }
    let graphs = preprocess_dataset(ds, &rc.preprocessing())?;
    store_cache(rc, ds, &graphs)?;
    Ok(graphs)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Timings {
    pub prep_seconds: f64,
    pub train_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainSummary {
    pub dataset: String,
    pub config_class: ConfigClass,
    pub ablation: Ablation,
    pub seed: u64,
    pub p: f64,
    pub r: usize,
    pub l: usize,
    pub epochs: usize,
    pub folds: usize,
    pub stratified: bool,
    pub model: se2p::ModelConfig,
    pub params_with_bias: u64,
    pub mean_acc: f64,
    pub std_acc: f64,
    pub selected_epoch: usize,
    pub fold_acc: Vec<f64>,
    pub timings: Timings,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct TrainOptions {
    /// Save each fold's final model next to the results.
    pub checkpoints: bool,
}

/// Runs k-fold cross-validation and writes `<run>.csv` (per-epoch curves)
/// and `<run>.json` (summary).
pub fn cmd_train(cfg: &RunConfigFile, opts: TrainOptions) -> CliResult<TrainSummary> {
    let ds = dataset_of(cfg)?;
    let rc = resolve(cfg, &ds)?;
    ensure_dir(&rc.out)?;

    let start = Instant::now();
    let graphs = cached_or_preprocess(&rc, &ds)?;
    let inputs = prepare_inputs(&graphs)?;
    let prep_seconds = start.elapsed().as_secs_f64();

    let train = TrainConfig {
        epochs: rc.epochs,
        folds: rc.folds,
        seed: rc.seed,
        ..TrainConfig::default()
    };
    let start = Instant::now();
    let (cv, models) = cross_validate_models(&rc.model, &inputs, &train)?;
    let train_seconds = start.elapsed().as_secs_f64();

    let plan = rc.preprocessing().effective_plan();
    let summary = TrainSummary {
        dataset: ds.name.clone(),
        config_class: rc.class,
        ablation: rc.ablation,
        seed: rc.seed,
        p: plan.p,
        r: plan.r,
        l: rc.l,
        epochs: rc.epochs,
        folds: rc.folds,
        stratified: cv.stratified,
        model: rc.model.clone(),
        params_with_bias: param_count(&rc.model, CountMode::WithBias)?,
        mean_acc: cv.mean_acc,
        std_acc: cv.std_acc,
        selected_epoch: cv.selected_epoch,
        fold_acc: cv.folds.iter().map(|f| f.val_acc[cv.selected_epoch]).collect(),
        timings: Timings {
            prep_seconds,
            train_seconds,
        },
    };

    let name = rc.run_name();
    let mut csv = String::from("epoch,mean");
    for f in 0..cv.folds.len() {
        csv.push_str(&format!(",fold{f}"));
    }
    csv.push('\n');
    for (e, m) in cv.mean_curve.iter().enumerate() {
        csv.push_str(&format!("{e},{m}"));
        for f in &cv.folds {
            csv.push_str(&format!(",{}", f.val_acc[e]));
        }
        csv.push('\n');
    }
    write_file(&rc.out.join(format!("{name}.csv")), csv.as_bytes())?;
    write_file(&rc.out.join(format!("{name}.json")), to_json(&summary)?.as_bytes())?;
    if opts.checkpoints {
        for (f, m) in models.iter().enumerate() {
            save_checkpoint(m, rc.out.join(format!("{name}_fold{f}.se2m")))?;
        }
    }
    println!(
        "{} {}: {:.2} ± {:.2} at epoch {} ({} folds{})",
        summary.dataset,
        name,
        100.0 * summary.mean_acc,
        100.0 * summary.std_acc,
        summary.selected_epoch,
        summary.folds,
        if summary.stratified { ", stratified" } else { "" }
    );
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRun {
    pub config_class: ConfigClass,
    pub repeat: usize,
    pub report: BenchReport,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchMedian {
    pub config_class: ConfigClass,
    pub prep_seconds: f64,
    pub mean_epoch_seconds: f64,
    pub total_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchSummary {
    pub dataset: String,
    pub epochs: usize,
    pub repeat: usize,
    pub runs: Vec<BenchRun>,
    pub median: Vec<BenchMedian>,
}

/// Median of a non-empty sample; even counts average the middle pair.
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    if v.len().is_multiple_of(2) {
        (v[mid - 1] + v[mid]) / 2.0
    } else {
        v[mid]
    }
}

/// Benchmarks the given classes (all four when empty) `repeat` times.
pub fn cmd_bench(cfg: &RunConfigFile, classes: &[ConfigClass], repeat: usize) -> CliResult<BenchSummary> {
    if repeat == 0 {
        return Err(CliError::config("--repeat must be >= 1"));
    }
    let ds = dataset_of(cfg)?;
    let classes: Vec<ConfigClass> = if classes.is_empty() {
        ConfigClass::ALL.to_vec()
    } else {
        classes.to_vec()
    };
    let mut runs = Vec::new();
    let mut epochs = 0;
    for rep in 0..repeat {
        for &class in &classes {
            let rc = resolve(
                &RunConfigFile {
                    config_class: Some(class),
                    ..cfg.clone()
                },
                &ds,
            )?;
            epochs = rc.epochs;
            let train = TrainConfig {
                epochs: rc.epochs,
                folds: rc.folds,
                seed: rc.seed,
                ..TrainConfig::default()
            };
            let report = bench(&rc.model, &ds, &rc.preprocessing(), &train)?;
            println!(
                "run {rep} {class}: prep {:.4}s, epoch {:.5}s, total {:.3}s",
                report.prep_seconds, report.mean_epoch_seconds, report.total_seconds
            );
            runs.push(BenchRun {
                config_class: class,
                repeat: rep,
                report,
            });
        }
    }
    let median = classes
        .iter()
        .map(|&class| {
            let of = |f: fn(&BenchReport) -> f64| {
                median(
                    &runs
                        .iter()
                        .filter(|r| r.config_class == class)
                        .map(|r| f(&r.report))
                        .collect::<Vec<_>>(),
                )
            };
            BenchMedian {
                config_class: class,
                prep_seconds: of(|r| r.prep_seconds),
                mean_epoch_seconds: of(|r| r.mean_epoch_seconds),
                total_seconds: of(|r| r.total_seconds),
            }
        })
        .collect();
    let summary = BenchSummary {
        dataset: ds.name.clone(),
        epochs,
        repeat,
        runs,
        median,
    };
    let out = cfg.out.clone().unwrap_or_else(|| PathBuf::from("out"));
    ensure_dir(&out)?;
    let seed = cfg.seed.unwrap_or(0);
    write_file(
        &out.join(format!("{}_bench_{seed}.json", ds.name)),
        to_json(&summary)?.as_bytes(),
    )?;
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParamRow {
    pub config_class: ConfigClass,
    /// `None` when the closed form is fractional for this configuration.
    pub formula: Option<u64>,
    pub with_bias: u64,
}

/// Parameter counts of every class under the resolved hyperparameters.
pub fn cmd_params(cfg: &RunConfigFile) -> CliResult<Vec<ParamRow>> {
    let ds = dataset_of(cfg)?;
    let mut rows = Vec::new();
    println!("{:<6} {:>10} {:>10}", "class", "formula", "with_bias");
    for class in ConfigClass::ALL {
        let rc = resolve(
            &RunConfigFile {
                config_class: Some(class),
                ..cfg.clone()
            },
            &ds,
        )?;
        let formula = param_count(&rc.model, CountMode::Formula).ok();
        let with_bias = param_count(&rc.model, CountMode::WithBias)?;
        println!(
            "{:<6} {:>10} {:>10}",
            class.to_string(),
            formula.map_or_else(|| "n/a".to_string(), |v| v.to_string()),
            with_bias
        );
        rows.push(ParamRow {
            config_class: class,
            formula,
            with_bias,
        });
    }
    Ok(rows)
}

/// Runs the cycle deletion demo, prints verdicts and the JSON report, and
/// writes it to `out` when given.
pub fn cmd_wl_demo(out: Option<&Path>) -> CliResult<WlDemo> {
    let demo = cycle_demo();
    let verdict = |d: bool| if d { "distinguishable" } else { "indistinguishable" };
    println!(
        "{} vs {}: {}",
        demo.left_name,
        demo.right_name,
        verdict(demo.original_distinguishable)
    );
    println!(
        "single-node deletions: {} of {} pairs distinguishable",
        demo.distinguishable_pairs,
        demo.pairs.len()
    );
    let json = to_json(&demo)?;
    let mut stdout = std::io::stdout().lock();
    writeln!(stdout, "{json}").map_err(CliError::internal)?;
    if let Some(dir) = out {
        ensure_dir(dir)?;
        write_file(&dir.join("wl_demo.json"), json.as_bytes())?;
    }
    Ok(demo)
}
