//! Stratified k-fold cross-validation, epoch selection and runtime
//! benchmarks.
//!
//! Seeds are derived, never drawn from a shared generator: model
//! initialization for fold `f` uses `ChaCha8Rng::seed_from_u64(seed)` on
//! stream `f << 32`, and epoch `e` of that fold (minibatch shuffle and
//! dropout) uses stream `(f << 32) | (e + 1)`. Folds can therefore train in
//! parallel and still reproduce bit for bit.

use std::time::Instant;

use log::{debug, warn};
use ndarray::Axis;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diffusion::{preprocess_dataset, Ablation, ConfigClass, PreprocessedGraph, Preprocessing};
use crate::error::{Error, Result};
use crate::graph::Dataset;
use crate::model::{build_model, Batch, GraphInput, Model, ModelConfig};
use crate::nn::{softmax_xent, Adam, Mode, Parameters, StepDecay};

pub const DEFAULT_FOLDS: usize = 10;
pub const DEFAULT_EPOCHS: usize = 350;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldSplit {
    /// Validation indices of each fold, ascending.
    pub folds: Vec<Vec<usize>>,
    pub seed: u64,
    /// False when some class was too small to stratify.
    pub stratified: bool,
}

impl FoldSplit {
    pub fn k(&self) -> usize {
        self.folds.len()
    }

    pub fn validation(&self, fold: usize) -> &[usize] {
        &self.folds[fold]
    }

    /// Every index outside fold `fold`, ascending.
    pub fn training(&self, fold: usize) -> Vec<usize> {
        let mut out: Vec<usize> = self
            .folds
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != fold)
            .flat_map(|(_, f)| f.iter().copied())
            .collect();
        out.sort_unstable();
        out
    }
}

/// Splits `labels` into `k` folds. Each class is shuffled on its own, the
/// classes are laid out one after another and position `i` goes to fold
/// `i mod k`, so fold sizes differ by at most one and every class is spread
/// evenly. If a class has fewer than `k` members the whole index set is
/// shuffled instead and `stratified` is false.
pub fn kfold_split(labels: &[usize], k: usize, seed: u64) -> Result<FoldSplit> {
    if k < 2 {
        return Err(Error::InvalidParam(format!("need at least 2 folds, got {k}")));
    }
    if labels.len() < k {
        return Err(Error::InvalidParam(format!(
            "{} graphs cannot fill {k} folds",
            labels.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let num_classes = labels.iter().max().map_or(0, |m| m + 1);
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); num_classes];
    for (i, &y) in labels.iter().enumerate() {
        by_class[y].push(i);
    }
    let stratified = by_class.iter().all(|c| c.is_empty() || c.len() >= k);
    let order: Vec<usize> = if stratified {
        by_class
            .into_iter()
            .flat_map(|mut members| {
                members.shuffle(&mut rng);
                members
            })
            .collect()
    } else {
        warn!("a class has fewer than {k} graphs; folds are not stratified");
        let mut all: Vec<usize> = (0..labels.len()).collect();
        all.shuffle(&mut rng);
        all
    };
    let mut folds = vec![Vec::new(); k];
    for (pos, idx) in order.into_iter().enumerate() {
        folds[pos % k].push(idx);
    }
    for f in &mut folds {
        f.sort_unstable();
    }
    Ok(FoldSplit {
        folds,
        seed,
        stratified,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub folds: usize,
    pub schedule: StepDecay,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: DEFAULT_EPOCHS,
            folds: DEFAULT_FOLDS,
            schedule: StepDecay::default(),
            seed: 0,
        }
    }
}

fn fold_rng(seed: u64, fold: usize, epoch: Option<usize>) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let low = epoch.map_or(0, |e| e as u64 + 1);
    rng.set_stream(((fold as u64) << 32) | low);
    rng
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldCurve {
    pub val_acc: Vec<f64>,
    pub train_loss: Vec<f64>,
    /// Wall time of each epoch's training pass.
    #[serde(skip)]
    pub epoch_seconds: Vec<f64>,
}

/// Converts preprocessed graphs into row-layout inputs.
pub fn prepare_inputs(graphs: &[PreprocessedGraph]) -> Result<Vec<GraphInput<f32>>> {
    graphs.par_iter().map(GraphInput::from_preprocessed).collect()
}

fn accuracy(model: &Model<f32>, inputs: &[GraphInput<f32>], idx: &[usize], batch_size: usize) -> Result<f64> {
    if idx.is_empty() {
        return Ok(0.0);
    }
    let mut correct = 0usize;
    for chunk in idx.chunks(batch_size.max(1)) {
        let members: Vec<&GraphInput<f32>> = chunk.iter().map(|&i| &inputs[i]).collect();
        let batch = Batch::from_inputs(&members)?;
        let (logits, _) = model.forward(&batch, &mut Mode::Eval)?;
        for (row, &y) in logits.axis_iter(Axis(0)).zip(&batch.labels) {
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            correct += usize::from(best == y);
        }
    }
    Ok(correct as f64 / idx.len() as f64)
}

/// Trains one fold from scratch and records validation accuracy after
/// every epoch.
pub fn train_fold(
    cfg: &ModelConfig,
    inputs: &[GraphInput<f32>],
    train_idx: &[usize],
    val_idx: &[usize],
    fold: usize,
    train: &TrainConfig,
) -> Result<FoldCurve> {
    train_fold_model(cfg, inputs, train_idx, val_idx, fold, train).map(|(curve, _)| curve)
}

/// [`train_fold`] that also returns the model after the last epoch.
pub fn train_fold_model(
    cfg: &ModelConfig,
    inputs: &[GraphInput<f32>],
    train_idx: &[usize],
    val_idx: &[usize],
    fold: usize,
    train: &TrainConfig,
) -> Result<(FoldCurve, Model<f32>)> {
    if train_idx.is_empty() {
        return Err(Error::InvalidParam("empty training set".into()));
    }
    if let Some(g) = inputs.first() {
        if g.stage != cfg.class.stage() {
            return Err(Error::StageMismatch {
                expected: cfg.class.stage().to_string(),
                found: g.stage.to_string(),
            });
        }
    }
    let mut model = build_model::<f32>(cfg, &mut fold_rng(train.seed, fold, None))?;
    let mut grads = model.zeros_like();
    let mut opt = Adam::new(&model);

    let mut curve = FoldCurve {
        val_acc: Vec::with_capacity(train.epochs),
        train_loss: Vec::with_capacity(train.epochs),
        epoch_seconds: Vec::with_capacity(train.epochs),
    };
    let mut order = train_idx.to_vec();
    for epoch in 0..train.epochs {
        let start = Instant::now();
        let mut rng = fold_rng(train.seed, fold, Some(epoch));
        order.shuffle(&mut rng);
        let lr = train.schedule.lr(epoch);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let members: Vec<&GraphInput<f32>> = chunk.iter().map(|&i| &inputs[i]).collect();
            let batch = Batch::from_inputs(&members)?;
            let (logits, tape) = model.forward(&batch, &mut Mode::Train(&mut rng))?;
            let (loss, grad) = softmax_xent(&logits, &batch.labels)?;
            loss_sum += loss as f64 * chunk.len() as f64;
            grads.zero();
            model.backward(&tape, &grad, &mut grads);
            opt.update(&mut model, &grads, lr)?;
        }
        curve.epoch_seconds.push(start.elapsed().as_secs_f64());
        curve.train_loss.push(loss_sum / order.len() as f64);
        curve.val_acc.push(accuracy(&model, inputs, val_idx, cfg.batch_size)?);
    }
    debug!(
        "fold {fold}: final loss {:.4}, final val acc {:.4}",
        curve.train_loss.last().copied().unwrap_or(f64::NAN),
        curve.val_acc.last().copied().unwrap_or(f64::NAN)
    );
    Ok((curve, model))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvResult {
    pub folds: Vec<FoldCurve>,
    pub mean_curve: Vec<f64>,
    pub selected_epoch: usize,
    pub mean_acc: f64,
    /// Population standard deviation over folds at the selected epoch.
    pub std_acc: f64,
    pub stratified: bool,
}

/// Element-wise mean of equally long curves.
pub fn mean_curve(curves: &[Vec<f64>]) -> Result<Vec<f64>> {
    let len = curves.first().map(Vec::len).ok_or_else(|| Error::shape("no curves"))?;
    if curves.iter().any(|c| c.len() != len) {
        return Err(Error::shape("curves differ in length"));
    }
    Ok((0..len)
        .map(|e| curves.iter().map(|c| c[e]).sum::<f64>() / curves.len() as f64)
        .collect())
}

/// Index of the maximum, ties going to the smallest index.
pub fn select_epoch(mean: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &v) in mean.iter().enumerate() {
        if best.is_none_or(|b| v > mean[b]) {
            best = Some(i);
        }
    }
    best
}

/// Summary of per-fold curves at the epoch maximizing their average.
pub fn summarize(folds: Vec<FoldCurve>, stratified: bool) -> Result<CvResult> {
    let curves: Vec<Vec<f64>> = folds.iter().map(|f| f.val_acc.clone()).collect();
    let mean = mean_curve(&curves)?;
    let selected = select_epoch(&mean).ok_or_else(|| Error::shape("curves are empty"))?;
    let at: Vec<f64> = curves.iter().map(|c| c[selected]).collect();
    // Deviations from the first fold keep identical accuracies exact.
    let n = at.len() as f64;
    let shift = at[0];
    let mean_dev = at.iter().map(|a| a - shift).sum::<f64>() / n;
    let mean_acc = shift + mean_dev;
    let var = (at.iter().map(|a| (a - shift - mean_dev).powi(2)).sum::<f64>() / n).max(0.0);
    Ok(CvResult {
        folds,
        mean_curve: mean,
        selected_epoch: selected,
        mean_acc,
        std_acc: var.sqrt(),
        stratified,
    })
}

/// Cross-validates `cfg` on already prepared inputs. Folds run in
/// parallel.
pub fn cross_validate_inputs(cfg: &ModelConfig, inputs: &[GraphInput<f32>], train: &TrainConfig) -> Result<CvResult> {
    cross_validate_models(cfg, inputs, train).map(|(cv, _)| cv)
}

/// [`cross_validate_inputs`] that also returns each fold's final model.
pub fn cross_validate_models(
    cfg: &ModelConfig,
    inputs: &[GraphInput<f32>],
    train: &TrainConfig,
) -> Result<(CvResult, Vec<Model<f32>>)> {
    let labels: Vec<usize> = inputs.iter().map(|g| g.label).collect();
    let split = kfold_split(&labels, train.folds, train.seed)?;
    let (folds, models): (Vec<FoldCurve>, Vec<Model<f32>>) = (0..split.k())
        .into_par_iter()
        .map(|f| train_fold_model(cfg, inputs, &split.training(f), split.validation(f), f, train))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .unzip();
    Ok((summarize(folds, split.stratified)?, models))
}

/// Preprocesses `ds` and cross-validates `cfg`.
pub fn cross_validate(cfg: &ModelConfig, ds: &Dataset, prep: &Preprocessing, train: &TrainConfig) -> Result<CvResult> {
    check_pairing(cfg, prep)?;
    let graphs = preprocess_dataset(ds, prep)?;
    let inputs = prepare_inputs(&graphs)?;
    cross_validate_inputs(cfg, &inputs, train)
}

fn check_pairing(cfg: &ModelConfig, prep: &Preprocessing) -> Result<()> {
    if cfg.class != prep.class || cfg.l != prep.l || cfg.ablation != prep.ablation {
        return Err(Error::config(format!(
            "model ({}, L={}, {}) and preprocessing ({}, L={}, {}) disagree",
            cfg.class, cfg.l, cfg.ablation, prep.class, prep.l, prep.ablation
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    /// Masks, diffusion, fixed aggregation stages and conversion to
    /// training layout.
    pub prep_seconds: f64,
    pub epoch_seconds: Vec<f64>,
    pub mean_epoch_seconds: f64,
    /// `prep_seconds + Σ epoch_seconds`.
    pub total_seconds: f64,
}

/// Times preprocessing and the training epochs of a single fold.
pub fn bench(cfg: &ModelConfig, ds: &Dataset, prep: &Preprocessing, train: &TrainConfig) -> Result<BenchReport> {
    check_pairing(cfg, prep)?;
    let start = Instant::now();
    let graphs = preprocess_dataset(ds, prep)?;
    let inputs = prepare_inputs(&graphs)?;
    let prep_seconds = start.elapsed().as_secs_f64();

    let split = kfold_split(&ds.labels(), train.folds, train.seed)?;
    let curve = train_fold(cfg, &inputs, &split.training(0), split.validation(0), 0, train)?;
    Ok(bench_report(prep_seconds, curve.epoch_seconds))
}

pub fn bench_report(prep_seconds: f64, epoch_seconds: Vec<f64>) -> BenchReport {
    let sum: f64 = epoch_seconds.iter().sum();
    let mean = if epoch_seconds.is_empty() {
        0.0
    } else {
        sum / epoch_seconds.len() as f64
    };
    BenchReport {
        prep_seconds,
        mean_epoch_seconds: mean,
        total_seconds: prep_seconds + sum,
        epoch_seconds,
    }
}

/// Runs the C2 pipeline with perturbations removed (`NoPerturbation`) or
/// additionally reduced to the deepest diffusion level (`SingleDiffusion`).
pub fn ablation_run(
    variant: Ablation,
    cfg: &ModelConfig,
    ds: &Dataset,
    prep: &Preprocessing,
    train: &TrainConfig,
) -> Result<CvResult> {
    let cfg = ModelConfig {
        class: ConfigClass::C2,
        ablation: variant,
        n_pool: cfg.n_pool.or(Some(0)),
        ..cfg.clone()
    };
    let prep = Preprocessing {
        class: ConfigClass::C2,
        ablation: variant,
        ..*prep
    };
    cross_validate(&cfg, ds, &prep, train)
}
