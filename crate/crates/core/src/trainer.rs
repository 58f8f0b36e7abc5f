//! K-shot training with early stopping, fold orchestration and ablations.

use std::collections::BTreeMap;
use std::fmt;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{Ablation, RunConfig};
use crate::dataio::Dataset;
use crate::error::{FocusError, Result};
use crate::manifest::{fold_seed, resplit, sample_k_shot, DatasetManifest, Split};
use crate::metrics::{balanced_accuracy_present, EvalBatch, Metrics};
use crate::model::FocusModel;
use crate::numerics::{softmax, AdamW, AdamWConfig, ParamStore};
use crate::pipeline::{stage1_plan, Stage1Plan};
use crate::rng::{derive_seed, rng_from_seed, stream};

/// Mean retained fraction of one stage over the evaluated bags.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageSummary {
    pub stage_name: String,
    pub mean_ratio: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold_index: usize,
    pub metrics: Metrics,
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub best_val_balanced_acc: f64,
    pub shots: Vec<String>,
    pub compression: Vec<StageSummary>,
}

/// Early-stopping bookkeeping.
#[derive(Clone, Debug)]
pub struct TrainState {
    pub epoch: usize,
    pub best_val_metric: f64,
    pub best_epoch: usize,
    pub epochs_since_improve: usize,
    pub best_params: ParamStore,
}

impl TrainState {
    pub fn new(params: &ParamStore) -> Self {
        Self {
            epoch: 0,
            best_val_metric: f64::NEG_INFINITY,
            best_epoch: 0,
            epochs_since_improve: 0,
            best_params: params.clone(),
        }
    }

    /// Records the validation metric of the epoch just finished. Returns
    /// `true` when training should stop.
    pub fn observe(&mut self, val_metric: f64, params: &ParamStore, patience: usize) -> bool {
        self.epoch += 1;
        if val_metric > self.best_val_metric {
            self.best_val_metric = val_metric;
            self.best_epoch = self.epoch;
            self.best_params = params.clone();
            self.epochs_since_improve = 0;
        } else {
            self.epochs_since_improve += 1;
        }
        self.epochs_since_improve >= patience
    }
}

/// Stage-1 plans for every bag of a dataset. They depend only on the data
/// and `config`, never on parameters.
pub fn prepare_stage1(dataset: &Dataset, config: &RunConfig) -> Result<Vec<Stage1Plan>> {
    dataset
        .bags
        .par_iter()
        .map(|b| stage1_plan(b, config))
        .collect()
}

/// Prompt embeddings are only handed to variants with the prompt branch on.
fn prompts_for<'a>(config: &RunConfig, dataset: &'a Dataset) -> Option<&'a crate::bag::PromptSet> {
    dataset.prompts.as_ref().filter(|_| config.ablation.prompt)
}

/// Class probabilities and compression traces for the given entries.
pub fn predict(
    model: &FocusModel,
    dataset: &Dataset,
    plans: &[Stage1Plan],
    entries: &[usize],
) -> Result<Vec<(Vec<f64>, crate::bag::CompressionTrace)>> {
    let prompts = prompts_for(model.config(), dataset);
    entries
        .par_iter()
        .map(|&i| {
            let s1 = plans[i].apply(&dataset.bags[i]);
            let (bag, trace) = model.compress(&s1, prompts)?;
            let logits = model.logits(bag.features(), prompts)?;
            Ok((softmax(&logits), trace))
        })
        .collect()
}

fn eval_batch(dataset: &Dataset, entries: &[usize], probs: Vec<Vec<f64>>) -> Result<EvalBatch> {
    let labels = entries.iter().map(|&i| dataset.manifest.bags[i].label).collect();
    EvalBatch::new(probs, labels, dataset.num_classes())
}

/// A trained fold: its result and the restored best model.
pub struct TrainedFold {
    pub result: FoldResult,
    pub model: FocusModel,
}

/// Trains on the K-shot sample of `split`'s train entries, selects the
/// checkpoint by validation balanced accuracy, and evaluates it on test.
pub fn train_one_fold(
    dataset: &Dataset,
    plans: &[Stage1Plan],
    split: &DatasetManifest,
    config: &RunConfig,
    fold_index: usize,
    seed: u64,
) -> Result<TrainedFold> {
    let prompts = prompts_for(config, dataset);
    let shots = sample_k_shot(split, config.k_shot, seed)?;
    let val = split.indices_in(Split::Val);
    let test = split.indices_in(Split::Test);
    if val.is_empty() || test.is_empty() {
        return Err(FocusError::config(
            "every fold needs at least one validation and one test bag",
        ));
    }
    let mut model = FocusModel::new(config, dataset.manifest.d, dataset.num_classes(), seed)?;
    let mut opt = AdamW::new(AdamWConfig {
        lr: config.lr,
        weight_decay: config.weight_decay,
        ..Default::default()
    });
    let mut shuffle_rng = rng_from_seed(derive_seed(seed, stream::SHUFFLE));
    let mut state = TrainState::new(&model.params);
    let mut order = shots.clone();

    for epoch in 0..config.max_epochs {
        order.shuffle(&mut shuffle_rng);
        for &i in &order {
            let s1 = plans[i].apply(&dataset.bags[i]);
            let (bag, _) = model.compress(&s1, prompts)?;
            let label = dataset.manifest.bags[i].label;
            let (loss, _) = model.loss_and_backward(bag.features(), prompts, label)?;
            if !loss.is_finite() {
                return Err(FocusError::NonFiniteLoss {
                    epoch,
                    bag_id: dataset.bags[i].id.clone(),
                });
            }
            opt.step(&mut model.params)?;
        }
        let probs = predict(&model, dataset, plans, &val)?
            .into_iter()
            .map(|(p, _)| p)
            .collect();
        let metric = balanced_accuracy_present(&eval_batch(dataset, &val, probs)?).unwrap_or(0.0);
        if state.observe(metric, &model.params, config.patience) {
            break;
        }
    }

    model.params = state.best_params.clone();
    let out = predict(&model, dataset, plans, &test)?;
    let compression = summarize_traces(out.iter().map(|(_, t)| t));
    let probs = out.into_iter().map(|(p, _)| p).collect();
    let metrics = Metrics::compute(&eval_batch(dataset, &test, probs)?)?;
    Ok(TrainedFold {
        result: FoldResult {
            fold_index,
            metrics,
            epochs_run: state.epoch,
            best_epoch: state.best_epoch,
            best_val_balanced_acc: state.best_val_metric,
            shots: shots.iter().map(|&i| dataset.bags[i].id.clone()).collect(),
            compression,
        },
        model,
    })
}

fn summarize_traces<'a>(traces: impl Iterator<Item = &'a crate::bag::CompressionTrace>) -> Vec<StageSummary> {
    let mut names: Vec<String> = Vec::new();
    let mut sums: Vec<f64> = Vec::new();
    let mut count = 0usize;
    for t in traces {
        count += 1;
        for (k, r) in t.stage_records.iter().enumerate() {
            if k == names.len() {
                names.push(r.stage_name.clone());
                sums.push(0.0);
            }
            sums[k] += r.ratio;
        }
    }
    names
        .into_iter()
        .zip(sums)
        .map(|(stage_name, s)| StageSummary {
            stage_name,
            mean_ratio: s / count.max(1) as f64,
        })
        .collect()
}

/// Mean and population standard deviation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len().max(1) as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        Self {
            mean,
            std: var.sqrt(),
        }
    }
}

impl fmt::Display for MeanStd {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.3}±{:.3}", self.mean, self.std)
    }
}

pub const METRIC_NAMES: [&str; 3] = ["balanced_acc", "auc", "f1"];

fn metric_value(m: &Metrics, name: &str) -> f64 {
    match name {
        "balanced_acc" => m.balanced_acc,
        "auc" => m.auc,
        _ => m.f1,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: RunConfig,
    pub folds: Vec<FoldResult>,
    pub summary: BTreeMap<String, MeanStd>,
}

impl ExperimentReport {
    pub fn from_folds(config: &RunConfig, folds: Vec<FoldResult>) -> Self {
        let summary = METRIC_NAMES
            .iter()
            .map(|&n| {
                let v: Vec<f64> = folds.iter().map(|f| metric_value(&f.metrics, n)).collect();
                (n.to_string(), MeanStd::of(&v))
            })
            .collect();
        Self {
            config: config.clone(),
            folds,
            summary,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    /// One row per fold.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("fold,balanced_acc,auc,f1,epochs_run,best_epoch\n");
        for f in &self.folds {
            out += &format!(
                "{},{},{},{},{},{}\n",
                f.fold_index, f.metrics.balanced_acc, f.metrics.auc, f.metrics.f1, f.epochs_run, f.best_epoch
            );
        }
        out
    }

    pub fn per_fold(&self, metric: &str) -> Vec<f64> {
        self.folds.iter().map(|f| metric_value(&f.metrics, metric)).collect()
    }
}

/// Trains and evaluates `config.n_folds` stratified resamplings, in parallel.
pub fn run_experiment(dataset: &Dataset, config: &RunConfig) -> Result<ExperimentReport> {
    Ok(run_experiment_with_model(dataset, config)?.0)
}

/// As [`run_experiment`], also returning the first fold's restored model.
pub fn run_experiment_with_model(dataset: &Dataset, config: &RunConfig) -> Result<(ExperimentReport, FocusModel)> {
    config.validate()?;
    let plans = prepare_stage1(dataset, config)?;
    let trained = (0..config.n_folds)
        .into_par_iter()
        .map(|f| run_fold(dataset, &plans, config, f))
        .collect::<Result<Vec<_>>>()?;
    let mut results = Vec::with_capacity(trained.len());
    let mut first = None;
    for t in trained {
        results.push(t.result);
        first.get_or_insert(t.model);
    }
    let model = first.expect("n_folds is at least 1");
    Ok((ExperimentReport::from_folds(config, results), model))
}

/// Fold `f` of an experiment: resplit with the fold's seed, then train.
pub fn run_fold(dataset: &Dataset, plans: &[Stage1Plan], config: &RunConfig, f: usize) -> Result<TrainedFold> {
    let seed = fold_seed(config.seed, f);
    let split = resplit(&dataset.manifest, config.split, seed)?;
    train_one_fold(dataset, plans, &split, config, f, seed)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: String,
    pub ablation: Ablation,
    pub report: ExperimentReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("table serializes") + "\n"
    }

    /// One row per variant with `mean±std` cells.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("variant,prompt,kavtc,svtc,crossagg,balanced_acc,auc,f1\n");
        for r in &self.rows {
            let a = r.ablation;
            out += &format!("{},{},{},{},{}", r.variant, a.prompt, a.kavtc, a.svtc, a.crossagg);
            for m in METRIC_NAMES {
                out += &format!(",{}", r.report.summary[m]);
            }
            out.push('\n');
        }
        out
    }
}

/// Runs the five cumulative variants with otherwise identical settings.
pub fn run_ablation(dataset: &Dataset, config: &RunConfig) -> Result<AblationTable> {
    let rows = Ablation::cumulative_variants()
        .into_iter()
        .map(|(name, ablation)| {
            let cfg = RunConfig {
                ablation,
                ..config.clone()
            };
            Ok(AblationRow {
                variant: name.to_string(),
                ablation,
                report: run_experiment(dataset, &cfg)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(AblationTable { rows })
}
