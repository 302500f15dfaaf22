//! Training loop, model selection, epoch logging, and the ablation harness.
//!
//! Training runs single-sample updates (batch size one) with Adam and a
//! reduce-on-plateau schedule. Validation and test always use the
//! deterministic hard-selection inference path, so model selection never
//! depends on sampling noise. Every random choice — initialization,
//! shuffling, selection noise, dropout — derives from the run seed, which
//! makes whole training trajectories reproducible bit for bit.

use crate::io::{DatasetIndex, FormatError, SampleRecord, Split};
use crate::metrics::{accuracy, cross_entropy, weighted_f1, MetricError};
use crate::model::{
    infer, train_backward, train_forward, AttentionMode, Aggregation, InferInput, ModelError,
    SelectionMode, ZoomConfig, ZoomModel,
};
use crate::opt::{Adam, AdamConfig, OptError, PlateauScheduler};
use crate::pyramid::FeaturePyramid;
use crate::rng::{Seed, StreamId};
use ndarray::Array1;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("non-finite loss at epoch {epoch} on sample {sample}")]
    NonFiniteLoss { epoch: usize, sample: String },
    #[error("unknown ablation arm {name:?}")]
    UnknownArm { name: String },
    #[error("dataset has no {split} samples")]
    MissingSplit { split: Split },
    #[error("dataset is inconsistent: {detail}")]
    MismatchedDataset { detail: String },
    #[error("bad training setting: {detail}")]
    BadConfig { detail: String },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Opt(#[from] OptError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error("io error at {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("bad epoch log at {path}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

/// An in-memory dataset of encoded pyramids with split membership.
#[derive(Debug, Clone)]
pub struct FeatureDataset {
    pub index: DatasetIndex,
    pub pyramids: Vec<FeaturePyramid>,
}

impl FeatureDataset {
    /// Pairs an index with pyramids, checking they describe the same
    /// samples in the same order.
    pub fn new(
        index: DatasetIndex,
        pyramids: Vec<FeaturePyramid>,
    ) -> Result<Self, TrainError> {
        if index.samples.len() != pyramids.len() {
            return Err(TrainError::MismatchedDataset {
                detail: format!(
                    "index lists {} samples but {} pyramids were supplied",
                    index.samples.len(),
                    pyramids.len()
                ),
            });
        }
        for (record, pyramid) in index.samples.iter().zip(&pyramids) {
            if record.id != pyramid.id() || record.label != pyramid.label() {
                return Err(TrainError::MismatchedDataset {
                    detail: format!(
                        "index entry {} (label {}) paired with pyramid {} (label {})",
                        record.id,
                        record.label,
                        pyramid.id(),
                        pyramid.label()
                    ),
                });
            }
        }
        Ok(Self { index, pyramids })
    }

    pub fn num_classes(&self) -> usize {
        self.index.num_classes
    }

    /// Samples of one split, in index order.
    pub fn split(&self, split: Split) -> Vec<(&SampleRecord, &FeaturePyramid)> {
        self.index
            .samples
            .iter()
            .zip(&self.pyramids)
            .filter(|(r, _)| r.split == split)
            .collect()
    }
}

/// What the plateau scheduler and best-checkpoint tracking monitor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMetric {
    /// Lower validation loss is better.
    ValLoss,
    /// Higher validation weighted F1 is better.
    ValWeightedF1,
}

/// Training protocol. Updates always use batch size one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub plateau_patience: usize,
    pub plateau_decay: f64,
    pub selection: SelectionMetric,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            epochs: 100,
            plateau_patience: 5,
            plateau_decay: 0.8,
            selection: SelectionMetric::ValLoss,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.epochs == 0 {
            return Err(TrainError::BadConfig {
                detail: "epochs must be at least 1".to_string(),
            });
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(TrainError::BadConfig {
                detail: format!("learning rate {}", self.learning_rate),
            });
        }
        if self.plateau_patience == 0 {
            return Err(TrainError::BadConfig {
                detail: "plateau patience must be at least 1".to_string(),
            });
        }
        if !(self.plateau_decay > 0.0 && self.plateau_decay < 1.0) {
            return Err(TrainError::BadConfig {
                detail: format!("plateau decay {} outside (0, 1)", self.plateau_decay),
            });
        }
        Ok(())
    }
}

/// One epoch of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based epoch number.
    pub epoch: usize,
    /// Mean training loss over the epoch's single-sample steps.
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
    pub val_weighted_f1: f64,
    /// Learning rate in force during this epoch's updates.
    pub learning_rate: f64,
    /// Whether this epoch became the new best by the selection metric.
    pub best: bool,
}

/// Outcome of [`fit`]: the best checkpoint by the selection metric, the
/// final-epoch model, and the full epoch log.
#[derive(Debug, Clone)]
pub struct FitResult {
    pub best: ZoomModel<f32>,
    pub final_model: ZoomModel<f32>,
    /// 1-based epoch that produced `best`.
    pub best_epoch: usize,
    pub log: Vec<EpochRecord>,
}

/// Deterministic split evaluation through the hard-selection inference
/// path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub loss: f64,
    pub accuracy: f64,
    pub weighted_f1: f64,
}

/// Evaluates `model` on one split: mean cross-entropy, accuracy, and
/// weighted F1. Samples are independent, so they are scored in parallel;
/// the reduction order is fixed by index order.
pub fn evaluate(
    model: &ZoomModel<f32>,
    data: &FeatureDataset,
    split: Split,
) -> Result<Evaluation, TrainError> {
    let samples = data.split(split);
    if samples.is_empty() {
        return Err(TrainError::MissingSplit { split });
    }
    let scored: Vec<(f64, usize, usize)> = samples
        .par_iter()
        .map(|(record, pyramid)| -> Result<_, TrainError> {
            let inference = infer(&InferInput::Features(pyramid), model)?;
            let logits = Array1::from_vec(inference.logits.clone());
            let (loss, _) = cross_entropy(logits.view(), record.label)?;
            Ok((loss as f64, inference.predicted, record.label))
        })
        .collect::<Result<_, _>>()?;
    let loss = scored.iter().map(|(l, _, _)| l).sum::<f64>() / scored.len() as f64;
    let preds: Vec<usize> = scored.iter().map(|(_, p, _)| *p).collect();
    let labels: Vec<usize> = scored.iter().map(|(_, _, l)| *l).collect();
    Ok(Evaluation {
        loss,
        accuracy: accuracy(&preds, &labels)?,
        weighted_f1: weighted_f1(&preds, &labels, data.num_classes())?,
    })
}

/// Fisher-Yates shuffle driven by the epoch's own stream, so epoch order
/// depends only on (seed, epoch).
fn shuffled_order(count: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..count).collect();
    let mut rng = Seed(seed).stream(StreamId::Shuffle {
        epoch: epoch as u64,
    });
    for i in (1..count).rev() {
        let j = rand::RngExt::random_range(&mut rng, 0..(i + 1) as u64) as usize;
        order.swap(i, j);
    }
    order
}

fn monitored_value(selection: SelectionMetric, eval: &Evaluation) -> f64 {
    match selection {
        SelectionMetric::ValLoss => eval.loss,
        // Negated so "lower is better" holds for both metrics.
        SelectionMetric::ValWeightedF1 => -eval.weighted_f1,
    }
}

/// Trains a freshly initialized model on the train split, evaluating the
/// val split each epoch and tracking the best checkpoint.
pub fn fit(
    model_config: &ZoomConfig,
    data: &FeatureDataset,
    cfg: &TrainConfig,
) -> Result<FitResult, TrainError> {
    cfg.validate()?;
    let train = data.split(Split::Train);
    if train.is_empty() {
        return Err(TrainError::MissingSplit {
            split: Split::Train,
        });
    }

    let mut init_rng = Seed(cfg.seed).stream(StreamId::ModelInit);
    let mut model: ZoomModel<f32> = ZoomModel::init(model_config.clone(), &mut init_rng)?;
    let mut adam = Adam::for_model(
        &model,
        AdamConfig {
            lr: cfg.learning_rate,
            ..AdamConfig::default()
        },
    )?;
    let mut scheduler = PlateauScheduler::new(cfg.plateau_patience, cfg.plateau_decay)?;

    let mut best = model.clone();
    let mut best_value = f64::INFINITY;
    let mut best_epoch = 0;
    let mut log = Vec::with_capacity(cfg.epochs);

    for epoch in 1..=cfg.epochs {
        let order = shuffled_order(train.len(), cfg.seed, epoch);
        let mut step_rng = Seed(cfg.seed).stream(StreamId::StepNoise {
            epoch: epoch as u64,
        });
        let mut loss_sum = 0.0;
        for &i in &order {
            let (record, pyramid) = train[i];
            let grads = {
                let trace = train_forward(pyramid.levels(), &model, true, &mut step_rng)?;
                let (loss, grad_logits) = cross_entropy(trace.logits.view(), record.label)?;
                if !loss.is_finite() {
                    return Err(TrainError::NonFiniteLoss {
                        epoch,
                        sample: record.id.clone(),
                    });
                }
                loss_sum += loss as f64;
                train_backward(&trace, &model, grad_logits.view())
            };
            adam.step(&mut model, &grads)?;
        }

        let val = evaluate(&model, data, Split::Val)?;
        let monitored = monitored_value(cfg.selection, &val);
        let is_best = monitored < best_value;
        if is_best {
            best_value = monitored;
            best = model.clone();
            best_epoch = epoch;
        }
        log.push(EpochRecord {
            epoch,
            train_loss: loss_sum / train.len() as f64,
            val_loss: val.loss,
            val_accuracy: val.accuracy,
            val_weighted_f1: val.weighted_f1,
            learning_rate: adam.learning_rate(),
            best: is_best,
        });
        scheduler.observe_and_apply(monitored, &mut adam);
    }

    Ok(FitResult {
        best,
        final_model: model,
        best_epoch,
        log,
    })
}

/// Writes the epoch log as line-delimited JSON, one record per line.
pub fn write_epoch_log(path: &Path, log: &[EpochRecord]) -> Result<(), TrainError> {
    let mut text = String::new();
    for record in log {
        let line = serde_json::to_string(record).map_err(|source| TrainError::Json {
            path: path.to_path_buf(),
            source,
        })?;
        text.push_str(&line);
        text.push('\n');
    }
    fs::write(path, text).map_err(|source| TrainError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn read_epoch_log(path: &Path) -> Result<Vec<EpochRecord>, TrainError> {
    let text = fs::read_to_string(path).map_err(|source| TrainError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    text.lines()
        .map(|line| {
            serde_json::from_str(line).map_err(|source| TrainError::Json {
                path: path.to_path_buf(),
                source,
            })
        })
        .collect()
}

// ---- ablation harness ----

/// One experimental arm: a named switch on the model configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arm {
    /// Default model: smoothed differentiable selection.
    DiffTopk,
    /// Selection replaced by uniformly random parents.
    RandomK,
    /// Hard arg-top-K selection; no gradient reaches the selection heads.
    NondiffTopk,
    /// One shared attention head per level for pooling and selection.
    SingleGa,
    /// Separate pooling and selection heads (the default).
    Dga,
    /// Sum-pool the per-level representations (the default).
    AggSum,
    /// Concatenate per-level representations.
    AggConcat,
    /// Keep only the highest-magnification representation.
    AggHighest,
}

/// Selection-mode comparison (the patch-selection ablation rows).
pub const SELECTION_ARMS: [Arm; 3] = [Arm::DiffTopk, Arm::RandomK, Arm::NondiffTopk];
/// Attention-architecture comparison.
pub const ATTENTION_ARMS: [Arm; 2] = [Arm::Dga, Arm::SingleGa];
/// Aggregation comparison.
pub const AGGREGATION_ARMS: [Arm; 3] = [Arm::AggSum, Arm::AggConcat, Arm::AggHighest];

impl Arm {
    pub const ALL: [Arm; 8] = [
        Arm::DiffTopk,
        Arm::RandomK,
        Arm::NondiffTopk,
        Arm::SingleGa,
        Arm::Dga,
        Arm::AggSum,
        Arm::AggConcat,
        Arm::AggHighest,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Arm::DiffTopk => "diff_topk",
            Arm::RandomK => "random_k",
            Arm::NondiffTopk => "nondiff_topk",
            Arm::SingleGa => "single_ga",
            Arm::Dga => "dga",
            Arm::AggSum => "agg_sum",
            Arm::AggConcat => "agg_concat",
            Arm::AggHighest => "agg_highest",
        }
    }

    pub fn parse(name: &str) -> Result<Self, TrainError> {
        Self::ALL
            .into_iter()
            .find(|arm| arm.name() == name)
            .ok_or_else(|| TrainError::UnknownArm {
                name: name.to_string(),
            })
    }

    /// Applies this arm's switch to a base configuration.
    pub fn apply(self, base: &ZoomConfig) -> ZoomConfig {
        let mut config = base.clone();
        match self {
            Arm::DiffTopk => config.selection = SelectionMode::DiffTopK,
            Arm::RandomK => config.selection = SelectionMode::RandomK,
            Arm::NondiffTopk => config.selection = SelectionMode::NonDiffTopK,
            Arm::SingleGa => config.attention = AttentionMode::Single,
            Arm::Dga => config.attention = AttentionMode::Dual,
            Arm::AggSum => config.aggregation = Aggregation::Sum,
            Arm::AggConcat => config.aggregation = Aggregation::Concat,
            Arm::AggHighest => config.aggregation = Aggregation::HighestOnly,
        }
        config
    }
}

impl std::fmt::Display for Arm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Test-set outcome of one (arm, seed) run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeedOutcome {
    pub seed: u64,
    pub accuracy: f64,
    pub weighted_f1: f64,
    pub best_epoch: usize,
}

/// One arm's results across seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmReport {
    pub arm: String,
    pub per_seed: Vec<SeedOutcome>,
    pub mean_accuracy: f64,
    pub mean_weighted_f1: f64,
}

impl ArmReport {
    pub fn accuracy_std(&self) -> f64 {
        std_dev(self.per_seed.iter().map(|s| s.accuracy))
    }

    pub fn weighted_f1_std(&self) -> f64 {
        std_dev(self.per_seed.iter().map(|s| s.weighted_f1))
    }
}

fn std_dev(values: impl Iterator<Item = f64>) -> f64 {
    let values: Vec<f64> = values.collect();
    if values.len() < 2 {
        return 0.0;
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>()
        / (values.len() - 1) as f64;
    var.sqrt()
}

/// Trains and test-evaluates every arm under identical seeds and protocol.
/// Each run trains the arm's variant from scratch, picks the best
/// checkpoint on the val split, and scores it on the test split.
pub fn ablate(
    base: &ZoomConfig,
    data: &FeatureDataset,
    cfg: &TrainConfig,
    arms: &[Arm],
    seeds: &[u64],
) -> Result<Vec<ArmReport>, TrainError> {
    if seeds.is_empty() {
        return Err(TrainError::BadConfig {
            detail: "ablation needs at least one seed".to_string(),
        });
    }
    let mut reports = Vec::with_capacity(arms.len());
    for &arm in arms {
        let config = arm.apply(base);
        let mut per_seed = Vec::with_capacity(seeds.len());
        for &seed in seeds {
            let run_cfg = TrainConfig {
                seed,
                ..cfg.clone()
            };
            let result = fit(&config, data, &run_cfg)?;
            let test = evaluate(&result.best, data, Split::Test)?;
            per_seed.push(SeedOutcome {
                seed,
                accuracy: test.accuracy,
                weighted_f1: test.weighted_f1,
                best_epoch: result.best_epoch,
            });
        }
        let n = per_seed.len() as f64;
        reports.push(ArmReport {
            arm: arm.name().to_string(),
            mean_accuracy: per_seed.iter().map(|s| s.accuracy).sum::<f64>() / n,
            mean_weighted_f1: per_seed.iter().map(|s| s.weighted_f1).sum::<f64>() / n,
            per_seed,
        });
    }
    Ok(reports)
}

/// Renders arm reports as an aligned text table.
pub fn format_ablation_table(reports: &[ArmReport]) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "{:<14} {:>10} {:>8} {:>12} {:>8}  per-seed accuracy\n",
        "arm", "accuracy", "std", "weighted_f1", "std"
    ));
    for report in reports {
        let per_seed = report
            .per_seed
            .iter()
            .map(|s| format!("{:.3}", s.accuracy))
            .collect::<Vec<_>>()
            .join(" ");
        out.push_str(&format!(
            "{:<14} {:>10.4} {:>8.4} {:>12.4} {:>8.4}  {per_seed}\n",
            report.arm,
            report.mean_accuracy,
            report.accuracy_std(),
            report.mean_weighted_f1,
            report.weighted_f1_std()
        ));
    }
    out
}
