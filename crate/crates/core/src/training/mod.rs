//! Source training, source-free target adaptation, co-trained adaptation
//! and multi-seed benchmarking.

mod benchmark;
mod optimizer;

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::analysis::{accuracy, EVAL_BATCH};
use crate::data::{BatchIterator, FeatureDataset};
use crate::error::{Error, Result};
use crate::layers::{softmax, EvalStats, Mode};
use crate::linalg::SeededRng;
use crate::losses::{cross_entropy, ce_grad_wrt_presoftmax, entropy, entropy_grad_wrt_presoftmax};
use crate::model::{BncModel, ModelConfig};

pub use benchmark::{
    load_task, run_benchmark, run_pipeline, summarize, write_jsonl, BenchmarkReport, PipelineMetrics,
    ShiftData, ShiftResult, ShiftSummary, ShiftTask,
};
pub use optimizer::{OptimizerConfig, OptimizerKind, OptimizerState};

const STREAM_SOURCE_SHUFFLE: u64 = 3;
const STREAM_TARGET_SHUFFLE: u64 = 4;
const STREAM_HOLDOUT: u64 = 5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub epochs_source: usize,
    pub epochs_adapt: usize,
    pub batch_size: usize,
    pub num_seeds: usize,
    #[serde(flatten)]
    pub optimizer: OptimizerConfig,
    #[serde(flatten)]
    pub model: ModelConfig,
    /// Normalization statistics used by eval-mode forwards.
    pub eval_stats: EvalStats,
    /// Adapt with alternating labeled-source and unlabeled-target steps.
    pub cotrain: bool,
    /// Fraction of the target set held out from adaptation and used only for
    /// accuracy. Zero adapts and evaluates on the whole target set.
    pub holdout_fraction: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            epochs_source: 5,
            epochs_adapt: 5,
            batch_size: 256,
            num_seeds: 3,
            optimizer: OptimizerConfig::default(),
            model: ModelConfig::default(),
            eval_stats: EvalStats::Running,
            cotrain: false,
            holdout_fraction: 0.0,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::Config(format!(
                "batch_size must be >= 2 for train-mode batch norm, got {}",
                self.batch_size
            )));
        }
        if self.num_seeds == 0 {
            return Err(Error::Config("num_seeds must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.holdout_fraction) {
            return Err(Error::Config(format!(
                "holdout_fraction must be in [0, 1), got {}",
                self.holdout_fraction
            )));
        }
        self.optimizer.validate()?;
        self.model.validate()
    }

    /// Same config with a different model seed.
    pub fn with_seed(&self, seed: u64) -> Self {
        let mut cfg = self.clone();
        cfg.model.seed = seed;
        cfg
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Source,
    Adapt,
    Cotrain,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpochRecord {
    pub phase: Phase,
    /// 1-based.
    pub epoch: usize,
    /// Mean cross-entropy (source phase) or mean entropy (adaptation) over the
    /// epoch's minibatches.
    pub mean_loss: f64,
    /// Mean source cross-entropy of the co-trained phase.
    pub mean_source_loss: Option<f64>,
    pub source_acc: Option<f64>,
    pub target_acc: Option<f64>,
    pub batches: usize,
    #[serde(skip)]
    pub batch_losses: Vec<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct RunMetrics {
    pub epochs: Vec<EpochRecord>,
    pub initial_target_acc: Option<f64>,
    pub final_source_acc: Option<f64>,
    pub final_target_acc: Option<f64>,
    /// Mean target entropy under batch statistics, before and after.
    pub initial_target_entropy: Option<f64>,
    pub final_target_entropy: Option<f64>,
    pub dropped_batches: usize,
    /// Not serialized, so that metrics files are reproducible byte for byte.
    #[serde(skip)]
    pub wall_clock: Duration,
}

fn check_compatible(model: &BncModel, ds: &FeatureDataset) -> Result<()> {
    let cfg = model.config();
    if ds.dim() != cfg.input_dim || ds.num_classes() != cfg.num_classes {
        return Err(Error::Validation(format!(
            "dataset '{}' is {}-dim with k={}, model expects {}-dim with k={}",
            ds.domain(),
            ds.dim(),
            ds.num_classes(),
            cfg.input_dim,
            cfg.num_classes
        )));
    }
    if ds.len() < 2 {
        return Err(Error::DegenerateBatch(ds.len()));
    }
    Ok(())
}

fn finite(loss: f64, what: &str) -> Result<f64> {
    if loss.is_finite() {
        Ok(loss)
    } else {
        Err(Error::Domain(format!("{what} became non-finite; lower the learning rate")))
    }
}

fn mean(xs: &[f64]) -> f64 {
    crate::analysis::mean(xs)
}

/// One cross-entropy descent step on the given rows.
fn source_step(
    model: &mut BncModel,
    opt: &mut OptimizerState,
    source: &FeatureDataset,
    idx: &[usize],
) -> Result<f64> {
    let batch = source.batch(idx)?;
    let labels = batch
        .labels
        .ok_or_else(|| Error::Usage("source data must be labeled".into()))?;
    let probs = model.forward(&batch.features, None)?;
    let loss = finite(cross_entropy(&probs, &labels)?, "source loss")?;
    model.backward(&ce_grad_wrt_presoftmax(&probs, &labels)?)?;
    opt.step(&mut model.params())?;
    Ok(loss)
}

/// One entropy descent step on the given rows. Labels are never read.
fn target_step(
    model: &mut BncModel,
    opt: &mut OptimizerState,
    target: &FeatureDataset,
    idx: &[usize],
) -> Result<f64> {
    let x = target.features().select_rows(idx);
    let probs = model.forward(&x, None)?;
    let loss = finite(entropy(&probs), "target entropy")?;
    model.backward(&entropy_grad_wrt_presoftmax(&probs))?;
    opt.step(&mut model.params())?;
    Ok(loss)
}

/// Mean eval-mode prediction entropy over the whole set.
///
/// Adaptation metrics report this with [`EvalStats::Batch`]: the entropy of
/// the dropout-free objective, independent of which domain the running
/// statistics were last estimated on.
pub fn dataset_entropy(model: &mut BncModel, ds: &FeatureDataset, eval_stats: EvalStats) -> Result<f64> {
    model.set_eval_stats(eval_stats);
    let logits = model.eval_logits(ds.features(), EVAL_BATCH);
    model.set_eval_stats(EvalStats::Running);
    Ok(entropy(&softmax(&logits?)))
}

fn labeled_accuracy(model: &mut BncModel, ds: &FeatureDataset, stats: EvalStats) -> Result<Option<f64>> {
    if ds.labels().is_some() {
        Ok(Some(accuracy(model, ds, stats)?))
    } else {
        Ok(None)
    }
}

/// Supervised cross-entropy training on `source` for `cfg.epochs_source`
/// epochs. Records training loss and accuracy per epoch.
pub fn train_source(model: &mut BncModel, source: &FeatureDataset, cfg: &RunConfig) -> Result<RunMetrics> {
    cfg.validate()?;
    source.require_labels()?;
    check_compatible(model, source)?;
    let start = Instant::now();
    let mut metrics = RunMetrics::default();
    let mut opt = OptimizerState::new(cfg.optimizer.clone())?;
    let rng = SeededRng::derived(cfg.model.seed, STREAM_SOURCE_SHUFFLE);
    let mut batches = BatchIterator::new(source.len(), cfg.batch_size, rng, true)?;
    model.zero_grad();

    for epoch in 1..=cfg.epochs_source {
        model.set_mode(Mode::Train);
        let mut losses = Vec::new();
        for idx in batches.next_epoch() {
            losses.push(source_step(model, &mut opt, source, &idx)?);
        }
        let acc = accuracy(model, source, cfg.eval_stats)?;
        metrics.epochs.push(EpochRecord {
            phase: Phase::Source,
            epoch,
            mean_loss: mean(&losses),
            mean_source_loss: None,
            source_acc: Some(acc),
            target_acc: None,
            batches: losses.len(),
            batch_losses: losses,
        });
        metrics.final_source_acc = Some(acc);
    }
    model.set_mode(Mode::Eval);
    metrics.dropped_batches = batches.dropped();
    metrics.wall_clock = start.elapsed();
    Ok(metrics)
}

/// Source-free adaptation: entropy minimization on the unlabeled `target`
/// set. Target labels, when present, are only used to report accuracy.
pub fn adapt_target(model: &mut BncModel, target: &FeatureDataset, cfg: &RunConfig) -> Result<RunMetrics> {
    adapt_target_with_eval(model, target, target, cfg)
}

/// [`adapt_target`] on `target`, reporting accuracy and entropy on `eval`.
pub fn adapt_target_with_eval(
    model: &mut BncModel,
    target: &FeatureDataset,
    eval: &FeatureDataset,
    cfg: &RunConfig,
) -> Result<RunMetrics> {
    cfg.validate()?;
    check_compatible(model, target)?;
    check_compatible(model, eval)?;
    let start = Instant::now();
    let unlabeled = target.without_labels();
    let mut metrics = RunMetrics {
        initial_target_acc: labeled_accuracy(model, eval, cfg.eval_stats)?,
        initial_target_entropy: Some(dataset_entropy(model, eval, EvalStats::Batch)?),
        ..RunMetrics::default()
    };
    let mut opt = OptimizerState::new(cfg.optimizer.clone())?;
    let rng = SeededRng::derived(cfg.model.seed, STREAM_TARGET_SHUFFLE);
    let mut batches = BatchIterator::new(unlabeled.len(), cfg.batch_size, rng, true)?;
    model.zero_grad();

    for epoch in 1..=cfg.epochs_adapt {
        model.set_mode(Mode::Train);
        let mut losses = Vec::new();
        for idx in batches.next_epoch() {
            losses.push(target_step(model, &mut opt, &unlabeled, &idx)?);
        }
        let acc = labeled_accuracy(model, eval, cfg.eval_stats)?;
        metrics.epochs.push(EpochRecord {
            phase: Phase::Adapt,
            epoch,
            mean_loss: mean(&losses),
            mean_source_loss: None,
            source_acc: None,
            target_acc: acc,
            batches: losses.len(),
            batch_losses: losses,
        });
    }
    model.set_mode(Mode::Eval);
    metrics.final_target_acc = labeled_accuracy(model, eval, cfg.eval_stats)?;
    metrics.final_target_entropy = Some(dataset_entropy(model, eval, EvalStats::Batch)?);
    metrics.dropped_batches = batches.dropped();
    metrics.wall_clock = start.elapsed();
    Ok(metrics)
}

/// Adaptation that alternates one labeled source step with one unlabeled
/// target step. An epoch lasts as long as the longer of the two streams; the
/// shorter one is reshuffled and restarted when exhausted.
pub fn adapt_cotrained(
    model: &mut BncModel,
    source: &FeatureDataset,
    target: &FeatureDataset,
    cfg: &RunConfig,
) -> Result<RunMetrics> {
    adapt_cotrained_with_eval(model, source, target, target, cfg)
}

pub fn adapt_cotrained_with_eval(
    model: &mut BncModel,
    source: &FeatureDataset,
    target: &FeatureDataset,
    eval: &FeatureDataset,
    cfg: &RunConfig,
) -> Result<RunMetrics> {
    cfg.validate()?;
    source.require_labels()?;
    check_compatible(model, source)?;
    check_compatible(model, target)?;
    check_compatible(model, eval)?;
    let start = Instant::now();
    let unlabeled = target.without_labels();
    let mut metrics = RunMetrics {
        initial_target_acc: labeled_accuracy(model, eval, cfg.eval_stats)?,
        initial_target_entropy: Some(dataset_entropy(model, eval, EvalStats::Batch)?),
        ..RunMetrics::default()
    };
    let mut opt = OptimizerState::new(cfg.optimizer.clone())?;
    let mut src_it = BatchIterator::new(
        source.len(),
        cfg.batch_size,
        SeededRng::derived(cfg.model.seed, STREAM_SOURCE_SHUFFLE),
        true,
    )?;
    let mut tgt_it = BatchIterator::new(
        unlabeled.len(),
        cfg.batch_size,
        SeededRng::derived(cfg.model.seed, STREAM_TARGET_SHUFFLE),
        true,
    )?;
    model.zero_grad();

    for epoch in 1..=cfg.epochs_adapt {
        model.set_mode(Mode::Train);
        // leftovers of a cycled stream are discarded at the epoch boundary
        let mut src_queue = src_it.next_epoch().into_iter();
        let mut tgt_queue = tgt_it.next_epoch().into_iter();
        let steps = src_queue.len().max(tgt_queue.len());
        let (mut src_losses, mut tgt_losses) = (Vec::new(), Vec::new());
        for _ in 0..steps {
            let s = match src_queue.next() {
                Some(b) => b,
                None => {
                    src_queue = src_it.next_epoch().into_iter();
                    src_queue.next().expect("non-empty epoch")
                }
            };
            src_losses.push(source_step(model, &mut opt, source, &s)?);
            let t = match tgt_queue.next() {
                Some(b) => b,
                None => {
                    tgt_queue = tgt_it.next_epoch().into_iter();
                    tgt_queue.next().expect("non-empty epoch")
                }
            };
            tgt_losses.push(target_step(model, &mut opt, &unlabeled, &t)?);
        }
        let source_acc = Some(accuracy(model, source, cfg.eval_stats)?);
        let target_acc = labeled_accuracy(model, eval, cfg.eval_stats)?;
        metrics.epochs.push(EpochRecord {
            phase: Phase::Cotrain,
            epoch,
            mean_loss: mean(&tgt_losses),
            mean_source_loss: Some(mean(&src_losses)),
            source_acc,
            target_acc,
            batches: steps,
            batch_losses: tgt_losses,
        });
        metrics.final_source_acc = source_acc;
    }
    model.set_mode(Mode::Eval);
    metrics.final_target_acc = labeled_accuracy(model, eval, cfg.eval_stats)?;
    metrics.final_target_entropy = Some(dataset_entropy(model, eval, EvalStats::Batch)?);
    metrics.dropped_batches = src_it.dropped() + tgt_it.dropped();
    metrics.wall_clock = start.elapsed();
    Ok(metrics)
}

/// Splits `target` into (adaptation set, evaluation set) per
/// `cfg.holdout_fraction`; with no holdout both are the full set.
pub fn holdout_split(target: &FeatureDataset, cfg: &RunConfig) -> Result<(FeatureDataset, FeatureDataset)> {
    if cfg.holdout_fraction == 0.0 {
        return Ok((target.clone(), target.clone()));
    }
    let seed = SeededRng::derived(cfg.model.seed, STREAM_HOLDOUT).next_u64();
    target.split(cfg.holdout_fraction, seed)
}
