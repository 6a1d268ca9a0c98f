use std::io::Write;
use std::path::PathBuf;

use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use super::{
    adapt_cotrained_with_eval, adapt_target_with_eval, holdout_split, train_source, RunConfig, RunMetrics,
};
use crate::data::{generate_shift_pair, read_features, FeatureDataset, ShiftSpec};
use crate::error::{Error, Result};
use crate::model::BncModel;

#[derive(Clone, Debug, PartialEq)]
pub enum ShiftData {
    Files {
        source: PathBuf,
        target: PathBuf,
    },
    Synthetic {
        num_classes: usize,
        dim: usize,
        n_per_class: usize,
        spec: ShiftSpec,
        data_seed: u64,
    },
}

/// One source→target task of a benchmark.
#[derive(Clone, Debug, PartialEq)]
pub struct ShiftTask {
    pub name: String,
    pub data: ShiftData,
}

pub fn load_task(task: &ShiftTask) -> Result<(FeatureDataset, FeatureDataset)> {
    let (source, target) = match &task.data {
        ShiftData::Files { source, target } => (read_features(source)?, read_features(target)?),
        ShiftData::Synthetic {
            num_classes,
            dim,
            n_per_class,
            spec,
            data_seed,
        } => generate_shift_pair(*num_classes, *dim, *n_per_class, spec, *data_seed)?,
    };
    if source.dim() != target.dim() || source.num_classes() != target.num_classes() {
        return Err(Error::Validation(format!(
            "source is {}-dim with k={}, target is {}-dim with k={}",
            source.dim(),
            source.num_classes(),
            target.dim(),
            target.num_classes()
        )));
    }
    Ok((source, target))
}

#[derive(Clone, Debug, Serialize)]
pub struct PipelineMetrics {
    pub seed: u64,
    pub source: RunMetrics,
    pub adapt: RunMetrics,
}

/// Fresh model → source training → adaptation, for `cfg.model.seed`. The
/// model's input and output sizes are taken from the source set.
pub fn run_pipeline(source: &FeatureDataset, target: &FeatureDataset, cfg: &RunConfig) -> Result<PipelineMetrics> {
    let mut cfg = cfg.clone();
    cfg.model.input_dim = source.dim();
    cfg.model.num_classes = source.num_classes();
    let mut model = BncModel::build(cfg.model.clone())?;
    let src_metrics = train_source(&mut model, source, &cfg)?;
    let (adapt_set, eval_set) = holdout_split(target, &cfg)?;
    let adapt = if cfg.cotrain {
        adapt_cotrained_with_eval(&mut model, source, &adapt_set, &eval_set, &cfg)?
    } else {
        adapt_target_with_eval(&mut model, &adapt_set, &eval_set, &cfg)?
    };
    Ok(PipelineMetrics {
        seed: cfg.model.seed,
        source: src_metrics,
        adapt,
    })
}

/// Arithmetic mean and sample standard deviation (0 for a single value).
pub fn summarize(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, 0.0);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

#[derive(Clone, Debug, Serialize)]
pub struct ShiftSummary {
    pub shift: String,
    pub seeds: Vec<u64>,
    pub source_acc: Vec<f64>,
    pub initial_target_acc: Vec<f64>,
    pub final_target_acc: Vec<f64>,
    pub mean_target_acc: f64,
    pub std_target_acc: f64,
    pub mean_gain: f64,
    pub dropped_batches: usize,
}

impl ShiftSummary {
    fn from_runs(shift: &str, runs: &[PipelineMetrics]) -> Self {
        let pick = |f: &dyn Fn(&PipelineMetrics) -> Option<f64>| -> Vec<f64> {
            runs.iter().map(|r| f(r).unwrap_or(f64::NAN)).collect()
        };
        let source_acc = pick(&|r| r.source.final_source_acc);
        let initial = pick(&|r| r.adapt.initial_target_acc);
        let final_acc = pick(&|r| r.adapt.final_target_acc);
        let (mean, std) = summarize(&final_acc);
        let gains: Vec<f64> = final_acc.iter().zip(&initial).map(|(a, b)| a - b).collect();
        ShiftSummary {
            shift: shift.to_string(),
            seeds: runs.iter().map(|r| r.seed).collect(),
            source_acc,
            initial_target_acc: initial,
            final_target_acc: final_acc,
            mean_target_acc: mean,
            std_target_acc: std,
            mean_gain: summarize(&gains).0,
            dropped_batches: runs.iter().map(|r| r.source.dropped_batches + r.adapt.dropped_batches).sum(),
        }
    }
}

#[derive(Debug)]
pub struct ShiftResult {
    pub shift: String,
    /// Per-seed metrics and their summary, or the error that stopped the shift.
    pub outcome: std::result::Result<(Vec<PipelineMetrics>, ShiftSummary), String>,
}

#[derive(Debug)]
pub struct BenchmarkReport {
    pub config: RunConfig,
    pub shifts: Vec<ShiftResult>,
    /// Mean of the per-shift mean target accuracies over successful shifts.
    pub grand_average: Option<f64>,
}

impl BenchmarkReport {
    pub fn failures(&self) -> impl Iterator<Item = (&str, &str)> {
        self.shifts.iter().filter_map(|s| match &s.outcome {
            Err(e) => Some((s.shift.as_str(), e.as_str())),
            Ok(_) => None,
        })
    }

    pub fn summaries(&self) -> impl Iterator<Item = &ShiftSummary> {
        self.shifts.iter().filter_map(|s| s.outcome.as_ref().ok().map(|(_, sum)| sum))
    }
}

/// Runs `cfg.num_seeds` pipelines per task with seeds `base, base+1, ...`
/// where `base = cfg.model.seed`. Pipelines run on `jobs` threads; results are
/// collected in task and seed order, so the report does not depend on
/// scheduling. A task whose data fails to load is reported and skipped.
pub fn run_benchmark(tasks: &[ShiftTask], cfg: &RunConfig, jobs: usize) -> Result<BenchmarkReport> {
    cfg.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let loaded: Vec<std::result::Result<(FeatureDataset, FeatureDataset), String>> =
        tasks.iter().map(|t| load_task(t).map_err(|e| e.to_string())).collect();

    let work: Vec<(usize, u64)> = loaded
        .iter()
        .enumerate()
        .filter(|(_, l)| l.is_ok())
        .flat_map(|(i, _)| (0..cfg.num_seeds as u64).map(move |s| (i, s)))
        .collect();
    let runs: Vec<Result<PipelineMetrics>> = pool.install(|| {
        work.par_iter()
            .map(|&(i, s)| {
                let (src, tgt) = loaded[i].as_ref().expect("filtered");
                run_pipeline(src, tgt, &cfg.with_seed(cfg.model.seed + s))
            })
            .collect()
    });

    let mut runs = runs.into_iter();
    let mut shifts = Vec::with_capacity(tasks.len());
    for (task, load) in tasks.iter().zip(&loaded) {
        let outcome = match load {
            Err(e) => Err(e.clone()),
            Ok(_) => {
                let per_seed: Result<Vec<PipelineMetrics>> = runs.by_ref().take(cfg.num_seeds).collect();
                per_seed
                    .map(|r| {
                        let summary = ShiftSummary::from_runs(&task.name, &r);
                        (r, summary)
                    })
                    .map_err(|e| e.to_string())
            }
        };
        shifts.push(ShiftResult {
            shift: task.name.clone(),
            outcome,
        });
    }
    let means: Vec<f64> = shifts
        .iter()
        .filter_map(|s| s.outcome.as_ref().ok().map(|(_, sum)| sum.mean_target_acc))
        .collect();
    let grand_average = (!means.is_empty()).then(|| summarize(&means).0);
    Ok(BenchmarkReport {
        config: cfg.clone(),
        shifts,
        grand_average,
    })
}

fn tagged(kind: &str, value: impl Serialize) -> Result<Value> {
    let mut v = serde_json::to_value(value).map_err(|e| Error::Validation(e.to_string()))?;
    match &mut v {
        Value::Object(map) => {
            map.insert("type".into(), Value::String(kind.into()));
        }
        _ => unreachable!("records serialize as objects"),
    }
    Ok(v)
}

/// Writes the report as JSON lines: a `config` record, one `epoch` record per
/// (shift, seed, phase, epoch), one `summary` or `error` record per shift and
/// a closing `grand_average` record.
pub fn write_jsonl(report: &BenchmarkReport, mut out: impl Write) -> Result<()> {
    let mut emit = |v: Value| -> Result<()> {
        writeln!(out, "{v}")?;
        Ok(())
    };
    emit(tagged("config", &report.config)?)?;
    for shift in &report.shifts {
        match &shift.outcome {
            Ok((runs, summary)) => {
                for run in runs {
                    for rec in run.source.epochs.iter().chain(&run.adapt.epochs) {
                        let mut v = tagged("epoch", rec)?;
                        v["shift"] = json!(shift.shift);
                        v["seed"] = json!(run.seed);
                        emit(v)?;
                    }
                }
                emit(tagged("summary", summary)?)?;
            }
            Err(e) => emit(json!({"type": "error", "shift": shift.shift, "message": e}))?,
        }
    }
    emit(json!({
        "type": "grand_average",
        "shifts": report.summaries().count(),
        "mean_target_acc": report.grand_average,
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use crate::training::OptimizerConfig;

    fn synthetic(name: &str, seed: u64) -> ShiftTask {
        ShiftTask {
            name: name.into(),
            data: ShiftData::Synthetic {
                num_classes: 3,
                dim: 6,
                n_per_class: 20,
                spec: ShiftSpec::moderate(),
                data_seed: seed,
            },
        }
    }

    fn cfg() -> RunConfig {
        RunConfig {
            epochs_source: 2,
            epochs_adapt: 2,
            batch_size: 16,
            num_seeds: 3,
            optimizer: OptimizerConfig {
                learning_rate: 1e-2,
                ..OptimizerConfig::default()
            },
            model: ModelConfig {
                hidden_dim: 16,
                seed: 100,
                ..ModelConfig::default()
            },
            ..RunConfig::default()
        }
    }

    #[test]
    fn summary_stats() {
        assert_eq!(summarize(&[0.5]), (0.5, 0.0));
        let (m, s) = summarize(&[1.0, 2.0, 4.0]);
        assert!((m - 7.0 / 3.0).abs() < 1e-15);
        assert!((s - (7.0f64 / 3.0).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn mean_is_mean_of_reported_seeds() {
        let report = run_benchmark(&[synthetic("a", 1)], &cfg(), 2).unwrap();
        let s = report.summaries().next().unwrap();
        assert_eq!(s.seeds, vec![100, 101, 102]);
        let expected = s.final_target_acc.iter().sum::<f64>() / 3.0;
        assert_eq!(s.mean_target_acc, expected);
        assert_eq!(report.grand_average, Some(expected));
    }

    #[test]
    fn single_seed_has_zero_std() {
        let cfg = RunConfig { num_seeds: 1, ..cfg() };
        let report = run_benchmark(&[synthetic("a", 1)], &cfg, 1).unwrap();
        assert_eq!(report.summaries().next().unwrap().std_target_acc, 0.0);
    }

    #[test]
    fn load_failure_does_not_stop_other_shifts() {
        let missing = ShiftTask {
            name: "missing".into(),
            data: ShiftData::Files {
                source: "/nonexistent/a.bncf".into(),
                target: "/nonexistent/b.bncf".into(),
            },
        };
        let report = run_benchmark(&[missing, synthetic("ok", 2)], &cfg(), 2).unwrap();
        assert_eq!(report.failures().count(), 1);
        assert_eq!(report.summaries().count(), 1);
        let mut buf = Vec::new();
        write_jsonl(&report, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.lines().any(|l| l.contains("\"type\":\"error\"")));
    }

    #[test]
    fn output_is_independent_of_thread_count() {
        let tasks = [synthetic("a", 1), synthetic("b", 2)];
        let render = |jobs| {
            let mut buf = Vec::new();
            write_jsonl(&run_benchmark(&tasks, &cfg(), jobs).unwrap(), &mut buf).unwrap();
            buf
        };
        assert_eq!(render(1), render(4));
    }

    #[test]
    fn jsonl_records_are_typed() {
        let report = run_benchmark(&[synthetic("a", 1)], &cfg(), 1).unwrap();
        let mut buf = Vec::new();
        write_jsonl(&report, &mut buf).unwrap();
        let lines: Vec<Value> = String::from_utf8(buf)
            .unwrap()
            .lines()
            .map(|l| serde_json::from_str(l).unwrap())
            .collect();
        assert_eq!(lines[0]["type"], "config");
        assert_eq!(lines[0]["learning_rate"], 1e-2);
        // 3 seeds × (2 source + 2 adapt epochs)
        assert_eq!(lines.iter().filter(|v| v["type"] == "epoch").count(), 12);
        assert_eq!(lines.last().unwrap()["type"], "grand_average");
    }
}
