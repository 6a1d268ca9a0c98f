//! The `bnc` command line.

mod manifest;

use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{ArgAction, Args, Parser, Subcommand};
use serde_json::json;

use crate::analysis::{
    accuracy, channel_histograms, project_2d, tapped_activations, weight_sparsity, write_histogram_csv,
    write_matrix_csv, write_projection_csv, write_sparsity_csv, Histogram, LayerTap, ProjectionMethod,
    DEFAULT_BINS, DEFAULT_SPARSITY_TAU,
};
use crate::data::{generate_shift_pair, read_csv, read_features, write_features, FeatureDataset, ShiftSpec};
use crate::error::{Error, Result};
use crate::gradcheck;
use crate::layers::{EvalStats, InitScheme};
use crate::model::{BncModel, ModelConfig};
use crate::training::{
    adapt_cotrained, adapt_target, dataset_entropy, run_benchmark, train_source, write_jsonl, OptimizerConfig,
    OptimizerKind, RunConfig, RunMetrics, ShiftData, ShiftTask,
};

pub use manifest::{load_manifest, parse_manifest};

#[derive(Debug, Parser)]
#[command(
    name = "bnc",
    version,
    about = "Batch-normalization classifier head for source-free domain adaptation"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic source/target pair as BNCF files.
    #[command(args_override_self = true)]
    GenData(GenDataArgs),
    /// Train a fresh head on labeled source features and save a checkpoint.
    #[command(args_override_self = true)]
    TrainSource(TrainSourceArgs),
    /// Adapt a checkpoint to unlabeled target features (source-free unless
    /// --cotrain is given).
    #[command(args_override_self = true)]
    Adapt(AdaptArgs),
    /// Report accuracy (or prediction statistics for unlabeled data).
    #[command(args_override_self = true)]
    Eval(EvalArgs),
    /// Export activation histograms, weight sparsity and a 2D projection.
    #[command(args_override_self = true)]
    Analyze(AnalyzeArgs),
    /// Check every backward pass against finite differences.
    #[command(args_override_self = true)]
    GradCheck(GradCheckArgs),
    /// Run source training and adaptation over a list of shifts and seeds.
    #[command(args_override_self = true)]
    Benchmark(BenchmarkArgs),
}

/// Training, optimizer and architecture settings shared by the training
/// subcommands.
#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    /// Read `key=value` lines (flag names with `-` or `_`); flags given on the
    /// command line take precedence.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,

    #[arg(long, default_value_t = RunConfig::default().epochs_source)]
    pub epochs_source: usize,
    #[arg(long, default_value_t = RunConfig::default().epochs_adapt)]
    pub epochs_adapt: usize,
    #[arg(long, default_value_t = RunConfig::default().batch_size)]
    pub batch_size: usize,
    /// Seeds per shift in `benchmark` (seed, seed+1, ...).
    #[arg(long, default_value_t = RunConfig::default().num_seeds)]
    pub num_seeds: usize,
    #[arg(long, value_enum, default_value_t = OptimizerKind::Sgd)]
    pub optimizer: OptimizerKind,
    #[arg(long, default_value_t = OptimizerConfig::default().learning_rate)]
    pub learning_rate: f64,
    /// SGD momentum.
    #[arg(long, default_value_t = OptimizerConfig::default().momentum)]
    pub momentum: f64,
    #[arg(long, default_value_t = OptimizerConfig::default().beta1)]
    pub beta1: f64,
    #[arg(long, default_value_t = OptimizerConfig::default().beta2)]
    pub beta2: f64,
    #[arg(long, default_value_t = OptimizerConfig::default().adam_eps)]
    pub adam_eps: f64,
    /// L2 penalty on FC weight matrices.
    #[arg(long, default_value_t = OptimizerConfig::default().weight_decay)]
    pub weight_decay: f64,

    /// Feature dimension [default: taken from the data]
    #[arg(long)]
    pub input_dim: Option<usize>,
    #[arg(long, default_value_t = ModelConfig::default().hidden_dim)]
    pub hidden_dim: usize,
    /// Number of classes [default: taken from the data]
    #[arg(long)]
    pub num_classes: Option<usize>,
    /// LeakyReLU negative slope.
    #[arg(long, default_value_t = ModelConfig::default().leak)]
    pub leak: f64,
    #[arg(long, default_value_t = ModelConfig::default().dropout_p)]
    pub dropout_p: f64,
    /// Batch norm between FC_2 and the softmax (`false` gives the ablated head).
    #[arg(long, default_value_t = true, action = ArgAction::Set, num_args = 0..=1, default_missing_value = "true")]
    pub include_bn2: bool,
    #[arg(long, default_value_t = ModelConfig::default().bn_eps)]
    pub bn_eps: f64,
    #[arg(long, default_value_t = ModelConfig::default().bn_momentum)]
    pub bn_momentum: f64,
    #[arg(long, value_enum, default_value_t = InitScheme::He)]
    pub init_scheme: InitScheme,
    #[arg(long, default_value_t = ModelConfig::default().seed)]
    pub seed: u64,

    /// Normalization statistics for evaluation forwards.
    #[arg(long, value_enum, default_value_t = EvalStats::Running)]
    pub eval_stats: EvalStats,
    /// Alternate labeled source steps with target entropy steps.
    #[arg(long, default_value_t = false, action = ArgAction::Set, num_args = 0..=1, default_missing_value = "true")]
    pub cotrain: bool,
    /// Fraction of the target held out from adaptation for evaluation.
    #[arg(long, default_value_t = 0.0)]
    pub holdout_fraction: f64,
}

impl RunArgs {
    /// The run configuration, with unspecified input and class counts taken
    /// from `data` (or the model defaults when there is none).
    pub fn to_config(&self, data: Option<&FeatureDataset>) -> RunConfig {
        let model_default = ModelConfig::default();
        RunConfig {
            epochs_source: self.epochs_source,
            epochs_adapt: self.epochs_adapt,
            batch_size: self.batch_size,
            num_seeds: self.num_seeds,
            optimizer: OptimizerConfig {
                optimizer: self.optimizer,
                learning_rate: self.learning_rate,
                momentum: self.momentum,
                beta1: self.beta1,
                beta2: self.beta2,
                adam_eps: self.adam_eps,
                weight_decay: self.weight_decay,
            },
            model: ModelConfig {
                input_dim: self
                    .input_dim
                    .or(data.map(FeatureDataset::dim))
                    .unwrap_or(model_default.input_dim),
                hidden_dim: self.hidden_dim,
                num_classes: self
                    .num_classes
                    .or(data.map(FeatureDataset::num_classes))
                    .unwrap_or(model_default.num_classes),
                leak: self.leak,
                dropout_p: self.dropout_p,
                include_bn2: self.include_bn2,
                bn_eps: self.bn_eps,
                bn_momentum: self.bn_momentum,
                init_scheme: self.init_scheme,
                seed: self.seed,
            },
            eval_stats: self.eval_stats,
            cotrain: self.cotrain,
            holdout_fraction: self.holdout_fraction,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct GenDataArgs {
    #[arg(long, value_name = "DIR")]
    pub out_dir: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub num_classes: usize,
    #[arg(long, default_value_t = 32)]
    pub dim: usize,
    #[arg(long, default_value_t = 200)]
    pub n_per_class: usize,
    #[arg(long, default_value_t = ShiftSpec::moderate().rotation_angle)]
    pub rotation_angle: f64,
    #[arg(long, default_value_t = ShiftSpec::moderate().scale)]
    pub scale: f64,
    #[arg(long, default_value_t = ShiftSpec::moderate().translation_sigma)]
    pub translation_sigma: f64,
    #[arg(long, default_value_t = ShiftSpec::moderate().noise_sigma_multiplier)]
    pub noise_sigma_multiplier: f64,
    /// Interpolates the shift: 0 is no shift, 1 the values above.
    #[arg(long, default_value_t = 1.0)]
    pub severity: f64,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
}

#[derive(Debug, Clone, Args)]
pub struct TrainSourceArgs {
    /// Labeled source features (.bncf or .csv).
    #[arg(long)]
    pub source: PathBuf,
    /// Checkpoint to write.
    #[arg(long, default_value = "model.bncm")]
    pub out: PathBuf,
    /// JSON-lines metrics file.
    #[arg(long)]
    pub metrics: Option<PathBuf>,
    #[command(flatten)]
    pub run: RunArgs,
}

#[derive(Debug, Clone, Args)]
pub struct AdaptArgs {
    /// Target features; labels, if present, are used only for reporting.
    #[arg(long)]
    pub target: PathBuf,
    /// Source-trained checkpoint.
    #[arg(long)]
    pub model: PathBuf,
    /// Labeled source features, required with --cotrain.
    #[arg(long)]
    pub source: Option<PathBuf>,
    #[arg(long, default_value = "adapted.bncm")]
    pub out: PathBuf,
    #[arg(long)]
    pub metrics: Option<PathBuf>,
    #[command(flatten)]
    pub run: RunArgs,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, value_enum, default_value_t = EvalStats::Running)]
    pub eval_stats: EvalStats,
    /// Write one predicted class per line.
    #[arg(long)]
    pub predictions: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct AnalyzeArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, value_name = "DIR")]
    pub out_dir: PathBuf,
    #[arg(long, default_value_t = DEFAULT_BINS)]
    pub bins: usize,
    /// |w| below this counts as near zero.
    #[arg(long, default_value_t = DEFAULT_SPARSITY_TAU)]
    pub tau: f64,
    #[arg(long, value_enum, default_value_t = ProjectionMethod::Pca)]
    pub projection: ProjectionMethod,
    #[arg(long, value_enum, default_value_t = EvalStats::Running)]
    pub eval_stats: EvalStats,
}

#[derive(Debug, Clone, Args)]
pub struct GradCheckArgs {
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// Random cases per component.
    #[arg(long, default_value_t = gradcheck::DEFAULT_CASES)]
    pub cases: usize,
}

#[derive(Debug, Clone, Args)]
pub struct BenchmarkArgs {
    /// Shift list: one `source -> target [name]` per line.
    #[arg(long, required_unless_present = "synthetic", conflicts_with = "synthetic")]
    pub manifest: Option<PathBuf>,
    /// Run the built-in synthetic shift (10 classes, 32 dims, 200 rows per
    /// class, moderate shift, data drawn from --seed).
    #[arg(long)]
    pub synthetic: bool,
    /// JSON-lines metrics file.
    #[arg(long)]
    pub metrics: Option<PathBuf>,
    /// Worker threads for per-seed pipelines.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    #[command(flatten)]
    pub run: RunArgs,
}

/// Runs the command line and returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let argv = match expand_config(argv) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e}");
            return e.exit_code();
        }
    };
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// Replaces `--config FILE` with the flags it lists, placed right after the
/// subcommand so that explicit flags, which come later, override them.
pub fn expand_config(argv: Vec<OsString>) -> Result<Vec<OsString>> {
    let pos = argv.iter().position(|a| a == "--config" || a.to_string_lossy().starts_with("--config="));
    let Some(pos) = pos else {
        return Ok(argv);
    };
    let (path, consumed) = match argv[pos].to_string_lossy().strip_prefix("--config=") {
        Some(p) => (PathBuf::from(p), 1),
        None => match argv.get(pos + 1) {
            Some(p) => (PathBuf::from(p), 2),
            None => return Err(Error::Usage("--config needs a file argument".into())),
        },
    };
    let text = fs::read_to_string(&path)
        .map_err(|e| Error::Usage(format!("cannot read config file {}: {e}", path.display())))?;
    let mut flags = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
            path: path.clone(),
            line: i + 1,
            msg: format!("expected key=value, got '{line}'"),
        })?;
        let key = key.trim().replace('_', "-");
        if key == "config" {
            return Err(Error::Parse {
                path: path.clone(),
                line: i + 1,
                msg: "config files cannot include other config files".into(),
            });
        }
        flags.push(OsString::from(format!("--{key}")));
        flags.push(OsString::from(value.trim()));
    }
    let mut out = argv;
    out.drain(pos..pos + consumed);
    // program name, then the subcommand
    let insert_at = out.len().min(2);
    out.splice(insert_at..insert_at, flags);
    Ok(out)
}

/// Loads `.csv` files with the CSV importer and anything else as BNCF.
pub fn load_dataset(path: &Path) -> Result<FeatureDataset> {
    match path.extension().and_then(|e| e.to_str()) {
        Some(ext) if ext.eq_ignore_ascii_case("csv") => read_csv(path, None),
        _ => read_features(path),
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::GenData(a) => gen_data(&a),
        Command::TrainSource(a) => cmd_train_source(&a),
        Command::Adapt(a) => cmd_adapt(&a),
        Command::Eval(a) => cmd_eval(&a),
        Command::Analyze(a) => cmd_analyze(&a),
        Command::GradCheck(a) => cmd_grad_check(&a),
        Command::Benchmark(a) => cmd_benchmark(&a),
    }
}

fn gen_data(a: &GenDataArgs) -> Result<()> {
    let spec = ShiftSpec {
        rotation_angle: a.rotation_angle,
        scale: a.scale,
        translation_sigma: a.translation_sigma,
        noise_sigma_multiplier: a.noise_sigma_multiplier,
    }
    .at_severity(a.severity);
    let (source, target) = generate_shift_pair(a.num_classes, a.dim, a.n_per_class, &spec, a.seed)?;
    fs::create_dir_all(&a.out_dir)?;
    write_features(a.out_dir.join("source.bncf"), &source)?;
    write_features(a.out_dir.join("target.bncf"), &target)?;
    println!(
        "wrote {} and {} ({} rows each, D={}, k={})",
        a.out_dir.join("source.bncf").display(),
        a.out_dir.join("target.bncf").display(),
        source.len(),
        source.dim(),
        source.num_classes()
    );
    Ok(())
}

fn write_run_jsonl(path: &Path, cfg: &RunConfig, metrics: &RunMetrics) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    let mut config = serde_json::to_value(cfg).expect("config serializes");
    config["type"] = json!("config");
    writeln!(out, "{config}")?;
    for rec in &metrics.epochs {
        let mut v = serde_json::to_value(rec).expect("record serializes");
        v["type"] = json!("epoch");
        writeln!(out, "{v}")?;
    }
    let mut result = serde_json::to_value(metrics).expect("metrics serialize");
    if let Some(obj) = result.as_object_mut() {
        obj.remove("epochs");
    }
    result["type"] = json!("result");
    writeln!(out, "{result}")?;
    out.flush()?;
    Ok(())
}

fn fmt_acc(acc: Option<f64>) -> String {
    acc.map_or_else(|| "n/a".to_string(), |a| format!("{:.4}", a))
}

fn cmd_train_source(a: &TrainSourceArgs) -> Result<()> {
    a.run.to_config(None).validate()?;
    let source = load_dataset(&a.source)?;
    let cfg = a.run.to_config(Some(&source));
    let mut model = BncModel::build(cfg.model.clone())?;
    let metrics = train_source(&mut model, &source, &cfg)?;
    model.save(&a.out)?;
    if let Some(path) = &a.metrics {
        write_run_jsonl(path, &cfg, &metrics)?;
    }
    for e in &metrics.epochs {
        println!("source epoch {}: loss {:.4} acc {}", e.epoch, e.mean_loss, fmt_acc(e.source_acc));
    }
    println!("saved {}", a.out.display());
    Ok(())
}

fn cmd_adapt(a: &AdaptArgs) -> Result<()> {
    match (&a.source, a.run.cotrain) {
        (Some(_), false) => {
            return Err(Error::Usage(
                "--source is only read with --cotrain; source-free adaptation takes no source data".into(),
            ))
        }
        (None, true) => return Err(Error::Usage("--cotrain requires --source".into())),
        _ => {}
    }
    a.run.to_config(None).validate()?;
    let mut model = BncModel::load(&a.model)?;
    let target = load_dataset(&a.target)?;
    let mut cfg = a.run.to_config(Some(&target));
    // the architecture comes from the checkpoint
    cfg.model = ModelConfig {
        seed: a.run.seed,
        ..model.config().clone()
    };
    let metrics = match &a.source {
        Some(path) => {
            let source = load_dataset(path)?;
            adapt_cotrained(&mut model, &source, &target, &cfg)?
        }
        None => adapt_target(&mut model, &target, &cfg)?,
    };
    model.save(&a.out)?;
    if let Some(path) = &a.metrics {
        write_run_jsonl(path, &cfg, &metrics)?;
    }
    println!(
        "target accuracy {} -> {}",
        fmt_acc(metrics.initial_target_acc),
        fmt_acc(metrics.final_target_acc)
    );
    println!("saved {}", a.out.display());
    Ok(())
}

fn cmd_eval(a: &EvalArgs) -> Result<()> {
    let mut model = BncModel::load(&a.model)?;
    let data = load_dataset(&a.data)?;
    model.set_eval_stats(a.eval_stats);
    let preds = model.predict(data.features(), crate::analysis::EVAL_BATCH);
    model.set_eval_stats(EvalStats::Running);
    let preds = preds?;
    let mut counts = vec![0usize; model.config().num_classes];
    for &p in &preds {
        counts[p] += 1;
    }
    let acc = match data.labels() {
        Some(_) => Some(accuracy(&mut model, &data, a.eval_stats)?),
        None => None,
    };
    let report = json!({
        "domain": data.domain(),
        "rows": data.len(),
        "accuracy": acc,
        "mean_entropy": dataset_entropy(&mut model, &data, a.eval_stats)?,
        "prediction_counts": counts,
        "eval_stats": a.eval_stats,
    });
    println!("{report}");
    if let Some(path) = &a.predictions {
        let mut out = BufWriter::new(File::create(path)?);
        for p in preds {
            writeln!(out, "{p}")?;
        }
        out.flush()?;
    }
    Ok(())
}

fn cmd_analyze(a: &AnalyzeArgs) -> Result<()> {
    let mut model = BncModel::load(&a.model)?;
    let data = load_dataset(&a.data)?;
    fs::create_dir_all(&a.out_dir)?;
    let out = |name: String| a.out_dir.join(name);
    let mut summary = serde_json::Map::new();

    if data.labels().is_some() {
        summary.insert("accuracy".into(), json!(accuracy(&mut model, &data, a.eval_stats)?));
        for tap in [LayerTap::Fc2Out, LayerTap::SmIn] {
            let h = channel_histograms(&mut model, &data, tap, a.bins, a.eval_stats)?;
            for hist in [&h.correct_class, &h.other_class].into_iter().chain(&h.per_channel) {
                write_histogram_csv(out(format!("hist_{}.csv", hist.tag)), hist)?;
            }
            summary.insert(
                tap.tag().into(),
                json!({
                    "separation": h.pools.separation(),
                    "correct_std": h.pools.correct_std(),
                    "other_std": h.pools.other_std(),
                }),
            );
        }
    } else {
        for tap in [LayerTap::Fc2Out, LayerTap::SmIn] {
            let act = tapped_activations(&mut model, &data, tap, a.eval_stats)?;
            for c in 0..act.cols().min(4) {
                let hist = Histogram::new(&act.column(c), a.bins, format!("{}_ch{c}", tap.tag()))?;
                write_histogram_csv(out(format!("hist_{}.csv", hist.tag)), &hist)?;
            }
        }
    }

    let sparsity = weight_sparsity(&model, a.tau, a.bins)?;
    for layer in &sparsity.layers {
        write_histogram_csv(out(format!("hist_{}.csv", layer.histogram.tag)), &layer.histogram)?;
    }
    write_sparsity_csv(out("sparsity.csv".into()), &sparsity)?;
    summary.insert("sparsity".into(), json!(sparsity));

    let sm = tapped_activations(&mut model, &data, LayerTap::SmIn, a.eval_stats)?;
    write_matrix_csv(out("sm_inputs.csv".into()), &sm, data.labels())?;
    match project_2d(&mut model, &data, a.projection, a.eval_stats) {
        Ok(p) => {
            write_projection_csv(out("projection.csv".into()), &p)?;
            summary.insert("projection_variances".into(), json!(p.variances));
        }
        // a degenerate projection should not discard the other exports
        Err(Error::Domain(msg)) => eprintln!("warning: projection skipped: {msg}"),
        Err(e) => return Err(e),
    }

    let text = serde_json::to_string_pretty(&summary).expect("summary serializes");
    fs::write(out("summary.json".into()), text + "\n")?;
    println!("wrote analysis to {}", a.out_dir.display());
    Ok(())
}

fn cmd_grad_check(a: &GradCheckArgs) -> Result<()> {
    if a.cases == 0 {
        return Err(Error::Usage("--cases must be >= 1".into()));
    }
    let reports = gradcheck::run_all(a.seed, a.cases)?;
    let mut failed = Vec::new();
    for r in &reports {
        let status = if r.passed() { "ok" } else { "FAIL" };
        println!(
            "{:<10} cases {:>3}  max rel error {:.3e}  (tol {:.0e})  {status}",
            r.component, r.cases, r.max_rel_error, r.tolerance
        );
        if !r.passed() {
            failed.push(r.component);
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Error::Validation(format!("gradient check failed for {}", failed.join(", "))))
    }
}

/// The built-in synthetic task used by `benchmark --synthetic`.
pub fn synthetic_task(seed: u64) -> ShiftTask {
    ShiftTask {
        name: "synthetic".into(),
        data: ShiftData::Synthetic {
            num_classes: 10,
            dim: 32,
            n_per_class: 200,
            spec: ShiftSpec::moderate(),
            data_seed: seed,
        },
    }
}

fn cmd_benchmark(a: &BenchmarkArgs) -> Result<()> {
    a.run.to_config(None).validate()?;
    let tasks = match &a.manifest {
        Some(path) => load_manifest(path)?,
        None => vec![synthetic_task(a.run.seed)],
    };
    let cfg = a.run.to_config(None);
    let report = run_benchmark(&tasks, &cfg, a.jobs)?;
    if let Some(path) = &a.metrics {
        let mut out = BufWriter::new(File::create(path)?);
        write_jsonl(&report, &mut out)?;
        out.flush()?;
    }
    let stdout = io::stdout();
    let mut w = stdout.lock();
    for s in report.summaries() {
        writeln!(
            w,
            "{:<24} target acc {:.4} ± {:.4} over {} seeds (gain {:+.4})",
            s.shift,
            s.mean_target_acc,
            s.std_target_acc,
            s.seeds.len(),
            s.mean_gain
        )?;
    }
    for (shift, err) in report.failures() {
        writeln!(w, "{shift:<24} FAILED: {err}")?;
    }
    if let Some(avg) = report.grand_average {
        writeln!(w, "{:<24} {:.4}", "Avg", avg)?;
    }
    let failures = report.failures().count();
    if failures > 0 {
        return Err(Error::Validation(format!("{failures} shift(s) failed")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    fn os(args: &[&str]) -> Vec<OsString> {
        args.iter().map(OsString::from).collect()
    }

    #[test]
    fn help_lists_every_config_field() {
        let mut cmd = Cli::command();
        let help = cmd
            .find_subcommand_mut("train-source")
            .unwrap()
            .render_long_help()
            .to_string();
        let fields = serde_json::to_value(RunConfig::default()).unwrap();
        for key in fields.as_object().unwrap().keys() {
            let flag = format!("--{}", key.replace('_', "-"));
            assert!(help.contains(&flag), "{flag} missing from help");
        }
    }

    #[test]
    fn help_shows_defaults() {
        let mut cmd = Cli::command();
        let help = cmd
            .find_subcommand_mut("benchmark")
            .unwrap()
            .render_long_help()
            .to_string();
        assert!(help.contains("[default: 256]"));
        assert!(help.contains("[default: 0.001]"));
        assert!(help.contains("[default: 42]"));
    }

    #[test]
    fn later_flags_override_earlier() {
        let cli = Cli::try_parse_from(os(&[
            "bnc", "train-source", "--source", "a", "--seed", "1", "--seed", "7",
        ]))
        .unwrap();
        let Command::TrainSource(a) = cli.command else { panic!() };
        assert_eq!(a.run.seed, 7);
    }

    #[test]
    fn bool_flags_accept_values() {
        let parse = |extra: &[&str]| {
            let mut args = vec!["bnc", "train-source", "--source", "a"];
            args.extend_from_slice(extra);
            let Command::TrainSource(a) = Cli::try_parse_from(os(&args)).unwrap().command else {
                panic!()
            };
            a.run
        };
        assert!(parse(&[]).include_bn2);
        assert!(!parse(&["--include-bn2", "false"]).include_bn2);
        assert!(parse(&["--cotrain"]).cotrain);
        assert!(!parse(&[]).cotrain);
    }

    #[test]
    fn config_file_is_overridden_by_flags() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.cfg");
        fs::write(&path, "# comment\nlearning_rate = 0.05\nbatch-size=64\n\ninclude_bn2=false\n").unwrap();
        let argv = expand_config(os(&[
            "bnc",
            "train-source",
            "--source",
            "a",
            "--config",
            path.to_str().unwrap(),
            "--batch-size",
            "32",
        ]))
        .unwrap();
        let Command::TrainSource(a) = Cli::try_parse_from(argv).unwrap().command else { panic!() };
        assert_eq!(a.run.learning_rate, 0.05);
        assert_eq!(a.run.batch_size, 32);
        assert!(!a.run.include_bn2);
    }

    #[test]
    fn malformed_config_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.cfg");
        fs::write(&path, "seed 4\n").unwrap();
        let err = expand_config(os(&["bnc", "eval", "--config", path.to_str().unwrap()])).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }));
    }

    #[test]
    fn exit_codes() {
        assert_eq!(run(["bnc", "no-such-command"]), 1);
        assert_eq!(run(["bnc", "train-source"]), 1);
        assert_eq!(run(["bnc", "--help"]), 0);
        assert_eq!(run(["bnc", "eval", "--data", "/nonexistent.bncf", "--model", "/nonexistent.bncm"]), 2);
        assert_eq!(run(["bnc", "grad-check", "--cases", "0"]), 1);
    }

    #[test]
    fn adapt_source_flag_requires_cotrain() {
        let code = run([
            "bnc", "adapt", "--target", "t.bncf", "--model", "m.bncm", "--source", "s.bncf",
        ]);
        assert_eq!(code, 1);
    }
}
