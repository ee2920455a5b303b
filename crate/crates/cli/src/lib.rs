//! Command-line pipelines over the bathywave toolkit.
//!
//! Every subcommand loads an optional JSON [`RunConfig`], applies flag
//! overrides, validates everything, reads its inputs and only then writes
//! outputs. Failures print one JSON object on stderr:
//! `{"error": <kind>, "key": <offending key or null>, "message": <text>}`.

use std::collections::HashSet;
use std::ffi::OsString;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use bathywave::adapt::{adapt_and_predict, fine_tune, AdaptError};
use bathywave::inversion::{depth_from_waveform, fit_attenuation, log_intensity_depth_pairs, EchoOptions, InversionError};
use bathywave::io::{self, IoError, RunConfig};
use bathywave::nn::gradcheck::{check_kind, LayerKind};
use bathywave::nn::{self, build_tribranch, evaluate_predictions, NnError, TrainConfig};
use bathywave::par;
use bathywave::simulator::{generate_dataset, generate_shifted_dataset, SimError};
use bathywave::wave::{split_dataset, Dataset, ImpType, Metrics, WaveError};
use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use serde_json::json;

/// Environment variable holding the default worker-thread count.
pub const THREADS_ENV: &str = "BATHYWAVE_THREADS";
/// Gradient checks fail above this relative error.
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;
/// Waveforms generated when `--n` is not given.
pub const DEFAULT_DATASET_SIZE: usize = 50_000;

#[derive(Debug, Parser)]
#[command(name = "bathywave", version, about = "Full-waveform bathymetric LiDAR toolkit")]
struct Cli {
    /// JSON run configuration; omitted fields take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads (default: $BATHYWAVE_THREADS, else all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate a labeled dataset.
    Generate(GenerateArgs),
    /// Simulate a dataset through the configured domain shift.
    GenerateShifted(ShiftedArgs),
    /// Split a dataset, train the three-branch model and save it.
    Train(TrainArgs),
    /// Write model predictions for every waveform.
    Predict(PredictArgs),
    /// Regression metrics of a model on a labeled dataset.
    Evaluate(PredictArgs),
    /// Peak-based depth for every waveform.
    Invert(InvertArgs),
    /// Attenuation coefficient from log bottom intensity against depth.
    Kdfit(KdfitArgs),
    /// Predict a target set after transporting it onto a source sample.
    Adapt(AdaptArgs),
    /// Continue training on a small labeled target set.
    Finetune(FinetuneArgs),
    /// Finite-difference check of every layer's gradients.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
struct GenerateArgs {
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct ShiftedArgs {
    #[command(flatten)]
    base: GenerateArgs,
    /// Replacement pulse family: bell, gumbel or frechet.
    #[arg(long)]
    pulse: Option<String>,
    #[arg(long, allow_negative_numbers = true)]
    background_offset: Option<f64>,
    #[arg(long)]
    stretch: Option<f64>,
    #[arg(long)]
    extra_noise: Option<f64>,
}

#[derive(Debug, Args)]
struct TrainOverrides {
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    /// Std of Gaussian noise added to training inputs each epoch.
    #[arg(long)]
    noise_sigma: Option<f64>,
    /// Seed of shuffling and augmentation.
    #[arg(long)]
    seed: Option<u64>,
    /// Training and validation loss per epoch.
    #[arg(long)]
    curves: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long = "in")]
    input: PathBuf,
    /// Model checkpoint to write.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    train: TrainOverrides,
    /// Seed of the initial weights.
    #[arg(long)]
    init_seed: Option<u64>,
    /// Where to save the held-out test split.
    #[arg(long)]
    test_out: Option<PathBuf>,
    /// Test-split metrics CSV.
    #[arg(long)]
    metrics: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct InvertArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    min_prominence: Option<f64>,
}

#[derive(Debug, Args)]
struct KdfitArgs {
    #[arg(long = "in")]
    input: PathBuf,
    /// Depth / log-intensity pairs used by the fit.
    #[arg(long)]
    scatter: Option<PathBuf>,
    #[arg(long)]
    min_prominence: Option<f64>,
}

#[derive(Debug, Args)]
struct AdaptArgs {
    #[arg(long)]
    model: PathBuf,
    /// Dataset drawn from the training distribution.
    #[arg(long)]
    source: PathBuf,
    /// Labeled target dataset.
    #[arg(long)]
    target: PathBuf,
    /// Metrics CSV after adaptation.
    #[arg(long)]
    out: PathBuf,
    /// Metrics CSV without adaptation.
    #[arg(long)]
    baseline: Option<PathBuf>,
    #[arg(long)]
    predictions: Option<PathBuf>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct FinetuneArgs {
    #[arg(long)]
    model: PathBuf,
    /// Labeled target subset.
    #[arg(long = "in")]
    input: PathBuf,
    /// Tuned checkpoint to write.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    train: TrainOverrides,
}

#[derive(Debug, Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 50)]
    instances: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

/// A failure reported as one machine-readable line.
#[derive(Debug, Clone, PartialEq)]
pub struct Failure {
    pub kind: String,
    pub key: Option<String>,
    pub message: String,
}

impl Failure {
    pub fn to_json(&self) -> String {
        json!({"error": self.kind, "key": self.key, "message": self.message}).to_string()
    }
}

fn config_error(key: &str, message: impl ToString) -> anyhow::Error {
    IoError::Config {
        key: key.to_string(),
        message: message.to_string(),
    }
    .into()
}

/// Variant name of an error enum, from its `Debug` form.
fn variant(debug: &str) -> String {
    debug.split(|c: char| !c.is_alphanumeric() && c != '_').next().unwrap_or("Error").to_string()
}

fn classify(err: &anyhow::Error) -> Failure {
    let message = format!("{err:#}");
    for cause in err.chain() {
        if let Some(IoError::Config { key, message }) = cause.downcast_ref::<IoError>() {
            return Failure {
                kind: "ConfigError".into(),
                key: Some(key.clone()),
                message: message.clone(),
            };
        }
    }
    let root = err.root_cause();
    let kind = if let Some(e) = root.downcast_ref::<IoError>() {
        variant(&format!("{e:?}"))
    } else if let Some(e) = root.downcast_ref::<SimError>() {
        variant(&format!("{e:?}"))
    } else if let Some(e) = root.downcast_ref::<NnError>() {
        variant(&format!("{e:?}"))
    } else if let Some(e) = root.downcast_ref::<AdaptError>() {
        variant(&format!("{e:?}"))
    } else if let Some(e) = root.downcast_ref::<InversionError>() {
        variant(&format!("{e:?}"))
    } else if let Some(e) = root.downcast_ref::<WaveError>() {
        variant(&format!("{e:?}"))
    } else if root.downcast_ref::<std::io::Error>().is_some() {
        "Io".into()
    } else {
        "Error".into()
    };
    Failure { kind, key: None, message }
}

/// Parses `argv` (program name first), runs the subcommand and returns the
/// process exit status.
pub fn run_command<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion | ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand => {
                    print!("{e}");
                    0
                }
                kind => {
                    let failure = Failure {
                        kind: match kind {
                            ErrorKind::InvalidSubcommand | ErrorKind::MissingSubcommand => "UnknownCommand",
                            _ => "UsageError",
                        }
                        .into(),
                        key: None,
                        message: e.to_string().lines().next().unwrap_or_default().to_string(),
                    };
                    eprintln!("{}", failure.to_json());
                    2
                }
            };
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(err) => {
            eprintln!("{}", classify(&err).to_json());
            1
        }
    }
}

fn default_threads() -> Result<Option<usize>> {
    match std::env::var(THREADS_ENV) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(Some(n)),
            _ => Err(config_error(THREADS_ENV, format!("expected a positive integer, got {v:?}"))),
        },
        Err(_) => Ok(None),
    }
}

fn run(cli: Cli) -> Result<()> {
    let threads = match cli.threads {
        Some(0) => return Err(config_error("threads", "must be >= 1")),
        Some(n) => Some(n),
        None => default_threads()?,
    };
    let cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let command = cli.command;
    par::with_workers(threads, move || dispatch(command, cfg))
}

fn dispatch(command: Command, cfg: RunConfig) -> Result<()> {
    match command {
        Command::Generate(a) => generate(a, cfg),
        Command::GenerateShifted(a) => generate_shifted(a, cfg),
        Command::Train(a) => train(a, cfg),
        Command::Predict(a) => predict(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Invert(a) => invert(a, cfg),
        Command::Kdfit(a) => kdfit(a),
        Command::Adapt(a) => adapt(a, cfg),
        Command::Finetune(a) => finetune(a, cfg),
        Command::Gradcheck(a) => gradcheck(a),
    }
}

/// Rejects any output that coincides with another output or an input.
fn distinct_paths(inputs: &[&Path], outputs: &[(&str, Option<&Path>)]) -> Result<()> {
    let mut seen: HashSet<PathBuf> = inputs.iter().map(|p| p.to_path_buf()).collect();
    for (key, p) in outputs {
        if let Some(p) = p {
            if !seen.insert(p.to_path_buf()) {
                return Err(config_error(key, format!("{} is already used by another input or output", p.display())));
            }
        }
    }
    Ok(())
}

fn read_dataset(path: &Path) -> Result<Dataset> {
    io::read_dataset(path).with_context(|| format!("reading {}", path.display()))
}

fn read_model(path: &Path) -> Result<nn::Model> {
    io::read_model(path).with_context(|| format!("reading {}", path.display()))
}

fn write(path: &Path, text: &str) -> Result<()> {
    io::write_text(path, text).with_context(|| format!("writing {}", path.display()))
}

fn generation_size(n: Option<usize>) -> Result<usize> {
    match n {
        Some(0) => Err(config_error("n", "must be >= 1")),
        Some(n) => Ok(n),
        None => Ok(DEFAULT_DATASET_SIZE),
    }
}

fn save_dataset(ds: &Dataset, path: &Path) -> Result<()> {
    io::write_dataset(ds, path).with_context(|| format!("writing {}", path.display()))
}

fn generate(a: GenerateArgs, cfg: RunConfig) -> Result<()> {
    let n = generation_size(a.n)?;
    let seed = a.seed.unwrap_or(cfg.seeds.generate);
    let ds = generate_dataset(n, &cfg.ranges, &cfg.grid, seed)?;
    save_dataset(&ds, &a.out)?;
    println!("{}", json!({"written": a.out, "samples": n, "seed": seed}));
    Ok(())
}

fn parse_pulse(name: &str) -> Result<ImpType> {
    match name.to_ascii_lowercase().as_str() {
        "bell" => Ok(ImpType::Bell),
        "gumbel" => Ok(ImpType::Gumbel),
        "frechet" => Ok(ImpType::Frechet),
        _ => Err(config_error("pulse", format!("unknown pulse family {name:?}"))),
    }
}

fn generate_shifted(a: ShiftedArgs, mut cfg: RunConfig) -> Result<()> {
    let n = generation_size(a.base.n)?;
    let seed = a.base.seed.unwrap_or(cfg.seeds.generate);
    if let Some(p) = &a.pulse {
        cfg.shift.pulse_substitution = Some(parse_pulse(p)?);
    }
    if let Some(v) = a.background_offset {
        cfg.shift.background_offset = v;
    }
    if let Some(v) = a.stretch {
        cfg.shift.stretch = v;
    }
    if let Some(v) = a.extra_noise {
        cfg.shift.extra_noise = v;
    }
    cfg.shift.validate().map_err(|e| config_error("shift", e))?;
    let ds = generate_shifted_dataset(n, &cfg.ranges, &cfg.grid, &cfg.shift, seed)?;
    save_dataset(&ds, &a.base.out)?;
    println!("{}", json!({"written": a.base.out, "samples": n, "seed": seed, "shift": cfg.shift}));
    Ok(())
}

fn apply_train_overrides(t: &TrainOverrides, base: &TrainConfig) -> Result<TrainConfig> {
    let mut c = base.clone();
    if let Some(v) = t.epochs {
        c.max_epochs = v;
    }
    if let Some(v) = t.lr {
        c.learning_rate = v;
    }
    if let Some(v) = t.batch_size {
        c.batch_size = v;
    }
    if let Some(v) = t.patience {
        c.early_stop_patience = v;
    }
    if let Some(v) = t.noise_sigma {
        c.noise_augment_sigma = v;
    }
    if let Some(v) = t.seed {
        c.seed = v;
    }
    c.validate().map_err(|e| config_error("train", e))?;
    Ok(c)
}

fn metrics_json(m: &[Metrics]) -> serde_json::Value {
    nn::TARGETS
        .iter()
        .zip(m)
        .map(|(t, m)| (t.to_string(), json!({"mae": m.mae, "rmse": m.rmse, "r2": m.r2})))
        .collect::<serde_json::Map<_, _>>()
        .into()
}

fn train(a: TrainArgs, cfg: RunConfig) -> Result<()> {
    let tc = apply_train_overrides(&a.train, &cfg.train)?;
    distinct_paths(
        &[&a.input],
        &[
            ("out", Some(&a.out)),
            ("curves", a.train.curves.as_deref()),
            ("test_out", a.test_out.as_deref()),
            ("metrics", a.metrics.as_deref()),
        ],
    )?;
    let ds = read_dataset(&a.input)?;
    let (tr, va, te) = split_dataset(&ds, cfg.split.tuple(), cfg.seeds.split)?;
    if tr.is_empty() || va.is_empty() {
        bail!("dataset of {} samples leaves an empty training or validation split", ds.len());
    }
    if a.metrics.is_some() && te.is_empty() {
        return Err(config_error("metrics", "the test split is empty"));
    }
    let mut model = build_tribranch(&cfg.model, a.init_seed.unwrap_or(cfg.seeds.init))?;
    let report = nn::train(&mut model, &tr, &va, &tc)?;
    io::write_model(&model, &a.out).with_context(|| format!("writing {}", a.out.display()))?;
    if let Some(p) = &a.train.curves {
        write(p, &io::curves_csv(&report)?)?;
    }
    if let Some(p) = &a.test_out {
        save_dataset(&te, p)?;
    }
    let mut summary = json!({
        "model": a.out,
        "train": tr.len(), "val": va.len(), "test": te.len(),
        "best_epoch": report.best_epoch,
        "stopped_epoch": report.stopped_epoch,
        "best_val_loss": report.best_val_loss,
    });
    if let Some(p) = &a.metrics {
        let m = nn::evaluate(&model, &te)?;
        write(p, &io::metrics_csv(&m)?)?;
        summary["test_metrics"] = metrics_json(&m);
    }
    println!("{summary}");
    Ok(())
}

fn predict(a: PredictArgs) -> Result<()> {
    distinct_paths(&[&a.model, &a.input], &[("out", Some(&a.out))])?;
    let model = read_model(&a.model)?;
    let ds = read_dataset(&a.input)?;
    let preds = nn::predict(&model, &ds.waveforms())?;
    write(&a.out, &io::predictions_csv(&preds)?)?;
    println!("{}", json!({"written": a.out, "samples": preds.len()}));
    Ok(())
}

fn evaluate(a: PredictArgs) -> Result<()> {
    distinct_paths(&[&a.model, &a.input], &[("out", Some(&a.out))])?;
    let model = read_model(&a.model)?;
    let ds = read_dataset(&a.input)?;
    let m = nn::evaluate(&model, &ds)?;
    write(&a.out, &io::metrics_csv(&m)?)?;
    println!("{}", metrics_json(&m));
    Ok(())
}

fn echo_options(min_prominence: Option<f64>) -> Result<EchoOptions> {
    let mut opts = EchoOptions::default();
    if let Some(p) = min_prominence {
        if !(p >= 0.0 && p.is_finite()) {
            return Err(config_error("min_prominence", format!("{p} must be >= 0")));
        }
        opts.min_prominence = p;
    }
    Ok(opts)
}

fn invert(a: InvertArgs, _cfg: RunConfig) -> Result<()> {
    let opts = echo_options(a.min_prominence)?;
    distinct_paths(&[&a.input], &[("out", Some(&a.out))])?;
    let ds = read_dataset(&a.input)?;
    let results = par::map_slice(&ds.samples, |s| depth_from_waveform(&s.waveform, opts.n_w, opts.min_prominence));
    let mut text = String::from("index,depth_hat,depth\n");
    let (mut resolved, mut abs_err) = (0usize, 0.0);
    for (i, (r, s)) in results.iter().zip(&ds.samples).enumerate() {
        let hat = match r {
            Ok(d) => {
                resolved += 1;
                abs_err += (d - s.params.depth).abs();
                io::format_float(*d)
            }
            Err(_) => "undefined".to_string(),
        };
        text.push_str(&format!("{i},{hat},{}\n", io::format_float(s.params.depth)));
    }
    write(&a.out, &text)?;
    let mae = (resolved > 0).then(|| abs_err / resolved as f64);
    println!("{}", json!({"samples": ds.len(), "resolved": resolved, "mae_resolved": mae}));
    Ok(())
}

fn kdfit(a: KdfitArgs) -> Result<()> {
    let opts = echo_options(a.min_prominence)?;
    distinct_paths(&[&a.input], &[("scatter", a.scatter.as_deref())])?;
    let ds = read_dataset(&a.input)?;
    let pairs = log_intensity_depth_pairs(&ds.waveforms(), &opts);
    let fit = fit_attenuation(&pairs.pairs)?;
    if let Some(p) = &a.scatter {
        write(p, &io::scatter_csv(&pairs.pairs)?)?;
    }
    println!(
        "{}",
        json!({
            "slope": fit.slope,
            "kd_hat": fit.kd_hat,
            "kd_two_way": fit.two_way_kd(),
            "intercept": fit.intercept,
            "r2": fit.r2,
            "points": fit.n_points,
            "skipped": pairs.skipped.len(),
        })
    );
    Ok(())
}

fn adapt(a: AdaptArgs, mut cfg: RunConfig) -> Result<()> {
    if let Some(e) = a.epsilon {
        if !(e > 0.0 && e.is_finite()) {
            return Err(config_error("epsilon", format!("{e} must be > 0")));
        }
        cfg.adapt.sinkhorn.epsilon = Some(e);
    }
    if let Some(s) = a.seed {
        cfg.adapt.seed = s;
    }
    distinct_paths(
        &[&a.model, &a.source, &a.target],
        &[
            ("out", Some(&a.out)),
            ("baseline", a.baseline.as_deref()),
            ("predictions", a.predictions.as_deref()),
        ],
    )?;
    let model = read_model(&a.model)?;
    let source = read_dataset(&a.source)?;
    let target = read_dataset(&a.target)?;
    let truth = target.targets();
    let before = evaluate_predictions(&nn::predict(&model, &target.waveforms())?, &truth)?;
    let adapted = adapt_and_predict(&model, &target.waveforms(), &source.waveforms(), &cfg.adapt)?;
    let after = evaluate_predictions(&adapted.predictions, &truth)?;
    write(&a.out, &io::metrics_csv(&after)?)?;
    if let Some(p) = &a.baseline {
        write(p, &io::metrics_csv(&before)?)?;
    }
    if let Some(p) = &a.predictions {
        write(p, &io::predictions_csv(&adapted.predictions)?)?;
    }
    println!(
        "{}",
        json!({"unadapted": metrics_json(&before), "adapted": metrics_json(&after), "marginal_violation": adapted.violation})
    );
    Ok(())
}

fn finetune(a: FinetuneArgs, cfg: RunConfig) -> Result<()> {
    let tc = apply_train_overrides(&a.train, &cfg.train)?;
    distinct_paths(&[&a.model, &a.input], &[("out", Some(&a.out)), ("curves", a.train.curves.as_deref())])?;
    let model = read_model(&a.model)?;
    let ds = read_dataset(&a.input)?;
    let (tuned, report) = fine_tune(&model, &ds, &tc)?;
    io::write_model(&tuned, &a.out).with_context(|| format!("writing {}", a.out.display()))?;
    if let Some(p) = &a.train.curves {
        if !report.train_loss.is_empty() {
            write(p, &io::curves_csv(&report)?)?;
        }
    }
    println!(
        "{}",
        json!({"model": a.out, "samples": ds.len(), "best_epoch": report.best_epoch, "stopped_epoch": report.stopped_epoch})
    );
    Ok(())
}

fn gradcheck(a: GradcheckArgs) -> Result<()> {
    if a.instances == 0 {
        return Err(config_error("instances", "must be >= 1"));
    }
    let mut worst = 0.0f64;
    for kind in LayerKind::ALL {
        let r = check_kind(kind, a.instances, a.seed)?;
        worst = worst.max(r.max_rel_error);
        println!(
            "{}",
            json!({"layer": kind.name(), "max_rel_error": r.max_rel_error, "checked": r.checked, "skipped": r.skipped})
        );
    }
    if worst >= GRADCHECK_TOLERANCE {
        return Err(anyhow!("GradientMismatch: largest relative error {worst:e} exceeds {GRADCHECK_TOLERANCE:e}"));
    }
    Ok(())
}
