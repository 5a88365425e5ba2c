//! `comet`: generate data, train, evaluate, roll out and benchmark.
//!
//! Failures print one line `error_code: message` to stderr. Exit codes:
//! 0 success, 2 usage or configuration error, 3 data error, 4 numeric divergence.

mod config;
mod output;

use std::fmt;
use std::io;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use comet_core::error::CometError;
use comet_core::evalkit::{
    evaluate, footprint_report, prepare_seed, run_cell, sort_reports, summarize,
    write_comparison_csv, write_footprint_csv, write_metrics_csv, write_model_metrics_csv,
    write_rollout_csv, write_summary_csv, EvalReport, SeedData,
};
use comet_core::format::{from_bytes, to_bytes};
use comet_core::model::CometModel;
use comet_core::numfmt::format_sig9;
use comet_core::series::TimeSeries;
use comet_core::trainer::train;
use rayon::prelude::*;

use config::Config;
use output::{parent_dir, read_input, sidecar_manifest, Artifacts, MANIFEST_NAME};

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Core(CometError),
    Io { path: PathBuf, source: io::Error },
}

impl CliError {
    pub fn io(path: &Path, source: io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    fn code(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage_error",
            CliError::Core(e) => e.code(),
            CliError::Io { source, .. } if source.kind() == io::ErrorKind::NotFound => {
                "file_not_found"
            }
            CliError::Io { .. } => "io_error",
        }
    }

    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) | CliError::Core(CometError::InvalidConfig(_)) => 2,
            CliError::Core(e) if e.is_divergence() => 4,
            _ => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "{m}"),
            CliError::Core(e) => write!(f, "{e}"),
            CliError::Io { path, source } => write!(f, "{}: {source}", path.display()),
        }
    }
}

impl From<CometError> for CliError {
    fn from(e: CometError) -> Self {
        CliError::Core(e)
    }
}

type CliResult<T> = Result<T, CliError>;

#[derive(Parser)]
#[command(
    name = "comet",
    version,
    about = "Memory-anchored autoregressive forecasting"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic regime-switching series as `t,value` CSV.
    Gen(GenArgs),
    /// Train a model on a series and write the model file and training log.
    Train(TrainArgs),
    /// Evaluate saved models: h-step MAE, drift curve and footprint.
    Eval(EvalArgs),
    /// Roll a saved model forward from a point in a series.
    Rollout(RolloutArgs),
    /// Full experiment: kNN, MLP, LSTM and COMET across seeds on generated data.
    Bench(BenchArgs),
}

#[derive(Args)]
struct GenArgs {
    /// Flat TOML config file; flags take precedence over it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output CSV path.
    #[arg(long)]
    out: PathBuf,
    /// Generator seed [default: 0]
    #[arg(long)]
    seed: Option<u64>,
    /// Number of values [default: 5000]
    #[arg(long)]
    length: Option<usize>,
    /// Mean regime length in steps [default: 400]
    #[arg(long)]
    regime_mean_duration: Option<f64>,
    /// Lower end of the per-regime drift [default: -0.002]
    #[arg(long, allow_hyphen_values = true)]
    drift_min: Option<f64>,
    /// Upper end of the per-regime drift [default: 0.002]
    #[arg(long, allow_hyphen_values = true)]
    drift_max: Option<f64>,
    /// Lower end of the per-regime noise scale [default: 0.005]
    #[arg(long)]
    volatility_min: Option<f64>,
    /// Upper end of the per-regime noise scale [default: 0.02]
    #[arg(long)]
    volatility_max: Option<f64>,
    /// Lower end of the per-regime reversion level [default: 0.8]
    #[arg(long, allow_hyphen_values = true)]
    anchor_min: Option<f64>,
    /// Upper end of the per-regime reversion level [default: 1.2]
    #[arg(long, allow_hyphen_values = true)]
    anchor_max: Option<f64>,
    /// Pull towards the regime level per step [default: 0.05]
    #[arg(long)]
    mean_reversion_rate: Option<f64>,
    /// Amplitude of the periodic component [default: 0.01]
    #[arg(long)]
    cycle_amplitude: Option<f64>,
    /// Period of the periodic component in steps [default: 150]
    #[arg(long)]
    cycle_period: Option<f64>,
}

#[derive(Args)]
struct TrainArgs {
    /// Flat TOML config file; flags take precedence over it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Training series CSV (`t,value`); it also populates the memory.
    #[arg(long)]
    series: PathBuf,
    /// Optional validation series CSV used for best-epoch selection.
    #[arg(long)]
    validation: Option<PathBuf>,
    /// Output model file.
    #[arg(long)]
    model_out: PathBuf,
    /// Training log CSV [default: <model-out>.log.csv]
    #[arg(long)]
    log_out: Option<PathBuf>,
    /// Latent dimension [default: 8]
    #[arg(long)]
    dim: Option<usize>,
    /// Neighbours retrieved per step [default: 8]
    #[arg(long)]
    k: Option<usize>,
    /// Training epochs [default: 20]
    #[arg(long)]
    epochs: Option<usize>,
    /// Learning rate [default: 0.001]
    #[arg(long)]
    lr: Option<f64>,
    /// Huber loss threshold [default: 1]
    #[arg(long)]
    huber_delta: Option<f64>,
    /// Mini-batch size [default: 32]
    #[arg(long)]
    batch_size: Option<usize>,
    /// Seed for initialisation and anchor shuffling [default: 0]
    #[arg(long)]
    seed: Option<u64>,
    /// Keep the memory built from the initial encoders instead of rebuilding it every epoch.
    #[arg(long)]
    no_memory_rebuild: bool,
}

#[derive(Args)]
struct EvalArgs {
    /// Flat TOML config file; flags take precedence over it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Model file(s) to evaluate; repeat the flag or pass several paths.
    #[arg(long = "model", alias = "models", required = true, num_args = 1..)]
    models: Vec<PathBuf>,
    /// Evaluation series CSV.
    #[arg(long)]
    series: PathBuf,
    /// Horizons for the h-step MAE, comma separated [default: 1,5]
    #[arg(long, value_delimiter = ',')]
    horizons: Option<Vec<usize>>,
    /// Drift curve horizons, comma separated [default: 1,10,20,...,200]
    #[arg(long, value_delimiter = ',')]
    drift_horizons: Option<Vec<usize>>,
    /// Spacing between rollout anchors [default: 10]
    #[arg(long)]
    stride: Option<usize>,
    /// Values of true history before the first anchor [default: the model's long window]
    #[arg(long)]
    anchor: Option<usize>,
    /// Directory for metrics.csv, footprint.csv and manifest.json.
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct RolloutArgs {
    /// Model file.
    #[arg(long)]
    model: PathBuf,
    /// Series CSV providing the seed history and the actual values.
    #[arg(long)]
    series: PathBuf,
    /// Number of leading series values used as history [default: the model's long window]
    #[arg(long)]
    anchor: Option<usize>,
    /// Steps to roll forward
    #[arg(long, default_value_t = 300)]
    horizon: usize,
    /// Add the retrieved increment and the behaviour state to every row.
    #[arg(long)]
    trace_state: bool,
    /// Output CSV path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct BenchArgs {
    /// Flat TOML config file; flags take precedence over it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out_dir: PathBuf,
    /// Seeds, comma separated [default: 0,1,2,3]
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Worker threads for (seed, model) cells; 0 uses every core
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let text = e.to_string();
            let line = text
                .lines()
                .find(|l| !l.trim().is_empty())
                .unwrap_or("invalid arguments")
                .trim_start_matches("error: ");
            eprintln!("usage_error: {line}");
            return ExitCode::from(2);
        }
    };
    let result = match cli.command {
        Command::Gen(a) => cmd_gen(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Rollout(a) => cmd_rollout(a),
        Command::Bench(a) => cmd_bench(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            eprintln!("{}: {msg}", e.code());
            ExitCode::from(e.exit_code())
        }
    }
}

fn set<T>(slot: &mut T, flag: Option<T>) {
    if let Some(v) = flag {
        *slot = v;
    }
}

fn read_series(path: &Path, artifacts: &mut Artifacts) -> CliResult<TimeSeries> {
    let bytes = read_input(path)?;
    artifacts.input(path, &bytes);
    Ok(TimeSeries::read_csv(bytes.as_slice())?)
}

fn read_model(path: &Path, artifacts: &mut Artifacts) -> CliResult<CometModel> {
    let bytes = read_input(path)?;
    artifacts.input(path, &bytes);
    Ok(from_bytes(&bytes)?)
}

fn csv_bytes(f: impl FnOnce(&mut Vec<u8>) -> comet_core::error::Result<()>) -> CliResult<Vec<u8>> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    Ok(buf)
}

fn cmd_gen(a: GenArgs) -> CliResult<()> {
    let mut cfg = Config::load(a.config.as_deref())?;
    set(&mut cfg.seed, a.seed);
    set(&mut cfg.length, a.length);
    set(&mut cfg.regime_mean_duration, a.regime_mean_duration);
    set(&mut cfg.drift_min, a.drift_min);
    set(&mut cfg.drift_max, a.drift_max);
    set(&mut cfg.volatility_min, a.volatility_min);
    set(&mut cfg.volatility_max, a.volatility_max);
    set(&mut cfg.anchor_min, a.anchor_min);
    set(&mut cfg.anchor_max, a.anchor_max);
    set(&mut cfg.mean_reversion_rate, a.mean_reversion_rate);
    set(&mut cfg.cycle_amplitude, a.cycle_amplitude);
    set(&mut cfg.cycle_period, a.cycle_period);

    let series = comet_core::datagen::generate(&cfg.gen_config(cfg.seed))?;
    let bytes = csv_bytes(|b| series.write_csv(b))?;
    let mut artifacts = Artifacts::new(&parent_dir(&a.out));
    artifacts.write(&a.out, &bytes)?;
    artifacts.finish(&sidecar_manifest(&a.out), "gen", vec![cfg.seed], &cfg)
}

fn cmd_train(a: TrainArgs) -> CliResult<()> {
    let mut cfg = Config::load(a.config.as_deref())?;
    set(&mut cfg.dim, a.dim);
    set(&mut cfg.k, a.k);
    set(&mut cfg.epochs, a.epochs);
    set(&mut cfg.learning_rate, a.lr);
    set(&mut cfg.huber_delta, a.huber_delta);
    set(&mut cfg.batch_size, a.batch_size);
    set(&mut cfg.seed, a.seed);
    if a.no_memory_rebuild {
        cfg.memory_rebuild = false;
    }
    cfg.train_config(cfg.seed).validate()?;

    let mut artifacts = Artifacts::new(&parent_dir(&a.model_out));
    let series = read_series(&a.series, &mut artifacts)?;
    let validation = match &a.validation {
        Some(p) => Some(read_series(p, &mut artifacts)?),
        None => None,
    };
    let (model, report) = train(
        series.values(),
        validation.as_ref().map(TimeSeries::values),
        cfg.window_spec(),
        &cfg.train_config(cfg.seed),
        cfg.hyper(),
    )?;
    let log_path = a.log_out.clone().unwrap_or_else(|| {
        let mut name = a.model_out.file_name().unwrap_or_default().to_os_string();
        name.push(".log.csv");
        a.model_out.with_file_name(name)
    });
    artifacts.write(&a.model_out, &to_bytes(&model)?)?;
    artifacts.write(&log_path, &csv_bytes(|b| report.write_log_csv(b))?)?;
    let fp = model.parameter_count();
    println!(
        "trained {} epochs, best epoch {}, {} parameters, memory {} entries",
        report.epoch_losses.len(),
        report.best_epoch,
        fp.param_count,
        model.memory.len()
    );
    artifacts.finish(
        &sidecar_manifest(&a.model_out),
        "train",
        vec![cfg.seed],
        &cfg,
    )
}

fn cmd_eval(a: EvalArgs) -> CliResult<()> {
    let mut cfg = Config::load(a.config.as_deref())?;
    set(&mut cfg.horizons, a.horizons);
    set(&mut cfg.drift_horizons, a.drift_horizons);
    set(&mut cfg.anchor_stride, a.stride);
    let mut eval = cfg.eval_config();
    eval.validate()?;

    let mut artifacts = Artifacts::new(&a.out_dir);
    let series = read_series(&a.series, &mut artifacts)?;
    let mut reports: Vec<EvalReport> = Vec::with_capacity(a.models.len());
    for path in &a.models {
        let model = read_model(path, &mut artifacts)?;
        let first = a.anchor.unwrap_or(model.window_spec.long_len);
        if first > series.len() {
            return Err(CometError::NoAnchors(format!(
                "anchor {first} is beyond the {} values of {}",
                series.len(),
                a.series.display()
            ))
            .into());
        }
        eval.rollout_horizon = 1;
        let mut report = evaluate(&model, 0, &series, &eval, first)?;
        report.rollout = None;
        report.model = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "comet".into());
        reports.push(report);
    }
    let metrics = csv_bytes(|b| write_model_metrics_csv(&reports, b))?;
    let footprint = csv_bytes(|b| write_footprint_csv(&footprint_report(&reports), b))?;
    artifacts.write(&a.out_dir.join("metrics.csv"), &metrics)?;
    artifacts.write(&a.out_dir.join("footprint.csv"), &footprint)?;
    artifacts.finish(&a.out_dir.join(MANIFEST_NAME), "eval", Vec::new(), &cfg)
}

fn cmd_rollout(a: RolloutArgs) -> CliResult<()> {
    let cfg = Config::default();
    let mut artifacts = Artifacts::new(&parent_dir(&a.out));
    let model = read_model(&a.model, &mut artifacts)?;
    let series = read_series(&a.series, &mut artifacts)?;
    let anchor = a.anchor.unwrap_or(model.window_spec.long_len);
    if anchor > series.len() {
        return Err(CometError::NoAnchors(format!(
            "anchor {anchor} is beyond the {} values of {}",
            series.len(),
            a.series.display()
        ))
        .into());
    }
    let values = series.values();
    let result = model.rollout(&values[..anchor], a.horizon, a.trace_state)?;

    let mut text = String::from("t,predicted,actual");
    if a.trace_state {
        text.push_str(",dx_mem");
        for d in 0..model.dim() {
            text.push_str(&format!(",z_{d}"));
        }
    }
    text.push('\n');
    for (i, p) in result.predictions.iter().enumerate() {
        let t = anchor + i;
        let actual = values.get(t).map(|v| format_sig9(*v)).unwrap_or_default();
        text.push_str(&format!("{t},{},{actual}", format_sig9(*p)));
        if let Some(states) = &result.states {
            text.push_str(&format!(",{}", format_sig9(result.per_step_dx[i])));
            for z in &states[i].z {
                text.push_str(&format!(",{}", format_sig9(*z)));
            }
        }
        text.push('\n');
    }
    artifacts.write(&a.out, text.as_bytes())?;
    artifacts.finish(&sidecar_manifest(&a.out), "rollout", Vec::new(), &cfg)
}

fn cmd_bench(a: BenchArgs) -> CliResult<()> {
    let mut cfg = Config::load(a.config.as_deref())?;
    set(&mut cfg.seeds, a.seeds);
    cfg.validate()?;
    let eval = cfg.eval_config();
    let window = cfg.window_spec();
    let specs = cfg.model_specs();
    let gen = cfg.gen_config(0);
    let split = cfg.split_spec();

    let data: Vec<(u64, SeedData)> = cfg
        .seeds
        .iter()
        .map(|&s| prepare_seed(&gen, &split, &window, s).map(|d| (s, d)))
        .collect::<Result<_, _>>()?;
    let cells: Vec<(usize, usize)> = (0..data.len())
        .flat_map(|d| (0..specs.len()).map(move |m| (d, m)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(a.jobs)
        .build()
        .map_err(|e| CliError::Usage(format!("cannot start worker threads: {e}")))?;
    let mut reports: Vec<EvalReport> = pool.install(|| {
        cells
            .par_iter()
            .map(|&(d, m)| {
                let (seed, ref seed_data) = data[d];
                run_cell(&specs[m], seed_data, seed, &eval, &window)
            })
            .collect::<Result<_, _>>()
    })?;
    let order: Vec<&str> = specs.iter().map(|s| s.name()).collect();
    sort_reports(&mut reports, &order);

    let mut artifacts = Artifacts::new(&a.out_dir);
    let dir = &a.out_dir;
    artifacts.write(
        &dir.join("metrics.csv"),
        &csv_bytes(|b| write_metrics_csv(&reports, b))?,
    )?;
    artifacts.write(
        &dir.join("summary.csv"),
        &csv_bytes(|b| write_summary_csv(&summarize(&reports), b))?,
    )?;
    artifacts.write(
        &dir.join("footprint.csv"),
        &csv_bytes(|b| write_footprint_csv(&footprint_report(&reports), b))?,
    )?;
    let ratios = comparison_ratios(&cfg.drift_horizons);
    artifacts.write(
        &dir.join("comparison.csv"),
        &csv_bytes(|b| write_comparison_csv(&reports, &ratios, b))?,
    )?;
    for r in &reports {
        if let Some(trace) = &r.rollout {
            let path = dir.join(format!("rollout_{}_{}.csv", r.model, r.seed));
            artifacts.write(&path, &csv_bytes(|b| write_rollout_csv(trace, b))?)?;
        }
    }
    print_table(&reports, &ratios);
    artifacts.finish(&dir.join(MANIFEST_NAME), "bench", cfg.seeds.clone(), &cfg)
}

/// Drift growth ratios reported by `bench`: 200 over 10 and over 20 when
/// those horizons are evaluated, otherwise last over first.
fn comparison_ratios(horizons: &[usize]) -> Vec<(usize, usize)> {
    let mut out: Vec<(usize, usize)> = [(10, 200), (20, 200)]
        .into_iter()
        .filter(|(a, b)| horizons.contains(a) && horizons.contains(b))
        .collect();
    if out.is_empty() {
        if let (Some(&lo), Some(&hi)) = (horizons.iter().min(), horizons.iter().max()) {
            if lo < hi {
                out.push((lo, hi));
            }
        }
    }
    out
}

fn print_table(reports: &[EvalReport], ratios: &[(usize, usize)]) {
    let mut header = format!("{:>4} {:>6} {:>12}", "seed", "model", "mae@1");
    for (lo, hi) in ratios {
        header.push_str(&format!(" {:>12}", format!("drift{hi}/{lo}")));
    }
    println!("{header}");
    for r in reports {
        let mut line = format!(
            "{:>4} {:>6} {:>12}",
            r.seed,
            r.model,
            r.mae_at(1).map(format_sig9).unwrap_or_default()
        );
        for (lo, hi) in ratios {
            let ratio = match (r.drift_at(*lo), r.drift_at(*hi)) {
                (Some(x), Some(y)) if x > 0.0 => format!("{:.3}", y / x),
                _ => String::new(),
            };
            line.push_str(&format!(" {ratio:>12}"));
        }
        println!("{line}");
    }
}
