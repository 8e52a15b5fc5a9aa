//! `drumlevel`: run the forecasting pipeline end to end or one stage at a time.
//!
//! Exit codes: 0 success, 2 configuration or usage error, 3 data error,
//! 4 stage failure. Set `DRUMLEVEL_LOG` (e.g. `debug`) to change verbosity.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use drumlevel_core::causal::{ConditioningPolicy, PredictorKind, ScreenConfig};
use drumlevel_core::delay::{augment_with_lags, build_delay_table_with, AugmentSpec, DelayOptions, DelayTable};
use drumlevel_core::evaluation::{evaluate_with_forecasts, DEFAULT_HORIZONS};
use drumlevel_core::models::{predict_horizon, train, Checkpoint, ModelConfig, ModelKind, TrainConfig, TrainedModel, WindowDataset};
use drumlevel_core::pipeline::{forecast_csv, read_forecast_csv, render_columns, render_plots, PipelineConfig, Run, STAGES};
use drumlevel_core::series::{clean, load_csv, split, standardize, PreprocessConfig, SeriesFrame, SplitSpec};
use drumlevel_core::synth::{generate, generate_var_system, preset, screening_benchmark, GeneratorSpec};
use drumlevel_core::{screen_all, CausalReport, Error, ErrorKind, Result};

#[derive(Parser)]
#[command(name = "drumlevel", version, about = "Causal screening, delay inference and forecasting for drum-level series")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the full pipeline (or one stage of it) from a JSON config.
    Run(RunArgs),
    /// Fill gaps, remove outliers and smooth a raw CSV.
    Preprocess(PreprocessArgs),
    /// Granger-screen candidate factors against the target.
    Screen(ScreenArgs),
    /// Estimate each factor's delay from the cross-correlation peak.
    Delay(DelayArgs),
    /// Add delay-shifted copies of factors as new columns.
    Augment(AugmentArgs),
    /// Train one forecaster and write a checkpoint.
    Train(TrainArgs),
    /// Forecast over a frame with a saved checkpoint.
    Predict(PredictArgs),
    /// Tabulate MAE/MSE/MAPE per model and horizon on the test split.
    Evaluate(EvaluateArgs),
    /// Generate synthetic series with known causes and delays.
    Synth(SynthArgs),
    /// Render plots and histogram CSV from a stored forecast.
    Report(ReportArgs),
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Run only this stage, reading earlier artifacts from the output directory.
    #[arg(long, value_parser = clap::builder::PossibleValuesParser::new(STAGES))]
    stage: Option<String>,
}

#[derive(Args)]
struct PreprocessArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value = "clean.csv")]
    output: PathBuf,
    /// Columns to keep (all when omitted).
    #[arg(long, value_delimiter = ',')]
    columns: Vec<String>,
    #[arg(long, default_value_t = 10)]
    max_gap: usize,
    #[arg(long, default_value_t = 11)]
    outlier_window: usize,
    #[arg(long, default_value_t = 3.0)]
    outlier_sigmas: f64,
    #[arg(long, default_value_t = 5)]
    smooth_window: usize,
}

#[derive(Args)]
struct ScreenArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    target: String,
    /// Candidate factors (every other column when omitted).
    #[arg(long, value_delimiter = ',')]
    candidates: Vec<String>,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long, default_value_t = 10)]
    history_len: usize,
    #[arg(long, default_value = "linear-ar", value_parser = parse_predictor)]
    predictor: PredictorKind,
    /// Condition on this fixed set instead of all other candidates.
    #[arg(long, value_delimiter = ',')]
    conditioning: Option<Vec<String>>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "causal_report.json")]
    output: PathBuf,
}

#[derive(Args)]
struct DelayArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    target: String,
    #[arg(long, default_value_t = 600)]
    max_lag: usize,
    /// Factors to scan (every other column when omitted).
    #[arg(long, value_delimiter = ',', conflicts_with = "causal_report")]
    variables: Vec<String>,
    /// Scan only the factors retained in this screening report.
    #[arg(long)]
    causal_report: Option<PathBuf>,
    /// Pick the largest |correlation| and record its sign.
    #[arg(long)]
    allow_negative: bool,
    #[arg(long, default_value = "delays.json")]
    output: PathBuf,
    /// Also write every factor's correlation profile.
    #[arg(long)]
    profiles: Option<PathBuf>,
}

#[derive(Args)]
struct AugmentArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    delays: PathBuf,
    /// Keep only the target and the lagged columns.
    #[arg(long)]
    drop_original: bool,
    #[arg(long, default_value = "augmented.csv")]
    output: PathBuf,
}

#[derive(Args)]
struct SplitArg {
    /// Train, validation and test fractions.
    #[arg(long, value_delimiter = ',', num_args = 3, default_values_t = [0.7, 0.15, 0.15])]
    split: Vec<f64>,
}

impl SplitArg {
    fn spec(&self) -> Result<SplitSpec> {
        SplitSpec::new(self.split[0], self.split[1], self.split[2])
    }
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    target: String,
    #[arg(long, default_value = "transformer", value_parser = parse_model)]
    model: ModelKind,
    /// Input columns in model order (every column when omitted).
    #[arg(long, value_delimiter = ',')]
    features: Vec<String>,
    #[arg(long, default_value_t = 32)]
    window: usize,
    #[arg(long, default_value_t = 1)]
    horizon: usize,
    #[arg(long, default_value_t = 16)]
    d_model: usize,
    #[arg(long, default_value_t = 2)]
    heads: usize,
    #[arg(long, default_value_t = 32)]
    d_ff: usize,
    #[arg(long, default_value_t = 1)]
    layers: usize,
    #[arg(long, default_value_t = 0.0)]
    dropout: f64,
    #[arg(long, default_value_t = 2000)]
    steps: usize,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = 10)]
    patience: usize,
    #[arg(long, default_value_t = 50)]
    eval_every: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    split: SplitArg,
    #[arg(long, default_value = "model.json")]
    output: PathBuf,
    /// Write the training log here.
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Frame in physical units with the checkpoint's columns.
    #[arg(long)]
    input: PathBuf,
    /// Predict over the whole frame instead of its test split.
    #[arg(long)]
    all_rows: bool,
    #[command(flatten)]
    split: SplitArg,
    #[arg(long, default_value = "forecast.csv")]
    output: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long, value_delimiter = ',', required = true)]
    checkpoints: Vec<PathBuf>,
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_HORIZONS)]
    horizons: Vec<usize>,
    #[command(flatten)]
    split: SplitArg,
    #[arg(long, default_value = "eval_report.csv")]
    output: PathBuf,
    #[arg(long)]
    json: Option<PathBuf>,
    /// Write plots, histograms and forecasts for each model here.
    #[arg(long)]
    plots: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    /// `three-delays`, `delayed-dynamics` or `var-benchmark`.
    #[arg(long, conflicts_with = "spec")]
    preset: Option<String>,
    /// Generator spec as JSON.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 20_000)]
    n_samples: usize,
    #[arg(long, default_value = "synth.csv")]
    output: PathBuf,
    #[arg(long)]
    truth: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    /// Forecast CSV written by `predict` or `evaluate --plots`.
    #[arg(long)]
    forecast: PathBuf,
    #[arg(long, default_value_t = 1)]
    horizon: usize,
    #[arg(long)]
    name: Option<String>,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

fn parse_predictor(s: &str) -> std::result::Result<PredictorKind, String> {
    match s {
        "linear-ar" => Ok(PredictorKind::LinearAr),
        "lstm" => Ok(PredictorKind::Lstm),
        "transformer" => Ok(PredictorKind::Transformer),
        other => Err(format!("unknown predictor `{other}` (linear-ar, lstm, transformer)")),
    }
}

fn parse_model(s: &str) -> std::result::Result<ModelKind, String> {
    match s.parse::<ModelKind>() {
        Ok(ModelKind::Persistence) | Err(_) => Err(format!("unknown trainable model `{s}` (transformer, lstm)")),
        Ok(k) => Ok(k),
    }
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::Io { path: parent.display().to_string(), message: e.to_string() })?;
    }
    std::fs::write(path, contents).map_err(|e| Error::Io { path: path.display().to_string(), message: e.to_string() })
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::Io { path: path.display().to_string(), message: e.to_string() })
}

fn load(path: &Path) -> Result<SeriesFrame> {
    load_csv(path, &[] as &[&str])
}

fn others(frame: &SeriesFrame, target: &str) -> Vec<String> {
    frame.names().filter(|n| *n != target).map(str::to_string).collect()
}

fn run(args: RunArgs) -> Result<()> {
    let run = Run::new(PipelineConfig::load(&args.config)?)?;
    match args.stage {
        Some(stage) => {
            for path in run.stage(&stage)? {
                println!("{}", run.out.join(path).display());
            }
        }
        None => {
            let manifest = run.run_all()?;
            println!("{} stages completed, run {}", manifest.completed(), manifest.run_hash);
        }
    }
    Ok(())
}

fn preprocess(args: PreprocessArgs) -> Result<()> {
    let mut frame = load_csv(&args.input, &args.columns)?;
    if !args.columns.is_empty() {
        frame = frame.select(&args.columns)?;
    }
    let config = PreprocessConfig {
        max_gap: args.max_gap,
        outlier_window: args.outlier_window,
        outlier_sigmas: args.outlier_sigmas,
        smooth_window: args.smooth_window,
    };
    clean(&frame, &config)?.write_csv(&args.output)
}

fn screen(args: ScreenArgs) -> Result<()> {
    let frame = load(&args.input)?;
    let candidates = if args.candidates.is_empty() { others(&frame, &args.target) } else { args.candidates };
    let config = ScreenConfig {
        history_len: args.history_len,
        predictor_kind: args.predictor,
        alpha: args.alpha,
        seed: args.seed,
        conditioning: args.conditioning.map_or(ConditioningPolicy::Mutual, ConditioningPolicy::Fixed),
    };
    let report = screen_all(&frame, &args.target, &candidates, &config)?;
    log::info!("retained {:?}", report.retained());
    write(&args.output, report.to_json()?)
}

fn delay(args: DelayArgs) -> Result<()> {
    let frame = load(&args.input)?;
    let variables = match (&args.causal_report, args.variables.is_empty()) {
        (Some(path), _) => CausalReport::from_json(&read(path)?)?.retained().into_iter().map(str::to_string).collect(),
        (None, true) => others(&frame, &args.target),
        (None, false) => args.variables.clone(),
    };
    let options = DelayOptions { allow_negative: args.allow_negative };
    let table = build_delay_table_with(&frame, &args.target, &variables, args.max_lag, options)?;
    for e in &table.entries {
        println!("{}\t{}\t{:.4}", e.variable, e.optimal_lag, e.peak_value);
    }
    for f in &table.failures {
        log::warn!("{}: {}", f.variable, f.error);
    }
    if let (true, Some(f)) = (table.entries.is_empty(), table.failures.first()) {
        return Err(Error::InsufficientData(format!("no variable could be scanned; {}: {}", f.variable, f.error)));
    }
    if let Some(path) = &args.profiles {
        table.write_profile_csv(path)?;
    }
    write(&args.output, table.to_json()?)
}

fn augment(args: AugmentArgs) -> Result<()> {
    let frame = load(&args.input)?;
    let mut table = DelayTable::from_json(&read(&args.delays)?)?;
    table.entries.retain(|e| e.optimal_lag > 0);
    let spec = AugmentSpec { keep_original: !args.drop_original, ..Default::default() };
    augment_with_lags(&frame, &table, &spec)?.write_csv(&args.output)
}

fn train_cmd(args: TrainArgs) -> Result<()> {
    let frame = load(&args.input)?;
    let features = if args.features.is_empty() { frame.names().map(str::to_string).collect() } else { args.features.clone() };
    let config = ModelConfig {
        window_len: args.window,
        n_features: features.len(),
        d_model: args.d_model,
        n_heads: args.heads,
        d_ff: args.d_ff,
        n_layers: args.layers,
        horizon: args.horizon,
        dropout: args.dropout,
        seed: args.seed,
    };
    config.validate()?;
    let tc = TrainConfig {
        learning_rate: args.lr,
        batch_size: args.batch_size,
        max_steps: args.steps,
        patience: args.patience,
        eval_every: args.eval_every,
        ..Default::default()
    };
    let spec = args.split.spec()?;
    let selected = frame.select(&features)?;
    let (n_train, _, _) = spec.lengths(selected.len());
    let (train_raw, val_raw, _) = split(&selected, &spec, args.window + args.horizon)?;
    let (_, scales) = standardize(&selected, 0..n_train)?;
    let train_ds = WindowDataset::from_frame(&scales.apply(&train_raw)?, &features, &args.target, args.window, args.horizon)?;
    let val_ds = WindowDataset::from_frame(&scales.apply(&val_raw)?, &features, &args.target, args.window, args.horizon)?;
    let (params, log) = train(args.model, &train_ds, &val_ds, &config, &tc)?;
    log::info!("best validation MSE {:.6} at step {}", log.entries.last().map_or(f64::NAN, |e| e.best_val_mse), log.best_step);
    let model = TrainedModel {
        name: args.model.name().to_string(),
        kind: args.model,
        config,
        params: Some(params),
        features,
        target: args.target,
    };
    if let Some(path) = &args.log {
        write(path, serde_json::to_string_pretty(&log)?)?;
    }
    Checkpoint::new(model, scales).save(&args.output)
}

/// The rows a checkpoint is evaluated on, standardized with its parameters.
fn test_rows(frame: &SeriesFrame, ck: &Checkpoint, split_arg: &SplitArg, all_rows: bool) -> Result<SeriesFrame> {
    let frame = if all_rows {
        frame.clone()
    } else {
        let (_, _, test) = split_arg.spec()?.lengths(frame.len());
        frame.slice(frame.len() - test..frame.len())?
    };
    ck.standardization.apply(&frame)
}

fn predict(args: PredictArgs) -> Result<()> {
    let ck = Checkpoint::load(&args.checkpoint)?;
    let frame = test_rows(&load(&args.input)?, &ck, &args.split, args.all_rows)?;
    let forecast = predict_horizon(&ck.model, &frame, &ck.standardization)?;
    let horizons: Vec<usize> = (1..=forecast.horizon).collect();
    write(&args.output, forecast_csv(&forecast, &horizons))
}

fn evaluate(args: EvaluateArgs) -> Result<()> {
    let frame = load(&args.input)?;
    let checkpoints = args.checkpoints.iter().map(Checkpoint::load).collect::<Result<Vec<_>>>()?;
    let first = checkpoints.first().ok_or(Error::EmptyInput)?;
    let test = test_rows(&frame, first, &args.split, false)?;
    let models: Vec<TrainedModel> = checkpoints.iter().map(|c| c.model.clone()).collect();
    let (report, forecasts) = evaluate_with_forecasts(&models, &test, &first.standardization, &args.horizons)?;
    for f in &report.failures {
        log::warn!("{} at horizon {}: {}", f.model, f.horizon, f.error);
    }
    print!("{}", report.to_csv_string());
    write(&args.output, report.to_csv_string())?;
    if let Some(path) = &args.json {
        write(path, report.to_json()?)?;
    }
    if let Some(dir) = &args.plots {
        for (name, forecast) in &forecasts {
            write(&dir.join(format!("forecasts/{name}.csv")), forecast_csv(forecast, &args.horizons))?;
            render_plots(dir, name, forecast, args.horizons[0].min(forecast.horizon))?;
        }
    }
    Ok(())
}

fn synth(args: SynthArgs) -> Result<()> {
    let (frame, truth) = match (&args.preset, &args.spec) {
        (Some(name), _) if name == "var-benchmark" => {
            let (n_vars, edges) = screening_benchmark();
            let (frame, edges) = generate_var_system(n_vars, &edges, args.n_samples, args.seed)?;
            (frame, serde_json::to_string_pretty(&edges)?)
        }
        (Some(name), _) => {
            let (frame, truth) = generate(&preset(name, args.seed, args.n_samples)?)?;
            (frame, truth.to_json()?)
        }
        (None, Some(path)) => {
            let spec: GeneratorSpec = serde_json::from_str(&read(path)?).map_err(|e| Error::InvalidSpec(e.to_string()))?;
            let (frame, truth) = generate(&spec)?;
            (frame, truth.to_json()?)
        }
        (None, None) => return Err(Error::Config("synth needs --preset or --spec".into())),
    };
    frame.write_csv(&args.output)?;
    match &args.truth {
        Some(path) => write(path, truth),
        None => {
            println!("{truth}");
            Ok(())
        }
    }
}

fn report(args: ReportArgs) -> Result<()> {
    let columns = read_forecast_csv(&args.forecast)?;
    let (_, targets, predictions) = columns
        .into_iter()
        .find(|(h, _, _)| *h == args.horizon)
        .ok_or_else(|| Error::Config(format!("horizon {} is not in {}", args.horizon, args.forecast.display())))?;
    let name = args.name.clone().unwrap_or_else(|| {
        args.forecast.file_stem().map_or("model".into(), |s| s.to_string_lossy().into_owned())
    });
    for path in render_columns(&args.out_dir, &name, args.horizon, &targets, &predictions)? {
        println!("{}", args.out_dir.join(path).display());
    }
    Ok(())
}

fn exit_code(kind: ErrorKind) -> u8 {
    match kind {
        ErrorKind::Config => 2,
        ErrorKind::Data => 3,
        ErrorKind::Stage => 4,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("DRUMLEVEL_LOG", "info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(a) => run(a),
        Command::Preprocess(a) => preprocess(a),
        Command::Screen(a) => screen(a),
        Command::Delay(a) => delay(a),
        Command::Augment(a) => augment(a),
        Command::Train(a) => train_cmd(a),
        Command::Predict(a) => predict(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Synth(a) => synth(a),
        Command::Report(a) => report(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(e.kind()))
        }
    }
}
