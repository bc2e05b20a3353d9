mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use chlorocast::autodiff::Tensor;
use chlorocast::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointMeta};
use chlorocast::data::{
    format_timestamp, interpolate_linear, load_csv, minmax_fit_transform, train_row_span, write_csv,
    NormalizationStats, TimeSeriesFrame,
};
use chlorocast::decomposition::{decompose, SpectralFilter, DEFAULT_AVG_WINDOW, DEFAULT_TOPK};
use chlorocast::evaluation::{
    compute_metrics, config_hash, run_experiment, test_predictions, write_trace_csv, AblationVariant, ExperimentArm,
    ExperimentData, ExperimentSettings, MetricScale,
};
use chlorocast::graph::adjacency_matrix;
use chlorocast::model::{predict, prepare_batch};
use chlorocast::pipeline::{build_splits, preprocess};
use chlorocast::synthetic::{generate_synthetic, BUNDLED};
use chlorocast::train::{train_with_options, PreparedSplit, TrainOptions};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use config::{pick_path, RunConfig};

/// Multi-step chlorophyll forecasting from water-quality sensor series.
#[derive(Parser)]
#[command(name = "chlorocast", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Screen outliers, fill gaps, downsample, select features; writes the cleaned CSV.
    Preprocess(PreprocessArgs),
    /// Split one column into trend, raw period and filtered period.
    Decompose(DecomposeArgs),
    /// Fit a model on a cleaned CSV and write a checkpoint.
    Train(TrainArgs),
    /// Forecast the steps after the last input window of a CSV.
    Predict(PredictArgs),
    /// Score a checkpoint on the test windows of a CSV.
    Evaluate(EvaluateArgs),
    /// Train several model variants per horizon and seed and report test metrics.
    Ablate(AblateArgs),
    /// Write a seeded synthetic water-quality series; the defaults give the bundled dataset.
    GenerateSynthetic(SyntheticArgs),
    /// Dump the learned node adjacency of each graph layer.
    InspectGraph(InspectArgs),
}

/// Model overrides shared by `preprocess`, `train` and `ablate`; each wins over the config file.
#[derive(Args)]
struct ModelOverrides {
    /// JSON run configuration; omitted keys take the reference defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Input window length [default: 72].
    #[arg(long)]
    input_len: Option<usize>,
    /// Target column [default: Chl].
    #[arg(long)]
    target: Option<String>,
    /// Training epochs [default: 300].
    #[arg(long)]
    epochs: Option<usize>,
    /// Mini-batch size [default: 128].
    #[arg(long)]
    batch_size: Option<usize>,
    /// Adam learning rate [default: 0.001].
    #[arg(long)]
    learning_rate: Option<f64>,
}

impl ModelOverrides {
    fn load(&self) -> Result<RunConfig> {
        let mut cfg = RunConfig::load(self.config.as_deref())?;
        let m = &mut cfg.model;
        if let Some(v) = self.input_len {
            m.input_len = v;
        }
        if let Some(v) = self.epochs {
            m.epochs = v;
        }
        if let Some(v) = self.batch_size {
            m.batch_size = v;
        }
        if let Some(v) = self.learning_rate {
            m.learning_rate = v;
        }
        if let Some(v) = &self.target {
            cfg.pipeline.target = v.clone();
        }
        Ok(cfg)
    }
}

#[derive(Args)]
struct PreprocessArgs {
    /// Raw sensor CSV (first column is the timestamp).
    #[arg(long = "in")]
    input: Option<PathBuf>,
    /// Cleaned CSV, selected columns in raw units with the target first.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write the training-span min-max statistics here as JSON.
    #[arg(long)]
    stats: Option<PathBuf>,
    /// Horizon whose training span drives selection and scaling [default: 24].
    #[arg(long)]
    horizon: Option<usize>,
    #[command(flatten)]
    model: ModelOverrides,
}

#[derive(Args)]
struct DecomposeArgs {
    /// CSV holding the column.
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    column: String,
    /// CSV with columns t, original, trend, raw_period, pure_period.
    #[arg(long)]
    out: PathBuf,
    /// Moving-average window.
    #[arg(long, default_value_t = DEFAULT_AVG_WINDOW)]
    window: usize,
    /// Frequency components kept by the spectral filter.
    #[arg(long, default_value_t = DEFAULT_TOPK)]
    topk: usize,
}

#[derive(Args)]
struct TrainArgs {
    /// Cleaned CSV from `preprocess`.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Seed for initialisation and shuffling [default: 0].
    #[arg(long)]
    seed: Option<u64>,
    /// Forecast horizon [default: 24].
    #[arg(long)]
    horizon: Option<usize>,
    /// Module set, model1..model6 [default: model6, the full model].
    #[arg(long, value_parser = parse_variant)]
    variant: Option<AblationVariant>,
    /// Per-epoch losses as CSV.
    #[arg(long)]
    history: Option<PathBuf>,
    /// Print one line per epoch to stderr.
    #[arg(long)]
    verbose: bool,
    #[command(flatten)]
    model: ModelOverrides,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// CSV holding at least one input window of the checkpoint's features.
    #[arg(long)]
    data: PathBuf,
    /// CSV with columns step, t, y_hat in raw units.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Cleaned CSV; the checkpoint's split fractions pick the test windows.
    #[arg(long)]
    data: PathBuf,
    /// JSON report with MAE, RMSE and MAPE for the checkpoint's horizon.
    #[arg(long)]
    out: PathBuf,
    /// Score denormalised values (the default).
    #[arg(long, conflicts_with = "normalized")]
    raw_scale: bool,
    /// Score values on the min-max scale.
    #[arg(long)]
    normalized: bool,
    /// Floor for MAPE denominators.
    #[arg(long, default_value_t = chlorocast::evaluation::DEFAULT_MAPE_EPSILON)]
    mape_epsilon: f64,
    /// CSV of t, y, y_hat for the last step of every test window.
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Protocol {
    /// Six module variants at the ablation horizons [default: 24].
    Ablation,
    /// Full model against the plain temporal convolution at 12/24/48/72 steps.
    HorizonSweep,
}

#[derive(Args)]
struct AblateArgs {
    /// Cleaned CSV from `preprocess`.
    #[arg(long)]
    data: Option<PathBuf>,
    /// JSON report.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write a model-by-horizon metrics table as CSV.
    #[arg(long)]
    table: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Protocol::Ablation)]
    protocol: Protocol,
    /// Comma-separated horizons [default: 24, or 12,24,48,72 for the sweep].
    #[arg(long, value_delimiter = ',')]
    horizons: Option<Vec<usize>>,
    /// Comma-separated seeds; medians are taken over them [default: 0,1,2].
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Comma-separated variants for the ablation [default: model1..model6].
    #[arg(long, value_delimiter = ',', value_parser = parse_variant)]
    variants: Option<Vec<AblationVariant>>,
    /// Cells trained concurrently [default: 1].
    #[arg(long)]
    workers: Option<usize>,
    /// CSV of externally computed rows (variant,horizon,mae,rmse,mape) to carry in the report.
    #[arg(long)]
    external: Option<PathBuf>,
    /// Score on the min-max scale instead of raw units.
    #[arg(long)]
    normalized: bool,
    #[command(flatten)]
    model: ModelOverrides,
}

#[derive(Args)]
struct SyntheticArgs {
    #[arg(long, default_value_t = BUNDLED.n_steps)]
    steps: usize,
    #[arg(long, default_value_t = BUNDLED.n_features)]
    features: usize,
    #[arg(long, default_value_t = BUNDLED.seed)]
    seed: u64,
    /// Strength of the lagged cross-feature drive on the target.
    #[arg(long, default_value_t = BUNDLED.coupling)]
    coupling: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct InspectArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// JSON with the feature order and one row-stochastic matrix per layer.
    #[arg(long)]
    out: PathBuf,
}

fn parse_variant(s: &str) -> std::result::Result<AblationVariant, String> {
    AblationVariant::parse(s).map_err(|e| e.to_string())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Preprocess(a) => cmd_preprocess(a),
        Command::Decompose(a) => cmd_decompose(a),
        Command::Train(a) => cmd_train(a),
        Command::Predict(a) => cmd_predict(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Ablate(a) => cmd_ablate(a),
        Command::GenerateSynthetic(a) => cmd_synthetic(a),
        Command::InspectGraph(a) => cmd_inspect(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

/// Loads a CSV and fills any missing cells by time interpolation.
fn load_filled(path: &Path) -> Result<TimeSeriesFrame> {
    let frame = load_csv(path, None).with_context(|| format!("loading {}", path.display()))?;
    if frame.is_clean() {
        Ok(frame)
    } else {
        Ok(interpolate_linear(&frame)?)
    }
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

fn cmd_preprocess(a: PreprocessArgs) -> Result<()> {
    let cfg = a.model.load()?;
    let input = pick_path(a.input, &cfg.paths.data, "in")?;
    let out = pick_path(a.out, &cfg.paths.out, "out")?;
    let horizon = a.horizon.unwrap_or(cfg.model.horizon);
    let raw = load_csv(&input, None).with_context(|| format!("loading {}", input.display()))?;
    let pre = preprocess(&raw, &cfg.pipeline, cfg.model.input_len, horizon)?;
    write_csv(&pre.frame, &out, false)?;
    if let Some(path) = a.stats {
        write_json(&path, &pre.stats)?;
    }
    println!("{} rows, features: {}", pre.frame.len(), pre.features().join(", "));
    Ok(())
}

fn cmd_decompose(a: DecomposeArgs) -> Result<()> {
    let frame = load_filled(&a.input)?;
    let values = frame.column(&a.column)?.values.clone();
    let n = values.len();
    let window = Tensor::new(vec![n, 1], values.clone())?;
    let d = decompose(&window, a.window, a.topk, &SpectralFilter::new(n))?;
    let mut w = csv::Writer::from_path(&a.out).with_context(|| format!("writing {}", a.out.display()))?;
    w.write_record(["t", "original", "trend", "raw_period", "pure_period"])?;
    for i in 0..n {
        w.write_record([
            format_timestamp(&frame.timestamps()[i]),
            values[i].to_string(),
            d.trend.data()[i].to_string(),
            d.raw_period.data()[i].to_string(),
            d.pure_period.data()[i].to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let mut cfg = a.model.load()?;
    if let Some(s) = a.seed {
        cfg.model.seed = s;
    }
    if let Some(h) = a.horizon {
        cfg.model.horizon = h;
    }
    if let Some(v) = a.variant {
        cfg.model.modules = v.flags();
    }
    let data = pick_path(a.data, &cfg.paths.data, "data")?;
    let ckpt_path = pick_path(a.checkpoint, &cfg.paths.checkpoint, "checkpoint")?;
    let model = &cfg.model;
    let target = &cfg.pipeline.target;
    let split = cfg.pipeline.split;

    let frame = load_filled(&data)?;
    frame.column(target)?;
    let span = train_row_span(frame.len(), model.input_len, model.horizon, split)?;
    let stats = NormalizationStats::fit(&frame.slice_rows(0..span)?)?;
    let splits = build_splits(&frame, &stats, target, model.input_len, model.horizon, split)?;
    let out = train_with_options(
        &splits,
        model,
        &TrainOptions {
            stop_below: None,
            verbose: a.verbose,
        },
    )?;
    if let Some(path) = a.history {
        out.history.save_csv(&path)?;
    }
    let n_params = out.params.n_parameters();
    let ckpt = Checkpoint {
        meta: CheckpointMeta {
            config: model.clone(),
            features: frame.names(),
            target: target.clone(),
            split,
        },
        stats,
        params: out.params,
    };
    save_checkpoint(&ckpt, &ckpt_path)?;
    println!(
        "{n_params} parameters, {} training windows; best epoch {} with validation MSE {:.6}",
        splits.train.len(),
        out.best_epoch,
        out.best_val_loss
    );
    Ok(())
}

/// The checkpoint's feature columns of `path`, gap-filled.
fn load_for_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<TimeSeriesFrame> {
    Ok(load_filled(path)?.select(&ckpt.meta.features)?)
}

fn cmd_predict(a: PredictArgs) -> Result<()> {
    let ckpt = load_checkpoint(&a.checkpoint)?;
    let config = &ckpt.meta.config;
    let frame = load_for_checkpoint(&a.data, &ckpt)?;
    let n = frame.len();
    if n < config.input_len.max(2) {
        bail!("{} rows cannot fill a {}-step input window", n, config.input_len);
    }
    let (normalized, _) = minmax_fit_transform(&frame, Some(&ckpt.stats))?;
    let f = normalized.columns().len();
    let mut x = Vec::with_capacity(config.input_len * f);
    for row in n - config.input_len..n {
        x.extend(normalized.columns().iter().map(|c| c.values[row]));
    }
    let batch = prepare_batch(&Tensor::new(vec![1, config.input_len, f], x)?, config)?;
    let pred = predict(&ckpt.params, config, &batch)?;
    let mm = ckpt.stats.get(&ckpt.meta.target)?;
    let stamps = frame.timestamps();
    let dt = stamps[n - 1] - stamps[n - 2];
    let mut w = csv::Writer::from_path(&a.out).with_context(|| format!("writing {}", a.out.display()))?;
    w.write_record(["step", "t", "y_hat"])?;
    for (k, v) in pred.data().iter().enumerate() {
        let t = stamps[n - 1] + dt * (k as i32 + 1);
        w.write_record([(k + 1).to_string(), format_timestamp(&t), mm.invert(*v).to_string()])?;
    }
    w.flush()?;
    Ok(())
}

fn cmd_evaluate(a: EvaluateArgs) -> Result<()> {
    let ckpt = load_checkpoint(&a.checkpoint)?;
    let meta = &ckpt.meta;
    let config = &meta.config;
    let scale = if a.normalized { MetricScale::Normalized } else { MetricScale::Raw };
    let frame = load_for_checkpoint(&a.data, &ckpt)?;
    let splits = build_splits(&frame, &ckpt.stats, &meta.target, config.input_len, config.horizon, meta.split)?;
    let test = PreparedSplit::new(&splits.test, config)?;
    let (y, y_hat) = test_predictions(&ckpt.params, config, &test, &ckpt.stats, &meta.target, scale)?;
    let m = compute_metrics(&y, &y_hat, a.mape_epsilon)?;

    let report = json!({
        "meta": {
            "checkpoint": a.checkpoint.display().to_string(),
            "dataset": a.data.display().to_string(),
            "target": meta.target,
            "scale": scale,
            "test_windows": splits.test.len(),
            "config_hash": config_hash(config)?,
        },
        "metrics": {
            config.horizon.to_string(): { "mae": m.mae, "rmse": m.rmse, "mape": m.mape },
        },
    });
    write_json(&a.out, &report)?;
    if let Some(path) = a.trace {
        let h = config.horizon;
        let last = |v: &[f64]| v.chunks(h).map(|c| c[h - 1]).collect::<Vec<_>>();
        let stamps: Vec<String> = splits
            .test
            .starts()
            .iter()
            .map(|s| format_timestamp(&frame.timestamps()[s + config.input_len + h - 1]))
            .collect();
        let file = std::fs::File::create(&path).with_context(|| format!("writing {}", path.display()))?;
        write_trace_csv(file, &stamps, &last(&y), &last(&y_hat))?;
    }
    println!("horizon {}: MAE {:.4}  RMSE {:.4}  MAPE {:.4}", config.horizon, m.mae, m.rmse, m.mape);
    Ok(())
}

fn cmd_ablate(a: AblateArgs) -> Result<()> {
    let cfg = a.model.load()?;
    let data = pick_path(a.data, &cfg.paths.data, "data")?;
    let out = pick_path(a.out, &cfg.paths.out, "out")?;
    let ab = &cfg.ablation;
    let (arms, horizons, protocol) = match a.protocol {
        Protocol::Ablation => {
            let variants = a.variants.unwrap_or_else(|| ab.variants.clone());
            let arms = variants.into_iter().map(ExperimentArm::ablation).collect();
            (arms, a.horizons.unwrap_or_else(|| ab.horizons.clone()), "ablation")
        }
        Protocol::HorizonSweep => {
            if a.variants.is_some() {
                bail!("--variants applies to the ablation protocol only");
            }
            let horizons = a.horizons.unwrap_or_else(|| ab.sweep_horizons.clone());
            (ExperimentArm::horizon_pair(), horizons, "horizon-sweep")
        }
    };
    let Some(&max_h) = horizons.iter().max() else {
        bail!("no horizons requested");
    };
    let frame = load_filled(&data)?;
    let id = data.file_stem().map_or_else(|| "data".into(), |s| s.to_string_lossy().into_owned());
    let exp = ExperimentData::from_clean(id, frame, &cfg.pipeline.target, cfg.model.input_len, max_h, cfg.pipeline.split)?;
    let settings = ExperimentSettings {
        base: cfg.model.clone(),
        arms,
        horizons,
        seeds: a.seeds.unwrap_or_else(|| ab.seeds.clone()),
        scale: if a.normalized { MetricScale::Normalized } else { cfg.scale },
        mape_epsilon: cfg.mape_epsilon,
        workers: a.workers.unwrap_or(ab.workers),
        protocol: protocol.into(),
    };
    let mut report = run_experiment(&exp, &settings)?;
    if let Some(path) = a.external {
        report.add_external_csv(&path)?;
    }
    write_json(&out, &report)?;
    if let Some(path) = a.table {
        let file = std::fs::File::create(&path).with_context(|| format!("writing {}", path.display()))?;
        report.write_table_csv(file)?;
    }
    for c in report.cells.iter().filter(|c| !c.external) {
        match c.mae {
            Some(mae) => println!("{:8} h={:<3} median MAE {:.4} over {} seeds", c.variant, c.horizon, mae, c.seed_aggregate.completed),
            None => println!("{:8} h={:<3} every seed failed", c.variant, c.horizon),
        }
        for f in &c.failures {
            eprintln!("{} h={} seed {}: {}", c.variant, c.horizon, f.seed, f.error);
        }
    }
    Ok(())
}

fn cmd_synthetic(a: SyntheticArgs) -> Result<()> {
    let frame = generate_synthetic(a.steps, a.features, a.seed, a.coupling)?;
    write_csv(&frame, &a.out, false)?;
    Ok(())
}

fn cmd_inspect(a: InspectArgs) -> Result<()> {
    let ckpt = load_checkpoint(&a.checkpoint)?;
    if ckpt.params.gcn.is_empty() {
        bail!("checkpoint has no graph layers");
    }
    let layers = ckpt
        .params
        .gcn
        .iter()
        .enumerate()
        .map(|(i, g)| {
            let adj = adjacency_matrix(&g.embed_a)?;
            let n = adj.shape()[0];
            let rows: Vec<&[f64]> = adj.data().chunks(n).collect();
            Ok(json!({ "layer": i, "adjacency": rows }))
        })
        .collect::<Result<Vec<_>>>()?;
    write_json(&a.out, &json!({ "features": ckpt.meta.features, "layers": layers }))
}
