mod manifest;
mod plot;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use hemo::error::{HemoError, Result};
use hemo::metrics::{evaluate, observe_records, CalibrationReport, EvalOptions, SnrMode};
use hemo::npe::{finetune_hybrid, train, LabeledData, ModelConfig, PosteriorEstimator, TrainConfig};
use hemo::population::{generate_dataset, read_dataset, GenerateOptions, PriorSpec, Range, BIOMARKERS};
use hemo::signal::{read_finalized, Bandpass, FinalizeOptions, FinalizedDataset, Modality, NoiseSpec, Split, FINALIZED_METADATA};
use hemo::solver::{run_simulation, write_result_binary, write_result_csv, ProbeRequest, SolverConfig};
use hemo::vascular::{read_network, reference_network, ArterialNetwork, HeartFunction};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use manifest::Recorder;

#[derive(Parser)]
#[command(name = "hemo", version, about = "Pulse-wave simulation, in-silico datasets and posterior estimation of hemodynamic biomarkers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one network and write probe time series.
    Simulate(SimulateArgs),
    /// Generate or finalize datasets.
    #[command(subcommand)]
    Dataset(DatasetCommand),
    /// Train a posterior estimator on a finalized dataset.
    Train(TrainArgs),
    /// Fine-tune the encoder on a calibration set with the flow frozen.
    Finetune(FinetuneArgs),
    /// Draw posterior samples for one segment.
    Infer(InferArgs),
    /// Audit a model on a finalized dataset split.
    Eval(EvalArgs),
    /// Render CSV and SVG figures from an evaluation report.
    Plot(PlotArgs),
}

#[derive(Subcommand)]
enum DatasetCommand {
    /// Sample, simulate and filter virtual subjects into chunked raw records.
    Generate(GenerateArgs),
    /// Crop, add measurement noise, bandpass and split a raw dataset.
    Finalize(FinalizeArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// Network JSON; the built-in reference network when omitted.
    #[arg(long)]
    network: Option<PathBuf>,
    /// Heart-function JSON (SI units).
    #[arg(long)]
    heart: PathBuf,
    /// JSON list of probes.
    #[arg(long)]
    probes: PathBuf,
    /// Solver configuration JSON.
    #[arg(long)]
    solver: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "binary")]
    format: OutputFormat,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum OutputFormat {
    Binary,
    Csv,
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    n: usize,
    #[arg(long)]
    seed: u64,
    /// Prior JSON; defaults when omitted.
    #[arg(long)]
    prior: Option<PathBuf>,
    #[arg(long)]
    network: Option<PathBuf>,
    /// Generation options JSON (solver, filter, measurement sites).
    #[arg(long)]
    options: Option<PathBuf>,
    #[arg(long, default_value_t = 256)]
    chunk_size: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct FinalizeArgs {
    #[arg(long = "in")]
    input: PathBuf,
    /// Noise specification JSON; the stochastic default when omitted.
    #[arg(long)]
    noise: Option<PathBuf>,
    /// Skip all measurement noise.
    #[arg(long, conflicts_with = "noise")]
    clean: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    segments_per_subject: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    /// Training job JSON: `model`, `train` and `modality`.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_parser = parse_modality)]
    modality: Option<Modality>,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct FinetuneArgs {
    #[arg(long)]
    model: PathBuf,
    /// Finalized dataset whose training split is the calibration set.
    #[arg(long)]
    calibration: PathBuf,
    /// Finalized synthetic dataset (training and validation splits).
    #[arg(long)]
    data: PathBuf,
    /// TrainConfig JSON.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct InferArgs {
    #[arg(long)]
    model: PathBuf,
    /// Text file with one segment: numbers separated by commas or whitespace.
    #[arg(long)]
    segment: PathBuf,
    /// Apply the bandpass first (for unprocessed crops).
    #[arg(long)]
    raw: bool,
    #[arg(long)]
    age: f64,
    #[arg(long, default_value_t = 10_000)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "0.68,0.95")]
    levels: Vec<f64>,
    #[arg(long, value_parser = parse_split, default_value = "test")]
    split: Split,
    /// Re-noise clean crops at these SNRs (dB) instead of using stored segments.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    snr_levels: Option<Vec<f64>>,
    /// Lower SNR bin edges for stored segments.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    snr_edges: Option<Vec<f64>>,
    #[arg(long, default_value_t = 1000)]
    samples: usize,
    /// Prior JSON fixing the SCI grid for HR, CO and LVET.
    #[arg(long)]
    prior: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    plots: Option<PathBuf>,
}

#[derive(Args)]
struct PlotArgs {
    #[arg(long)]
    report: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default)]
struct TrainJob {
    model: ModelConfig,
    train: TrainConfig,
    modality: Option<Modality>,
}

#[derive(Debug, Serialize, Deserialize)]
struct EvalReport {
    model: String,
    label: String,
    modality: Modality,
    split: String,
    snr_mode: SnrMode,
    #[serde(flatten)]
    report: CalibrationReport,
}

fn parse_modality(s: &str) -> std::result::Result<Modality, String> {
    s.parse().map_err(|e: HemoError| e.to_string())
}

fn parse_split(s: &str) -> std::result::Result<Split, String> {
    match s {
        "train" => Ok(Split::Train),
        "validation" | "val" => Ok(Split::Validation),
        "test" => Ok(Split::Test),
        _ => Err(format!("unknown split '{s}' (train, validation, test)")),
    }
}

fn split_name(s: Split) -> &'static str {
    match s {
        Split::Train => "train",
        Split::Validation => "validation",
        Split::Test => "test",
    }
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| HemoError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| HemoError::format(path, e.to_string()))
}

fn read_json_or_default<T: DeserializeOwned + Default>(path: Option<&PathBuf>) -> Result<T> {
    path.map_or_else(|| Ok(T::default()), |p| read_json(p))
}

fn load_network(path: Option<&PathBuf>) -> Result<ArterialNetwork> {
    path.map_or_else(|| Ok(reference_network()), read_network)
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| HemoError::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    std::fs::write(path, text).map_err(|e| HemoError::io(path, e))
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).unwrap_or(Value::Null)
}

/// Noise-free datasets are labeled clean, anything else stochastic.
fn noise_label(data: &FinalizedDataset) -> &'static str {
    let n = &data.metadata.options.noise;
    if n.p_additive == 0.0 && n.p_flip == 0.0 {
        "clean"
    } else {
        "stochastic"
    }
}

fn model_modality(est: &PosteriorEstimator<f32>) -> Result<Modality> {
    est.label
        .split('/')
        .next()
        .and_then(|m| m.parse().ok())
        .ok_or_else(|| HemoError::domain("cli", format!("model label '{}' does not name a modality", est.label)))
}

fn labeled(data: &FinalizedDataset, m: Modality, split: Split) -> LabeledData {
    LabeledData::from_segments(&data.split(m, split))
}

fn simulate(a: &SimulateArgs) -> Result<()> {
    let net = load_network(a.network.as_ref())?;
    let hf: HeartFunction = read_json(&a.heart)?;
    let probes: Vec<ProbeRequest> = read_json(&a.probes)?;
    let cfg: SolverConfig = read_json_or_default(a.solver.as_ref())?;
    let mut rec = Recorder::new("simulate", json!({ "heart": hf, "probes": probes, "solver": cfg }), vec![]);
    if let Some(n) = &a.network {
        rec.input(n)?;
    }
    let result = run_simulation(&net, &hf, &cfg, &probes)?;
    if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    match a.format {
        OutputFormat::Binary => write_result_binary(&result, &a.out)?,
        OutputFormat::Csv => write_result_csv(&result, &a.out)?,
    }
    let summary = json!({
        "converged": result.converged,
        "beats_simulated": result.beats_simulated,
        "max_beat_delta_pa": result.max_beat_delta,
        "relative_mass_drift": result.mass.relative_drift(),
    });
    rec.finish(&a.out, &[], summary)?;
    Ok(())
}

fn dataset_generate(a: &GenerateArgs) -> Result<()> {
    let prior: PriorSpec = read_json_or_default(a.prior.as_ref())?;
    let opts: GenerateOptions = read_json_or_default(a.options.as_ref())?;
    let net = load_network(a.network.as_ref())?;
    let config = json!({ "n": a.n, "chunk_size": a.chunk_size, "prior": prior, "options": opts });
    let mut rec = Recorder::new("dataset generate", config, vec![a.seed]);
    for p in [&a.prior, &a.network, &a.options].into_iter().flatten() {
        rec.input(p)?;
    }
    let meta = generate_dataset(&a.out, a.n, a.chunk_size, &prior, &net, &opts, a.seed)?;
    let mut outputs = vec![a.out.join("metadata.json")];
    outputs.extend(meta.chunks.iter().map(|c| a.out.join(&c.file)));
    let summary = json!({ "attempted": meta.attempted, "accepted": meta.accepted, "failures": meta.failures });
    rec.finish(&a.out, &outputs, summary)?;
    eprintln!("accepted {} of {} subjects ({} failures)", meta.accepted, meta.attempted, meta.failures);
    Ok(())
}

fn dataset_finalize(a: &FinalizeArgs) -> Result<()> {
    let noise = if a.clean { NoiseSpec::clean() } else { read_json_or_default(a.noise.as_ref())? };
    let opts = FinalizeOptions {
        noise,
        seed: a.seed,
        segments_per_subject: a.segments_per_subject,
        ..Default::default()
    };
    let mut rec = Recorder::new("dataset finalize", to_value(&opts), vec![a.seed]);
    rec.input(&a.input)?;
    if let Some(n) = &a.noise {
        rec.input(n)?;
    }
    let raw = read_dataset(&a.input)?;
    let source = manifest::sha256_file(&a.input.join("metadata.json"))?;
    let meta = hemo::signal::finalize_dataset(&raw, Some(source), &a.out, &opts)?;
    let mut outputs = vec![a.out.join(FINALIZED_METADATA)];
    outputs.extend(meta.files.values().map(|f| a.out.join(&f.file)));
    let summary = json!({
        "subjects": raw.records.len(),
        "train": meta.split.train.len(),
        "validation": meta.split.validation.len(),
        "test": meta.split.test.len(),
    });
    rec.finish(&a.out, &outputs, summary)?;
    Ok(())
}

fn train_cmd(a: &TrainArgs) -> Result<()> {
    let job: TrainJob = read_json_or_default(a.config.as_ref())?;
    let modality = a.modality.or(job.modality).unwrap_or(Modality::Apw);
    let mut rec = Recorder::new("train", to_value(&job), vec![a.seed]);
    rec.input(&a.data)?;
    if let Some(c) = &a.config {
        rec.input(c)?;
    }
    let data = read_finalized(&a.data)?;
    let tr = labeled(&data, modality, Split::Train);
    let va = labeled(&data, modality, Split::Validation);
    let (mut est, report) = train::<f32>(&tr, &va, &job.model, &job.train, a.seed)?;
    est.label = format!("{}/{}", modality.name(), noise_label(&data));
    if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    est.save(&a.out)?;
    let summary = json!({
        "label": est.label,
        "train_examples": tr.len(),
        "validation_examples": va.len(),
        "best_epoch": report.best_epoch,
        "best_val_loss": report.best_val_loss,
        "initial_val_loss": report.initial_val_loss,
        "epochs_run": report.epochs_run,
        "train_loss": report.train_loss,
        "val_loss": report.val_loss,
    });
    rec.finish(&a.out, &[], summary)?;
    eprintln!("best validation NLL {:.4} at epoch {:?}", report.best_val_loss, report.best_epoch);
    Ok(())
}

fn finetune_cmd(a: &FinetuneArgs) -> Result<()> {
    let tc: TrainConfig = read_json_or_default(a.config.as_ref())?;
    let mut rec = Recorder::new("finetune", to_value(&tc), vec![a.seed]);
    for p in [&a.model, &a.calibration, &a.data] {
        rec.input(p)?;
    }
    let base = PosteriorEstimator::<f32>::load(&a.model)?;
    let modality = model_modality(&base)?;
    let cal = read_finalized(&a.calibration)?;
    let syn = read_finalized(&a.data)?;
    let (mut tuned, report) = finetune_hybrid(
        &base,
        &labeled(&cal, modality, Split::Train),
        &labeled(&syn, modality, Split::Train),
        &labeled(&syn, modality, Split::Validation),
        &tc,
        a.seed,
    )?;
    tuned.label = format!("{}/finetuned", base.label);
    tuned.save(&a.out)?;
    let summary = json!({
        "best_epoch": report.best_epoch,
        "initial_selection_loss": report.initial_val_loss,
        "best_selection_loss": report.best_val_loss,
    });
    rec.finish(&a.out, &[], summary)?;
    Ok(())
}

fn read_segment(path: &Path) -> Result<Vec<f64>> {
    let text = std::fs::read_to_string(path).map_err(|e| HemoError::io(path, e))?;
    text.split(|c: char| c == ',' || c.is_whitespace())
        .filter(|t| !t.is_empty())
        .map(|t| t.parse::<f64>().map_err(|e| HemoError::format(path, format!("'{t}': {e}"))))
        .collect()
}

fn infer_cmd(a: &InferArgs) -> Result<()> {
    let est = PosteriorEstimator::<f32>::load(&a.model)?;
    let mut segment = read_segment(&a.segment)?;
    if a.raw {
        segment = Bandpass::standard().filtfilt(&segment);
    }
    let mut rec = Recorder::new("infer", json!({ "age": a.age, "samples": a.samples, "raw": a.raw }), vec![a.seed]);
    rec.input(&a.model)?;
    rec.input(&a.segment)?;
    let draws = est.sample(&segment, a.age, a.samples, a.seed)?;
    let mut csv = String::from("HR_bpm,CO_L_per_min,SVR_Pa_s_per_m3,LVET_ms\n");
    for row in draws.rows() {
        let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        csv.push_str(&cells.join(","));
        csv.push('\n');
    }
    write_text(&a.out, &csv)?;
    let means: Vec<f64> = (0..draws.ncols()).map(|j| draws.column(j).mean().unwrap_or(f64::NAN)).collect();
    rec.finish(&a.out, &[], json!({ "posterior_mean": means }))?;
    Ok(())
}

/// SCI grids: prior support for HR, CO and LVET; training-label range for SVR.
fn sci_ranges(prior: &PriorSpec, data: &FinalizedDataset, m: Modality) -> Vec<(f64, f64)> {
    let svr: Vec<f64> = data.split(m, Split::Train).iter().map(|r| r.biomarkers[2]).collect();
    let lo = svr.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = svr.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let svr = if hi > lo { Range::new(lo, hi) } else { Range::new(lo - 1.0, lo + 1.0) };
    prior.biomarker_ranges(svr).iter().map(|r| (r.low, r.high)).collect()
}

fn eval_cmd(a: &EvalArgs) -> Result<()> {
    let est = PosteriorEstimator::<f32>::load(&a.model)?;
    let modality = model_modality(&est)?;
    let prior: PriorSpec = read_json_or_default(a.prior.as_ref())?;
    let data = read_finalized(&a.data)?;
    let mode = match &a.snr_levels {
        Some(levels) => SnrMode::Levels {
            levels: levels.clone(),
            red_coefficient: data.metadata.options.noise.red_coefficient,
        },
        None => SnrMode::Stored,
    };
    let mut opts = EvalOptions {
        levels: a.levels.clone(),
        seed: a.seed,
        ..Default::default()
    };
    match (&mode, &a.snr_edges) {
        (_, Some(edges)) => opts.snr_edges = edges.clone(),
        (SnrMode::Levels { levels, .. }, None) => {
            let mut l = levels.clone();
            l.sort_by(f64::total_cmp);
            opts.snr_edges = l.iter().map(|v| v - 1e-9).collect();
        }
        _ => {}
    }
    let config = json!({ "options": opts, "snr_mode": mode, "samples": a.samples, "split": split_name(a.split) });
    let mut rec = Recorder::new("eval", config, vec![a.seed]);
    rec.input(&a.model)?;
    rec.input(&a.data)?;
    let records = data.split(modality, a.split);
    if records.is_empty() {
        return Err(HemoError::domain("metrics", format!("split '{}' has no {} records", split_name(a.split), modality.name())));
    }
    let obs = observe_records(&est, &records, modality, &mode, a.samples, a.seed)?;
    let names: Vec<String> = BIOMARKERS.iter().map(|s| s.to_string()).collect();
    let report = evaluate(&obs, &names, &sci_ranges(&prior, &data, modality), &opts)?;
    let full = EvalReport {
        model: a.model.display().to_string(),
        label: est.label.clone(),
        modality,
        split: split_name(a.split).into(),
        snr_mode: mode,
        report,
    };
    write_text(&a.out, &serde_json::to_string_pretty(&full)?)?;
    let summary: Value = full
        .report
        .biomarkers
        .iter()
        .map(|b| (b.name.clone(), json!({ "mae": b.mae, "acauc": b.acauc })))
        .collect::<serde_json::Map<_, _>>()
        .into();
    rec.finish(&a.out, &[], summary)?;
    if let Some(dir) = &a.plots {
        plot_to(&a.out, &full.report, dir)?;
    }
    Ok(())
}

fn plot_to(report_path: &Path, report: &CalibrationReport, dir: &Path) -> Result<()> {
    let mut rec = Recorder::new("plot", Value::Null, vec![]);
    rec.input(report_path)?;
    let files = plot::report_plots(report, dir)?;
    rec.finish(dir, &files, Value::Null)?;
    Ok(())
}

fn plot_cmd(a: &PlotArgs) -> Result<()> {
    let full: EvalReport = read_json(&a.report)?;
    plot_to(&a.report, &full.report, &a.out)
}

/// `HEMO_THREADS` sets the worker count; `HEMO_DETERMINISTIC=1` forces one
/// worker so every reduction runs serially.
fn configure_threads() -> Result<()> {
    let deterministic = std::env::var("HEMO_DETERMINISTIC").is_ok_and(|v| v == "1");
    let threads = match std::env::var("HEMO_THREADS") {
        Ok(v) => Some(
            v.parse::<usize>()
                .ok()
                .filter(|&n| n > 0)
                .ok_or_else(|| HemoError::domain("cli", format!("HEMO_THREADS='{v}' is not a positive integer")))?,
        ),
        Err(_) => None,
    };
    let n = if deterministic { Some(1) } else { threads };
    if let Some(n) = n {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| HemoError::domain("cli", e.to_string()))?;
    }
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    configure_threads()?;
    match &cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Dataset(DatasetCommand::Generate(a)) => dataset_generate(a),
        Command::Dataset(DatasetCommand::Finalize(a)) => dataset_finalize(a),
        Command::Train(a) => train_cmd(a),
        Command::Finetune(a) => finetune_cmd(a),
        Command::Infer(a) => infer_cmd(a),
        Command::Eval(a) => eval_cmd(a),
        Command::Plot(a) => plot_cmd(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            eprintln!("ERROR:{}:{}: {msg}", e.module(), e.code());
            ExitCode::from(1)
        }
    }
}
