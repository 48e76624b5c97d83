//! `sslse`: simulate data, train and fine-tune enhancers, enhance audio and
//! evaluate or sweep the multitask weight.

mod commands;
mod data;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use sslse::config::GlobalConfig;
use sslse::losses::LossKind;
use sslse::Error;

#[derive(Debug, Parser)]
#[command(name = "sslse", version, about = "Speech enhancement with SSL-feature multitask losses")]
struct Cli {
    /// Experiment configuration (TOML). Defaults apply when omitted.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Working directory; overrides `paths.work_dir`.
    #[arg(long, global = true, env = "SSLSE_WORKDIR", value_name = "DIR")]
    work_dir: Option<PathBuf>,
    /// Experiment seed; overrides `seed`.
    #[arg(long, global = true, env = "SSLSE_SEED")]
    seed: Option<u64>,
    /// Evaluation threads; 1 is the reproducible setting.
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Synthesize mixtures and write WAV files plus a manifest.
    Simulate(SimulateArgs),
    /// SNR-loss pre-training.
    Train(TrainArgs),
    /// Multitask fine-tuning from a pre-trained checkpoint.
    Finetune(FinetuneArgs),
    /// Enhance WAV files, a directory or a manifest, with observation adding.
    Enhance(EnhanceArgs),
    /// Score a system on the evaluation set at several OA ratios.
    Evaluate(EvaluateArgs),
    /// Fine-tune once per α and report every model.
    Sweep(SweepArgs),
    /// Print a report and redraw its plots.
    Report(ReportArgs),
    /// Print the effective configuration as TOML.
    ShowConfig,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    /// Number of mixtures [default: signal.train_count].
    #[arg(long)]
    count: Option<usize>,
    /// Lowest mixing SNR in dB [default: signal.train_snr_db].
    #[arg(long, allow_negative_numbers = true)]
    snr_lo: Option<f64>,
    /// Highest mixing SNR in dB [default: signal.train_snr_db].
    #[arg(long, allow_negative_numbers = true)]
    snr_hi: Option<f64>,
    /// Output directory [default: <work_dir>/data].
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// Maximum epochs [default: training.pretrain.max_epochs].
    #[arg(long)]
    epochs: Option<usize>,
    /// Output directory [default: <work_dir>/pretrain].
    #[arg(long)]
    out: Option<PathBuf>,
    /// Continue from `last.ckpt` in the output directory.
    #[arg(long)]
    resume: bool,
}

#[derive(Debug, Args)]
struct FinetuneArgs {
    /// Fine-tuning loss [default: losses.kind].
    #[arg(long, value_parser = parse_loss)]
    loss: Option<LossKind>,
    /// SNR-term weight α [default: losses.alpha].
    #[arg(long)]
    alpha: Option<f64>,
    /// CTC share λ of the ASR loss [default: losses.lambda].
    #[arg(long)]
    lambda: Option<f64>,
    /// Maximum epochs [default: training.finetune.max_epochs].
    #[arg(long)]
    epochs: Option<usize>,
    /// Starting checkpoint [default: <work_dir>/pretrain/best.ckpt].
    #[arg(long)]
    init: Option<PathBuf>,
    /// Output directory [default: <work_dir>/finetune/<loss>_alpha_<α>].
    #[arg(long)]
    out: Option<PathBuf>,
    /// Continue from `last.ckpt` in the output directory.
    #[arg(long)]
    resume: bool,
}

#[derive(Debug, Args)]
struct EnhanceArgs {
    /// A WAV file, a directory of WAV files or a JSONL manifest.
    #[arg(long = "in", value_name = "PATH")]
    input: PathBuf,
    /// Observation-adding ratio β; 0 writes the raw estimate.
    #[arg(long, default_value_t = 0.0)]
    beta: f64,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Enhancer checkpoint [default: <work_dir>/pretrain/best.ckpt].
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SystemArg {
    Model,
    Passthrough,
    Oracle,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    /// Checkpoint for `--system model` [default: <work_dir>/pretrain/best.ckpt].
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = SystemArg::Model)]
    system: SystemArg,
    /// Row label [default: the system name].
    #[arg(long)]
    label: Option<String>,
    /// Comma-separated OA ratios [default: evaluation.betas].
    #[arg(long, value_delimiter = ',')]
    betas: Option<Vec<f64>>,
    /// Report path; `.json` selects JSON, anything else CSV
    /// [default: <work_dir>/eval/report.csv].
    #[arg(long)]
    report: Option<PathBuf>,
    /// Skip the SVG plots next to the report.
    #[arg(long)]
    no_plots: bool,
}

#[derive(Debug, Args)]
struct SweepArgs {
    /// Comma-separated α values [default: evaluation.alphas].
    #[arg(long, value_delimiter = ',')]
    alphas: Option<Vec<f64>>,
    /// Fine-tuning loss [default: losses.kind].
    #[arg(long, value_parser = parse_loss)]
    loss: Option<LossKind>,
    /// Maximum fine-tuning epochs per α [default: training.finetune.max_epochs].
    #[arg(long)]
    epochs: Option<usize>,
    /// Pre-trained checkpoint [default: <work_dir>/pretrain/best.ckpt].
    #[arg(long)]
    init: Option<PathBuf>,
    /// Report path [default: <work_dir>/sweep/report.csv].
    #[arg(long)]
    report: Option<PathBuf>,
    #[arg(long)]
    no_plots: bool,
}

#[derive(Debug, Args)]
struct ReportArgs {
    /// Report to read (CSV or JSON).
    #[arg(long = "in", value_name = "FILE")]
    input: PathBuf,
    /// Also write the rows to this path, converting the format by extension.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Directory for redrawn plots.
    #[arg(long)]
    plots: Option<PathBuf>,
}

fn parse_loss(s: &str) -> Result<LossKind, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

/// Config file plus command-line and environment overrides.
fn load_config(cli: &Cli) -> sslse::Result<GlobalConfig> {
    let mut cfg = match &cli.config {
        Some(p) => GlobalConfig::load(p)?,
        None => GlobalConfig::default(),
    };
    if let Some(w) = &cli.work_dir {
        cfg.paths.work_dir = w.clone();
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(w) = cli.workers {
        cfg.evaluation.workers = w;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::DivergenceDetected { .. } | Error::NonFiniteDevLoss(_) | Error::ZeroEnergyEstimate(_) => 4,
        Error::Io { .. } | Error::UnsupportedFormat(_) | Error::Json(_) | Error::Csv(_) | Error::Scorer(_) => 3,
        _ => 2,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    let result = load_config(&cli).and_then(|cfg| match &cli.command {
        Command::Simulate(a) => commands::simulate(&cfg, a),
        Command::Train(a) => commands::train(&cfg, a),
        Command::Finetune(a) => commands::finetune(cfg, a),
        Command::Enhance(a) => commands::enhance(&cfg, a),
        Command::Evaluate(a) => commands::evaluate(&cfg, a),
        Command::Sweep(a) => commands::sweep(cfg, a),
        Command::Report(a) => commands::report(a),
        Command::ShowConfig => commands::show_config(&cfg),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
