//! `compnet`: synthesize data, initialize and train compositional models, run
//! inference and evaluate.

mod commands;
mod data;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use commands::{eval, infer, prepare, train};

#[derive(Debug, Parser)]
#[command(name = "compnet", version, about = "Occlusion-robust compositional classification and detection")]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Global {
    /// `key = value` file overriding initialization, training and detection settings.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Model file to read.
    #[arg(long, global = true)]
    pub model: Option<PathBuf>,
    /// Output file or directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Context weight for inference and detection training.
    #[arg(long, global = true)]
    pub omega: Option<f64>,
    /// Occlusion prior replacing the one stored in the model.
    #[arg(long, global = true)]
    pub prior: Option<f64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset with features, masks and a manifest.
    Synth(prepare::SynthArgs),
    /// Initialize a model by clustering training features.
    Init(prepare::InitArgs),
    /// Train a classification model end to end.
    TrainCls(train::TrainArgs),
    /// Train a detection model with context and corner parts.
    TrainDet(train::TrainArgs),
    /// Classify feature files.
    Classify(infer::FilesArgs),
    /// Detect objects in feature files.
    Detect(infer::FilesArgs),
    /// Occlusion scores of the predicted class over one feature file.
    LocalizeOcc(infer::LocalizeArgs),
    /// Accuracy per occlusion level and occluder type.
    EvalCls(eval::EvalClsArgs),
    /// Per-image correct AP at IoU 0.5 per occlusion level.
    EvalDet(eval::DataArgs),
    /// Occluder localization AUC on correctly classified scenes.
    EvalOcc(eval::EvalOccArgs),
    /// Verify analytic gradients against finite differences.
    Gradcheck(eval::GradcheckArgs),
    /// Write a part's detection map as a PGM heatmap.
    ExportHeatmap(infer::HeatmapArgs),
}

fn run(cli: Cli) -> anyhow::Result<()> {
    if let Some(n) = cli.global.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| compnet::Error::Config(format!("thread pool: {e}")))?;
    }
    let g = &cli.global;
    match &cli.command {
        Command::Synth(a) => prepare::synth(g, a),
        Command::Init(a) => prepare::init(g, a),
        Command::TrainCls(a) => train::train_cls(g, a),
        Command::TrainDet(a) => train::train_det(g, a),
        Command::Classify(a) => infer::classify(g, a),
        Command::Detect(a) => infer::detect(g, a),
        Command::LocalizeOcc(a) => infer::localize(g, a),
        Command::EvalCls(a) => eval::eval_cls(g, a),
        Command::EvalDet(a) => eval::eval_det(g, a),
        Command::EvalOcc(a) => eval::eval_occ(g, a),
        Command::Gradcheck(a) => eval::gradcheck(g, a),
        Command::ExportHeatmap(a) => infer::heatmap(g, a),
    }
}

/// 1 for usage and configuration errors, 3 for numeric failures, 2 otherwise.
fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<compnet::Error>() {
        Some(compnet::Error::Config(_)) => 1,
        Some(compnet::Error::Numeric(_)) => 3,
        _ => 2,
    }
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_env("COMPNET_LOG").unwrap_or_else(|_| "warn".into()))
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let mut msg = e.to_string();
            for cause in e.chain().skip(1) {
                let c = cause.to_string();
                if !msg.contains(&c) {
                    msg = format!("{msg}: {c}");
                }
            }
            eprintln!("error: {msg}");
            ExitCode::from(exit_code(&e))
        }
    }
}
