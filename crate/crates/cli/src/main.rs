mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use surrogate_core::rl::Objective;

use config::{MotorPattern, RunConfig};

#[derive(Parser)]
#[command(name = "surrogate", version, about = "Transformer surrogate of a 5x5 chemical oscillator grid")]
pub struct Cli {
    /// TOML configuration file; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed for every random choice of the command.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand)]
pub enum Command {
    /// Simulate reference experiments into JSONL files.
    GenData(GenData),
    /// Cyclic training on a directory of JSONL experiments.
    Train(Train),
    /// Phase-window error of rollouts (or of precomputed predictions).
    Eval(Eval),
    /// Genetic search for XOR-like motor layouts.
    RunGa(RunGa),
    /// Train a controller through the frozen model.
    RunRl(RunRl),
    /// Tile the model over an NxN field.
    Upscale(Upscale),
    /// Start the HTTP session service.
    Serve(Serve),
}

#[derive(Args)]
pub struct GenData {
    #[arg(long)]
    pub out: PathBuf,
    /// Number of experiments.
    #[arg(long)]
    pub count: Option<usize>,
    /// Frames per experiment.
    #[arg(long)]
    pub steps: Option<usize>,
}

#[derive(Args)]
pub struct Train {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Continue from a checkpoint (its architecture wins over [model]).
    #[arg(long)]
    pub resume: Option<PathBuf>,
    #[arg(long)]
    pub d_model: Option<usize>,
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long)]
    pub seq_len: Option<usize>,
    #[arg(long)]
    pub encoder_epochs: Option<usize>,
    #[arg(long)]
    pub full_epochs: Option<usize>,
    #[arg(long)]
    pub cycles: Option<usize>,
    #[arg(long)]
    pub warmup: Option<u64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub stride: Option<usize>,
    /// Start from the small desk-scale architecture instead of [model].
    #[arg(long)]
    pub desk: bool,
}

#[derive(Args)]
pub struct Eval {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, required_unless_present = "pred")]
    pub model: Option<PathBuf>,
    /// Directory of predicted experiments to score instead of running a model.
    #[arg(long, conflicts_with = "model")]
    pub pred: Option<PathBuf>,
    #[arg(long, default_value_t = 5)]
    pub phase_window: usize,
    #[arg(long, default_value_t = 60)]
    pub horizon: usize,
    /// Rollout windows per experiment.
    #[arg(long, default_value_t = 4)]
    pub windows: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct RunGa {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub pop_size: Option<usize>,
    #[arg(long)]
    pub elite: Option<usize>,
    #[arg(long)]
    pub generations: Option<usize>,
    #[arg(long)]
    pub horizon: Option<usize>,
    #[arg(long)]
    pub mutation_rate: Option<f64>,
}

#[derive(Args)]
pub struct RunRl {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_parser = parse_objective)]
    pub objective: Option<Objective>,
    #[arg(long)]
    pub episodes: Option<usize>,
    #[arg(long)]
    pub episode_len: Option<usize>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
}

#[derive(Args)]
pub struct Upscale {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long, value_enum)]
    pub motor_pattern: Option<MotorPattern>,
    #[arg(long)]
    pub motor_speed: Option<f64>,
    /// Also write one PNG heatmap per frame.
    #[arg(long)]
    pub png: bool,
}

#[derive(Args)]
pub struct Serve {
    /// `id=path` of a checkpoint to serve; a bare path is served as `default`.
    #[arg(long = "model", required = true)]
    pub models: Vec<String>,
    /// `model_id=path` of a trained controller to offer for suggestions.
    #[arg(long = "controller")]
    pub controllers: Vec<String>,
    #[arg(long)]
    pub host: Option<String>,
    #[arg(long)]
    pub port: Option<u16>,
    #[arg(long)]
    pub workers: Option<usize>,
    /// Job outputs and the manifest go here.
    #[arg(long, default_value = "service-out")]
    pub out: PathBuf,
}

fn parse_objective(s: &str) -> Result<Objective, String> {
    match s {
        "maximize" => Ok(Objective::Maximize),
        "minimize" => Ok(Objective::Minimize),
        _ => Err(format!("expected maximize or minimize, got {s}")),
    }
}

/// Usage and configuration problems exit with 2, everything else with 1.
pub enum Failure {
    Usage(String),
    Runtime(anyhow::Error),
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure::Runtime(e.into())
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).format_timestamp(None).init();
    let cli = Cli::parse();
    let cfg = match &cli.config {
        Some(p) => RunConfig::load(p),
        None => Ok(RunConfig::default()),
    };
    let result = match cfg {
        Ok(cfg) => commands::run(cli, cfg),
        Err(e) => Err(Failure::Usage(format!("config: {e}"))),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
