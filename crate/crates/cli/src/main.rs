//! `disco` command line: data generation, two-stage training, sampling and
//! the metric suite for both arms.

mod commands;
mod output;
mod svg;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use disco::config::RunConfig;
use disco::disco::Arm;

#[derive(Parser, Debug)]
#[command(name = "disco", version, about = "Diffusion with learned discrete latents on a 2-D toy mixture")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// Flat `key = value` config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "runs")]
    out: PathBuf,
    #[arg(long, global = true)]
    arm: Option<Arm>,
    /// Guidance weight `w` for sampling and analysis.
    #[arg(long = "cfg-scale", global = true, allow_negative_numbers = true)]
    cfg_scale: Option<f64>,
    /// Extra `key=value` overrides, applied after the file.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write the training set as CSV.
    GenData,
    /// Train one arm (`--arm`) and write its checkpoint and loss curve.
    Train {
        /// Continue from the arm's existing checkpoint.
        #[arg(long)]
        resume: bool,
        #[arg(long, default_value_t = 1000)]
        checkpoint_every: u64,
    },
    /// Fit the latent prior on the disco checkpoint's codes.
    TrainPrior,
    /// Draw samples from one arm; writes CSV and an SVG scatter.
    Sample {
        /// Number of samples (default: `n_samples` from the config).
        #[arg(long)]
        n: Option<usize>,
        /// Trajectories drawn as dotted lines on the scatter.
        #[arg(long, default_value_t = 24)]
        trajectories: usize,
    },
    /// Metric suite for every arm with a checkpoint.
    Analyze,
    /// Full pipeline: data, both arms, prior, samples and metrics.
    Compare,
}

/// Exit status classes.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Numeric(String),
}

impl From<disco::Error> for Failure {
    fn from(e: disco::Error) -> Self {
        if e.is_numeric() {
            Failure::Numeric(e.to_string())
        } else {
            Failure::Usage(e.to_string())
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Usage(e.to_string())
    }
}

fn effective_config(common: &Common) -> Result<RunConfig, Failure> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(arm) = common.arm {
        cfg.arm = arm;
    }
    if let Some(w) = common.cfg_scale {
        cfg.w_cfg = w;
    }
    for kv in &common.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Failure::Usage(format!("--set expects KEY=VALUE, got `{kv}`")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), Failure> {
    let cfg = effective_config(&cli.common)?;
    let out = cli.common.out.as_path();
    std::fs::create_dir_all(out)?;
    match cli.command {
        Command::GenData => commands::gen_data(&cfg, out),
        Command::Train {
            resume,
            checkpoint_every,
        } => commands::train(&cfg, out, resume, checkpoint_every),
        Command::TrainPrior => commands::train_prior(&cfg, out),
        Command::Sample { n, trajectories } => commands::sample(&cfg, out, n, trajectories),
        Command::Analyze => commands::analyze(&cfg, out),
        Command::Compare => commands::compare(&cfg, out),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Numeric(msg)) => {
            eprintln!("numeric failure: {msg}");
            ExitCode::from(3)
        }
    }
}
