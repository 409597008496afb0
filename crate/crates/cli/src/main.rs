use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod commands;
mod config;

use commands::CliError;
use config::PipelineConfig;

/// Loop-closure trajectory smoothing pipeline.
#[derive(Parser, Debug)]
#[command(name = "lcsmooth", version)]
struct Cli {
    /// Configuration file of `key = value` lines.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Writes a simulated survey dataset.
    Simulate {
        /// Output dataset directory.
        dir: PathBuf,
    },
    /// Detects crossings and aligns submaps into loop closures.
    Closeloops {
        dataset: PathBuf,
        /// Output CSV, default `<dataset>/loopclosures.csv`.
        #[arg(long)]
        output: Option<PathBuf>,
        /// Replace this many closures with random outliers.
        #[arg(long, default_value_t = 0)]
        outliers: usize,
    },
    /// Smooths the prior trajectory with loop closures.
    Smooth {
        dataset: PathBuf,
        /// Loop-closure CSV, default `<dataset>/loopclosures.csv`.
        #[arg(long)]
        closures: Option<PathBuf>,
        /// Keep only the first K closures.
        #[arg(long = "loop-closures")]
        keep: Option<usize>,
        #[arg(long)]
        no_robust: bool,
        /// Output directory, default the dataset directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Relative pose errors and point disparity of an estimate.
    Evaluate {
        #[arg(long)]
        estimate: PathBuf,
        #[arg(long)]
        truth: Option<PathBuf>,
        /// Profiles CSV; with `--passes`, enables point disparity.
        #[arg(long)]
        profiles: Option<PathBuf>,
        /// CSV of `label,t_start,t_end` pass intervals.
        #[arg(long)]
        passes: Option<PathBuf>,
        /// Loop-closure CSV; the earliest closure time anchors the errors.
        #[arg(long)]
        closures: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn load_config(cli: &Cli) -> Result<PipelineConfig, CliError> {
    let mut cfg = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
            PipelineConfig::parse(&text)?
        }
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut cfg = load_config(&cli)?;
    match cli.command {
        Command::Simulate { dir } => commands::simulate(&mut cfg, &dir),
        Command::Closeloops { dataset, output, outliers } => {
            let output = output.unwrap_or_else(|| dataset.join("loopclosures.csv"));
            commands::closeloops(&cfg, &dataset, &output, outliers)
        }
        Command::Smooth { dataset, closures, keep, no_robust, out } => {
            if no_robust {
                cfg.solver.robust.enabled = false;
            }
            let closures = closures.unwrap_or_else(|| dataset.join("loopclosures.csv"));
            let out = out.unwrap_or_else(|| dataset.clone());
            commands::smooth(&cfg, &dataset, &closures, keep, &out)
        }
        Command::Evaluate { estimate, truth, profiles, passes, closures, out } => {
            let inputs = commands::EvalInputs { estimate, truth, profiles, passes, closures };
            commands::evaluate(&inputs, &out)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
