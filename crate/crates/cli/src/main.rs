//! `d2co`: synthetic scenes, detection, registration, view planning and the
//! benchmark experiments from the command line.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data error, 4 internal error.

mod commands;
mod config;
mod error;
mod io;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::commands::{benchmark, detect, nbv, register, render};
use crate::config::ExperimentConfig;
use crate::error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(name = "d2co", version, about = "Edge-based detection, registration and next-best-view planning")]
struct Cli {
    /// Experiment configuration (JSON); built-in defaults when absent
    #[arg(long, global = true, env = "D2CO_CONFIG")]
    config: Option<PathBuf>,
    /// Output directory, overriding `output_dir`
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Random seed, overriding `seed`
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// More log output (-v info, -vv debug); RUST_LOG takes precedence
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a random scene and render its reference view
    RenderScene(render::RenderArgs),
    /// Rank template-bank poses against an observation
    Detect(detect::DetectArgs),
    /// Refine detected candidates and score them
    Register(register::RegisterArgs),
    /// Plan views to localize a searched object type in a scene
    Nbv(nbv::NbvArgs),
    /// Run the evaluation experiments and write CSV tables
    Benchmark(benchmark::BenchArgs),
}

fn load_config(cli: &Cli) -> CliResult<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(p) if !p.is_file() => return Err(CliError::missing("config file", p.clone())),
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(o) = &cli.out {
        cfg.output_dir = o.clone();
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn run(cli: &Cli) -> CliResult<()> {
    let cfg = load_config(cli)?;
    match &cli.command {
        Command::RenderScene(a) => render::run(a, &cfg),
        Command::Detect(a) => detect::run(a, &cfg),
        Command::Register(a) => register::run(a, &cfg),
        Command::Nbv(a) => nbv::run(a, &cfg),
        Command::Benchmark(a) => benchmark::run(a, &cfg),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            // Usage errors count as configuration errors.
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    match std::panic::catch_unwind(|| run(&cli)) {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(e)) => {
            eprintln!("d2co: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
        Err(_) => {
            eprintln!("d2co: internal error (panic)");
            ExitCode::from(4)
        }
    }
}
