use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::Value;

use scatter::commands;
use scatter::config::{
    parse_json, BoundsConfig, CoherenceConfig, ExperimentConfig, ExperimentId, ForwardConfig, ReconstructConfig, Scale,
};
use scatter::error::{AppError, AppResult};
use scatter::experiments::run_experiment;

/// Far-field inverse scattering: simulation, sparse reconstruction,
/// coherence and convergence bounds.
#[derive(Parser)]
#[command(name = "scatter", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// JSON config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed for noise and random models.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Experiment preset size.
    #[arg(long, global = true, value_enum, default_value = "desk")]
    scale: Scale,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a measurement matrix.
    Forward,
    /// Recover a sparse potential from a measurement file.
    Reconstruct,
    /// Mutual coherence of the sensing operators.
    Coherence,
    /// Convergence bounds from supplied constants.
    Bounds,
    /// Run a numerical study by id.
    Experiment { id: String },
}

const DEFAULT_SEED: u64 = 2017;

fn read_config(path: Option<&Path>) -> AppResult<Option<String>> {
    path.map(|p| std::fs::read_to_string(p).map_err(|e| AppError::config(format!("cannot read {}: {e}", p.display()))))
        .transpose()
}

fn required<T: serde::de::DeserializeOwned>(path: Option<&Path>, what: &str) -> AppResult<T> {
    match read_config(path)? {
        Some(text) => parse_json(&text, what),
        None => Err(AppError::config(format!("{what} needs --config"))),
    }
}

fn run(cli: &Cli) -> AppResult<()> {
    let config = cli.config.as_deref();
    let seed = cli.seed.unwrap_or(DEFAULT_SEED);
    let out = cli.out_dir.clone().unwrap_or_else(|| PathBuf::from("out"));
    match &cli.command {
        Command::Forward => {
            let cfg: ForwardConfig = required(config, "forward config")?;
            commands::forward(&cfg, seed, &out)?;
        }
        Command::Reconstruct => {
            let cfg: ReconstructConfig = required(config, "reconstruct config")?;
            let trace = commands::reconstruct(&cfg, &commands::config_base(config), &out)?;
            println!(
                "iterations={} final_y_err={:.6e} converged={}",
                trace.iterations,
                trace.final_y_err(),
                trace.converged
            );
        }
        Command::Coherence => {
            let cfg: CoherenceConfig = required(config, "coherence config")?;
            let report = commands::coherence(&cfg, seed, &out)?;
            println!("mu={:.6} pair={:?}", report.mu_exact, report.argmax_pair);
        }
        Command::Bounds => {
            let cfg: BoundsConfig = required(config, "bounds config")?;
            for t in commands::bounds(&cfg, &out)? {
                println!("{} guarantee={} final={:.6e}", t.name, t.guarantee, t.bound_at(t.steps.len()));
            }
        }
        Command::Experiment { id } => {
            let id: ExperimentId = id.parse()?;
            let overrides = match read_config(config)? {
                Some(text) => Some(parse_json::<Value>(&text, "experiment config")?),
                None => None,
            };
            let mut cfg = ExperimentConfig::resolve(id, cli.scale, overrides.as_ref())?;
            if let Some(s) = cli.seed {
                cfg.seed = s;
            }
            let out = cli
                .out_dir
                .clone()
                .or_else(|| cfg.out_dir.as_ref().map(PathBuf::from))
                .unwrap_or_else(|| Path::new("out").join(id.as_str()));
            run_experiment(&cfg, &out)?;
            println!("{} ({}) written to {}", id, id.figure(), out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
