use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};

use copos::harness::{run_experiment, run_oracles, run_toy, ExperimentConfig, OracleSuite, ToyPreset};

/// Entropy-constrained natural policy search experiments.
#[derive(Parser)]
#[command(name = "copos", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a policy from a config file.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides `seed` in the config.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides `out` in the config.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a verification suite and print a JSON report.
    Oracle {
        /// dual_fd, dual_mc, toy_closed_form, brute_force_tr or dense_fisher
        #[arg(long)]
        suite: String,
    },
    /// Write the quadratic-bandit comparison series as CSV.
    Toy {
        /// fig1-top or fig1-bottom
        #[arg(long)]
        preset: String,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    match cli.command {
        Command::Run { config, seed, out } => {
            let mut cfg =
                ExperimentConfig::from_file(&config).with_context(|| format!("loading {}", config.display()))?;
            if let Some(seed) = seed {
                cfg.seed = seed;
            }
            if out.is_some() {
                cfg.out = out;
            }
            let summary = run_experiment(&cfg)?;
            println!("{}", summary.dir.display());
        }
        Command::Oracle { suite } => {
            let report = run_oracles(suite.parse::<OracleSuite>()?)?;
            println!("{}", report.to_json());
            if !report.passed {
                return Ok(ExitCode::FAILURE);
            }
        }
        Command::Toy { preset, out } => {
            let path = run_toy(preset.parse::<ToyPreset>()?, &out)?;
            println!("{}", path.display());
        }
    }
    Ok(ExitCode::SUCCESS)
}
