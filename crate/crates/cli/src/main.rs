use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use macfl::trainer::Policy;
use macfl_cli::commands;
use macfl_cli::config::{load_config, ExperimentConfig};

#[derive(Parser)]
#[command(
    name = "macfl",
    version,
    about = "Channel-aware gradient quantization for federated learning over a Gaussian MAC"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArg {
    /// Experiment config (TOML)
    #[arg(long, short)]
    config: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    config: ConfigArg,
    /// Output directory
    #[arg(long, env = "MACFL_OUT_DIR")]
    out: Option<PathBuf>,
    /// Override the quantization and initialization seed
    #[arg(long)]
    seed: Option<u64>,
    /// Override the number of iterations
    #[arg(long)]
    iterations: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Print every subset capacity and budget cap
    Capacity(ConfigArg),
    /// Print relaxed and integer allocations for given dynamic ranges
    Allocate {
        #[command(flatten)]
        config: ConfigArg,
        /// One dynamic range per user, comma separated
        #[arg(
            long,
            value_delimiter = ',',
            required = true,
            allow_negative_numbers = true
        )]
        deltas: Vec<f64>,
    },
    /// Train with one policy and write metrics.csv and summary.json
    Train {
        #[command(flatten)]
        run: RunArgs,
        /// Override the config's policy
        #[arg(long)]
        policy: Option<Policy>,
    },
    /// Train several policies on identical data and seeds
    Compare {
        #[command(flatten)]
        run: RunArgs,
        /// Comma separated policy names
        #[arg(
            long,
            value_delimiter = ',',
            default_value = "full-resolution,mac-aware,uniform,top-q,signsgd,terngrad"
        )]
        policies: Vec<Policy>,
    },
}

fn load(run: &RunArgs) -> Result<ExperimentConfig> {
    let mut config = load_config(&run.config.config)?;
    if let Some(seed) = run.seed {
        config.seed = seed;
    }
    if let Some(t) = run.iterations {
        anyhow::ensure!(t >= 1, "--iterations must be at least 1");
        config.iterations = t;
    }
    Ok(config)
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Capacity(c) => print!("{}", commands::capacity_report(&load_config(&c.config)?)?),
        Command::Allocate { config, deltas } => {
            print!(
                "{}",
                commands::allocate_report(&load_config(&config.config)?, &deltas)?
            )
        }
        Command::Train { run, policy } => {
            let mut config = load(&run)?;
            if let Some(p) = policy {
                config.policy = p;
            }
            let out = commands::output_dir(run.out.clone(), &config)?;
            let summary = commands::train(&config, &out)?;
            print!("{}", commands::final_table(&[summary]));
        }
        Command::Compare { run, policies } => {
            let config = load(&run)?;
            let out = commands::output_dir(run.out.clone(), &config)?;
            print!(
                "{}",
                commands::final_table(&commands::compare(&config, &policies, &out)?)
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
