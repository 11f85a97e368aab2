//! `blockrank`: train multiblock networks and rank feature blocks by importance.

mod error;
mod stages;

use std::path::PathBuf;
use std::process::ExitCode;

use blockrank::bir::Strategy;
use blockrank::config::ExperimentConfig;
use clap::{Parser, Subcommand};

use crate::error::CliError;
use crate::stages::Workspace;

#[derive(Debug, Parser)]
#[command(name = "blockrank", version, about)]
struct Cli {
    /// Experiment configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Base seed; run r uses seed + r.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Number of independent training runs.
    #[arg(long, global = true)]
    runs: Option<usize>,
    /// Comma-separated strategies, e.g. knock-in,knock-out.
    #[arg(long, global = true, value_delimiter = ',')]
    strategies: Option<Vec<Strategy>>,
    /// Worker threads for independent runs (0 = all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Output root; artifacts go to <out>/<experiment name>/.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate the simulated dataset.
    Simulate,
    /// Train one model per run.
    Train,
    /// Score blocks with every requested strategy.
    Rank,
    /// Filter runs, build tie groups and write summary.json.
    Evaluate,
    /// Collate report.json and scores_long.csv.
    Report,
    /// All stages in order.
    Run,
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig, CliError> {
    let path = cli.config.as_ref().ok_or_else(|| CliError::Config("--config is required".into()))?;
    let mut config = ExperimentConfig::load(path)?;
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(runs) = cli.runs {
        config.n_runs = runs;
    }
    if let Some(strategies) = &cli.strategies {
        config.strategies = strategies.clone();
    }
    if let Some(workers) = cli.workers {
        config.workers = workers;
    }
    config.validate()?;
    Ok(config)
}

fn execute(cli: &Cli) -> Result<(), CliError> {
    let ws = Workspace::new(&cli.out, load_config(cli)?);
    match cli.command {
        Command::Simulate => ws.simulate(),
        Command::Train => ws.train(),
        Command::Rank => ws.rank(),
        Command::Evaluate => ws.evaluate().map(|_| ()),
        Command::Report => ws.report().map(|_| ()),
        Command::Run => ws.run_all().map(|_| ()),
    }?;
    println!("{}", ws.root.display());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("BLOCKRANK_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
