use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use ntklab::config::{load_config, Recipe};
use ntklab::recipes::{run_experiment, RunError};

/// Runs one experiment recipe from a JSON config and writes its artifacts.
#[derive(Debug, Parser)]
#[command(name = "ntklab", version)]
struct Cli {
    recipe: Recipe,
    /// JSON configuration for the recipe.
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory. Falls back to NTKLAB_OUT, then the config's
    /// `output_dir`, then `ntklab-out/<recipe>`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Omit wall-clock timestamps so reruns are byte-identical.
    #[arg(long)]
    reproducible: bool,
}

fn run(cli: &Cli) -> Result<PathBuf, RunError> {
    let mut config = load_config(cli.recipe, &cli.config)?;
    if let Some(seed) = cli.seed {
        config.set_seed(seed);
    }
    let out = cli
        .out
        .clone()
        .or_else(|| std::env::var_os("NTKLAB_OUT").map(PathBuf::from))
        .or_else(|| config.output_dir().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("ntklab-out").join(cli.recipe.name()));
    let outcome = run_experiment(&config, &out, cli.reproducible)?;
    Ok(outcome.out_dir)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(dir) => {
            println!("{}", dir.join("run.json").display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
