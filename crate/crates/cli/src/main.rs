use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod run;
mod scenario;

#[derive(Parser)]
#[command(name = "dqvi", version, about = "Run differential quasivariational inequality scenarios")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario file and write its artifacts.
    Run {
        scenario: PathBuf,
        /// Output directory; overrides `output_dir` in the scenario.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Seed for sampled certificates; overrides `seed` in the scenario.
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn configure_threads() -> Result<(), String> {
    let Ok(raw) = std::env::var("DQVI_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| format!("DQVI_THREADS must be a positive integer, got '{raw}'"))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| e.to_string())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(e) = configure_threads() {
        eprintln!("error: {e}");
        return ExitCode::from(2);
    }
    match cli.command {
        Command::Run { scenario, out, seed } => run::run(&scenario, out, seed),
    }
}
