use clap::Parser;
use nbplab_cli::{run_experiment, RunOptions};
use std::path::PathBuf;
use std::process::ExitCode;

/// Run one branching-process experiment from a JSON configuration.
#[derive(Debug, Parser)]
#[command(name = "nbplab", version)]
struct Args {
    /// Experiment configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output directory for data/*.csv, summary.json and manifest.json.
    #[arg(long)]
    out: PathBuf,
    /// Worker threads for replicate loops.
    #[arg(long)]
    threads: Option<usize>,
    /// Replace the configured master seed.
    #[arg(long)]
    seed_override: Option<u64>,
}

fn main() -> ExitCode {
    let args = Args::parse();
    let opts = RunOptions { threads: args.threads, seed_override: args.seed_override, quiet: false };
    match run_experiment(&args.config, &args.out, &opts) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
