use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use splotml::{execute, load_config, CliError, Command};

#[derive(Parser)]
#[command(name = "splotml", version, about = "Train classifiers on sWeighted data and compare losses")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate or ingest data, compute sWeights, train the configured methods.
    Run(Common),
    /// Train every method on one dataset with shared initial weights and plot the learning curves.
    DemoDivergence(Common),
    /// Fit yields and export sWeights only.
    Sweights(Common),
    /// Final test AUC per (size, method, seed).
    Sweep(Common),
}

#[derive(Args)]
struct Common {
    /// Experiment config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Overrides every seed in the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; 1 gives the fully sequential run.
    #[arg(long)]
    threads: Option<usize>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (command, args) = match cli.command {
        Cmd::Run(a) => (Command::Run, a),
        Cmd::DemoDivergence(a) => (Command::DemoDivergence, a),
        Cmd::Sweights(a) => (Command::Sweights, a),
        Cmd::Sweep(a) => (Command::Sweep, a),
    };
    if let Some(n) = args.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global() {
            eprintln!("error: cannot configure {n} threads: {e}");
            return ExitCode::from(2);
        }
    }
    match load_config(&args.config, args.seed).and_then(|cfg| execute(command, &cfg, &args.out)) {
        Ok(outcome) => {
            println!("manifest: {}", outcome.manifest.display());
            if !outcome.divergent.is_empty() {
                let names: Vec<&str> = outcome.divergent.iter().map(|m| m.name()).collect();
                println!("divergent: {}", names.join(", "));
            }
            match outcome.unexpected_abort {
                Some(msg) => {
                    eprintln!("error: {msg}");
                    ExitCode::from(4)
                }
                None => ExitCode::SUCCESS,
            }
        }
        Err(e) => fail(e),
    }
}

fn fail(e: CliError) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(e.exit_code() as u8)
}
