//! `lbcf`: train uplift forests on randomized-trial data, assign treatments
//! under a global budget, and evaluate allocation policies offline.
//!
//! The subcommands chain into a pipeline:
//!
//! ```text
//! generate ──▶ train ──▶ allocate ──▶ evaluate
//!                  └────▶ sweep (many policies × budgets)
//! ```
//!
//! Every run writes a `run.json` manifest with the resolved parameters and
//! SHA-256 digests of inputs and outputs; re-running a manifest (via
//! `--config run.json`) reproduces the outputs byte for byte. Exit codes:
//! 0 on success, 2 for rejected configuration, 1 for runtime failures.

mod commands;
mod config;
mod error;
mod io;
mod manifest;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "lbcf", version, about, max_term_width = 100)]
struct Cli {
    /// Worker threads for parallel sections (0 = one per core).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a synthetic randomized trial with known potential outcomes.
    Generate(commands::generate::GenerateArgs),
    /// Fit a treatment-effect forest on trial data.
    Train(commands::train::TrainArgs),
    /// Assign treatments under a budget with a chosen policy.
    Allocate(commands::allocate::AllocateArgs),
    /// Score an existing assignment on trial data or ground truth.
    Evaluate(commands::evaluate::EvaluateArgs),
    /// Run several policies across a budget grid and export the curves.
    Sweep(commands::sweep::SweepArgs),
}

fn main() {
    let cli = Cli::parse();
    if cli.threads > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global()
        {
            eprintln!("error: cannot configure {} worker threads: {e}", cli.threads);
            std::process::exit(2);
        }
    }
    let result = match &cli.command {
        Command::Generate(args) => commands::generate::run(args),
        Command::Train(args) => commands::train::run(args),
        Command::Allocate(args) => commands::allocate::run(args),
        Command::Evaluate(args) => commands::evaluate::run(args),
        Command::Sweep(args) => commands::sweep::run(args),
    };
    if let Err(e) = result {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
