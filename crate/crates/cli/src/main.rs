mod commands;
mod config;
mod output;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

use config::ExperimentArgs;

/// Train, sweep and verify SWAP-test neural networks with product layers.
#[derive(Parser, Debug)]
#[command(name = "swapqnn", version)]
struct Cli {
    /// Output directory for reports and a manifest.json
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// More log output (-v info, -vv debug)
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic dataset as CSV plus a JSON metadata sidecar
    GenData {
        /// parity or spiral
        #[arg(value_enum)]
        kind: commands::DataKind,
        #[command(flatten)]
        args: ExperimentArgs,
    },
    /// Train one model and write the model, metrics trace and summary
    Train(ExperimentArgs),
    /// Run the parity (d, N, k, lr, seed) grid, resuming finished cells
    Sweep(ExperimentArgs),
    /// Classify a dataset through the circuit simulator
    Simulate(commands::SimulateArgs),
    /// Stratified k-fold cross-validation
    Xval(ExperimentArgs),
    /// Numerical checks of the parity impossibility argument
    VerifyTheory {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Circuit, gradient and theory checks; exit code 0 iff all pass
    Verify {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn main() -> anyhow::Result<()> {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let out = output::OutDir::create(&cli.out)?;
    let passed = match &cli.command {
        Command::GenData { kind, args } => commands::gen_data(&out, *kind, &args.resolve()?).map(|_| true),
        Command::Train(args) => commands::train(&out, &args.resolve()?).map(|_| true),
        Command::Sweep(args) => commands::sweep(&out, &args.resolve()?).map(|_| true),
        Command::Simulate(args) => commands::simulate(&out, args).map(|_| true),
        Command::Xval(args) => commands::xval(&out, &args.resolve()?).map(|_| true),
        Command::VerifyTheory { seed } => commands::verify(&out, *seed, true),
        Command::Verify { seed } => commands::verify(&out, *seed, false),
    }?;
    if !passed {
        std::process::exit(1);
    }
    Ok(())
}
