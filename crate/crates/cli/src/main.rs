use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use maml_core::experiment::{execute, Command, Invocation};

#[derive(Parser)]
#[command(name = "maml", version, about = "Multi-step MAML experiments on synthetic task families")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Build a task family and write family.json.
    MakeFamily(Args),
    /// Train and write metrics.csv and summary.json.
    Run(Args),
    /// Run the bound-verification suite.
    Verify(Args),
    /// Print the theoretical constants for the run section.
    Constants(Args),
    /// Run a grid of configurations.
    Sweep(Args),
}

#[derive(clap::Args)]
struct Args {
    /// Experiment TOML file.
    #[arg(long)]
    config: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Override a config value, e.g. `--set run.s=40`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; results do not depend on this.
    #[arg(long, default_value_t = 1)]
    workers: usize,
    /// Permit an inner stepsize above the convergence bound.
    #[arg(long)]
    allow_unsafe_alpha: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (command, args) = match cli.command {
        Cmd::MakeFamily(a) => (Command::MakeFamily, a),
        Cmd::Run(a) => (Command::Run, a),
        Cmd::Verify(a) => (Command::Verify, a),
        Cmd::Constants(a) => (Command::Constants, a),
        Cmd::Sweep(a) => (Command::Sweep, a),
    };
    let inv = Invocation {
        command,
        config_path: args.config,
        out_dir: args.out,
        overrides: args.overrides,
        seed: args.seed,
        workers: args.workers,
        allow_unsafe_alpha: args.allow_unsafe_alpha,
    };
    let code = execute(&inv, &mut std::io::stdout().lock());
    ExitCode::from(code as u8)
}
