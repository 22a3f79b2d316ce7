use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use inimnet_cli::{experiment, train, verify};

#[derive(Parser)]
#[command(name = "inimnet", about = "Invariant imbedding networks: verification, training, experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a property suite: theorem1, theorem2, theorem3, imbedding_rule, gradients, convergence.
    Verify {
        suite: String,
        /// Replace the suite's error tolerances.
        #[arg(long)]
        tol: Option<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train from a key = value config file.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Record wall-clock seconds in history.csv.
        #[arg(long)]
        timing: bool,
    },
    /// Run a built-in experiment: projectile or rotvec.
    Experiment {
        name: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        timing: bool,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Verify { suite, tol, seed } => verify(&suite, tol, seed),
        Command::Train { config, out, timing } => train(&config, &out, timing),
        Command::Experiment { name, seed, out, timing } => experiment(&name, seed, out, timing),
    };
    let code = result.unwrap_or_else(|f| {
        eprintln!("error: {}", f.message);
        f.code
    });
    ExitCode::from(code as u8)
}
