//! `fogsplat`: synthesize foggy datasets, train, render, and evaluate.

mod commands;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::{EvalArgs, RenderArgs, SynthArgs, TrainArgs};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] fogsplat_core::Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        use fogsplat_core::Error as E;
        match self {
            CliError::Usage(_) => 1,
            CliError::Core(E::Numerical(_)) => 3,
            CliError::Core(_) => 2,
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "fogsplat", version, about = "Gaussian splatting through fog")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Add synthetic fog to clear images with known depth.
    Synth(SynthArgs),
    /// Fit Gaussians and fog parameters to a foggy scene.
    Train(TrainArgs),
    /// Render one camera of a checkpoint.
    Render(RenderArgs),
    /// Score clear renders against ground-truth images.
    Eval(EvalArgs),
    /// Write the procedural toy scene as a scene directory.
    #[command(hide = true)]
    Toy(commands::ToyArgs),
}

fn configure_threads() -> Result<(), CliError> {
    let Ok(raw) = std::env::var("FOGSPLAT_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| CliError::Usage(format!("FOGSPLAT_THREADS must be a positive integer, got '{raw}'")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Usage(format!("cannot configure {n} threads: {e}")))
}

fn run(cli: Cli) -> Result<(), CliError> {
    configure_threads()?;
    match cli.command {
        Command::Synth(a) => commands::synth(a),
        Command::Train(a) => commands::train(a),
        Command::Render(a) => commands::render(a),
        Command::Eval(a) => commands::eval(a),
        Command::Toy(a) => commands::toy(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
