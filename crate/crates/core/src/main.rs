use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use gasca::experiment;

#[derive(Parser)]
#[command(
    name = "gasca",
    version,
    about = "Layer-wise adversarial autoencoder experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train with the regime in a key=value config; writes metrics, checkpoint and grid.
    Run { config: PathBuf },
    /// Print validation MSE of a checkpoint on a manifest's validation split.
    Eval {
        checkpoint: PathBuf,
        manifest: PathBuf,
    },
    /// Write a PGM of validation inputs (top) and reconstructions (bottom).
    Grid {
        checkpoint: PathBuf,
        manifest: PathBuf,
        out: PathBuf,
        #[arg(long, default_value_t = 5)]
        rows: usize,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match cli.command {
        Command::Run { config } => experiment::cmd_run(&config),
        Command::Eval {
            checkpoint,
            manifest,
        } => experiment::cmd_eval(&checkpoint, &manifest),
        Command::Grid {
            checkpoint,
            manifest,
            out,
            rows,
        } => experiment::render_grid(&checkpoint, &manifest, &out, rows),
    };
    ExitCode::from(code as u8)
}
