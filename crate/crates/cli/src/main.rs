//! `ifusion` command-line tool.
//!
//! Exit codes: 0 success, 2 configuration or validation error, 3 numeric
//! failure.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "ifusion", version, about = "HSI + LiDAR interconnected-fusion classifier")]
struct Cli {
    /// Run sample-level work on one thread.
    #[arg(long, global = true)]
    sequential: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic scene (hsi.ifc, lidar.ifc, labels.ifl, split.json).
    Synth {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train, evaluate on the test split and write model.ifm, metrics.csv, log.jsonl.
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// Evaluate a checkpoint on the test split.
    Eval {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Train every strategy × window cell and write grid.csv.
    Grid {
        #[arg(long)]
        config: PathBuf,
        /// Patch sides to run (window = 3·side).
        #[arg(long, value_delimiter = ',', default_values_t = [1usize, 2, 3, 4])]
        sides: Vec<usize>,
        /// Subset of early, middle, late.
        #[arg(long, value_delimiter = ',', default_values_t = ["early".to_string(), "middle".to_string(), "late".to_string()])]
        strategies: Vec<String>,
    },
    /// Train the four ablation variants and write ablation.csv.
    Ablate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Dump the fusion-matrix attention and integrated feature for one pixel.
    ExportAttn {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// `row,col`
        #[arg(long)]
        pixel: String,
        #[arg(long)]
        out: PathBuf,
        /// Also write one file per head.
        #[arg(long)]
        per_head: bool,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let mode = if cli.sequential { ifusion::exec::Mode::Sequential } else { ifusion::exec::Mode::default() };
    let result = match cli.command {
        Command::Synth { spec, out } => commands::synth(&spec, &out),
        Command::Train { config } => commands::train(&config, mode),
        Command::Eval { config, checkpoint } => commands::eval(&config, &checkpoint, mode),
        Command::Grid { config, sides, strategies } => commands::grid(&config, &sides, &strategies, mode),
        Command::Ablate { config } => commands::ablate(&config, mode),
        Command::ExportAttn { config, checkpoint, pixel, out, per_head } => {
            commands::export_attn(&config, &checkpoint, &pixel, &out, per_head)
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numeric() { 3 } else { 2 })
        }
    }
}
