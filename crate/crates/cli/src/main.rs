//! `sisa`: plan, train, unlearn, evaluate and benchmark class-unlearning runs.

mod commands;
mod config;
mod failure;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use sisa_core::Strategy;

use crate::failure::Failure;

#[derive(Parser, Debug)]
#[command(name = "sisa", version, about = "Class-level unlearning with sharded, sliced ensembles")]
pub struct Cli {
    /// Run configuration (JSON). Flags override its keys.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Training seed; overrides `seed` and `train.seed`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Output directory (run directory for train/unlearn/eval).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,

    /// Print nothing on success.
    #[arg(long, short, global = true)]
    pub quiet: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Write the partition plan.
    Plan {
        #[arg(long, value_parser = parse_strategy)]
        strategy: Option<Strategy>,
    },
    /// Train every shard and write the run directory.
    Train {
        #[arg(long, value_parser = parse_strategy)]
        strategy: Option<Strategy>,
    },
    /// Remove one class from a trained run.
    Unlearn {
        /// Class name or numeric id.
        #[arg(long)]
        class: String,
        /// Run directory; defaults to the output directory.
        #[arg(long)]
        run: Option<PathBuf>,
    },
    /// Evaluate the deployed ensemble on the test split.
    Eval {
        #[arg(long)]
        run: Option<PathBuf>,
    },
    /// Run the strategy x setup grid and the replay study.
    Bench {
        /// Seeds per cell, counting up from the training seed.
        #[arg(long)]
        seeds: Option<usize>,
    },
}

fn parse_strategy(s: &str) -> Result<Strategy, String> {
    Strategy::parse(s).map_err(|e| e.to_string())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => e.exit(),
        Err(e) => {
            let f = Failure::new("usage", e.to_string().trim().to_string());
            eprintln!("{}", f.to_json());
            return ExitCode::from(f.exit_code() as u8);
        }
    };
    match commands::run(&cli) {
        Ok(summary) => {
            if !cli.quiet {
                println!("{summary}");
            }
            ExitCode::SUCCESS
        }
        Err(f) => {
            eprintln!("{}", f.to_json());
            ExitCode::from(f.exit_code() as u8)
        }
    }
}
