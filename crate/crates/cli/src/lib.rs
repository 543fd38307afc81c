//! Experiment runner: dataset generation, the three-stage training protocol,
//! frozen-encoder evaluation, the distillation-weight ablation, benchmarks and
//! a self-check battery. Every command reads one JSON config and writes into
//! an experiment directory.

pub mod cli;
pub mod commands;
pub mod config;
pub mod error;
pub mod layout;
pub mod verify;

pub use error::CliError;

use cli::{Cli, Command};

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Gen(a) => commands::cmd_gen(&a),
        Command::Pipeline(a) => commands::cmd_pipeline(&a),
        Command::Ablate(a) => commands::cmd_ablate(&a),
        Command::Bench(a) => commands::cmd_bench(&a),
        Command::Verify(a) => commands::cmd_verify(&a),
    }
}
