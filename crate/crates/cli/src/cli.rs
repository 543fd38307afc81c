use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "vlcd", version, about = "Desk-scale text-anchored contrastive distillation experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic datasets into <out>/datasets.
    Gen(CommonArgs),
    /// Teacher pretraining, predistillation, distillation, evaluation and benchmark.
    Pipeline(PipelineArgs),
    /// Distillation-weight sweep with and without predistillation.
    Ablate(AblateArgs),
    /// Parameter, FLOP and throughput comparison of teacher and student checkpoints.
    Bench(CommonArgs),
    /// Run the fast invariant battery.
    Verify(VerifyArgs),
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// JSON experiment config; defaults apply to every missing key.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Experiment directory.
    #[arg(long, value_name = "DIR", default_value = "runs/default")]
    pub out: PathBuf,
    /// Global seed, overriding the config.
    #[arg(long, value_name = "N")]
    pub seed: Option<u64>,
    /// Replace artifacts produced under a different configuration.
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Clone, Args)]
pub struct PipelineArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Generate datasets first when they are missing.
    #[arg(long)]
    pub gen: bool,
    /// Start distillation from a fresh student instead of the predistilled one.
    #[arg(long)]
    pub no_predistill: bool,
}

#[derive(Debug, Clone, Args)]
pub struct AblateArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Generate datasets first when they are missing.
    #[arg(long)]
    pub gen: bool,
    /// Comma-separated distillation weights, overriding the config.
    #[arg(long, value_name = "CSV")]
    pub lambdas: Option<String>,
    /// Run only the arms without predistillation.
    #[arg(long)]
    pub no_predistill: bool,
    /// Maximum number of arms trained concurrently.
    #[arg(long, value_name = "N", default_value_t = 1)]
    pub jobs: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Fault {
    /// Differentiate a sign-flipped grounding loss.
    GndSign,
}

#[derive(Debug, Clone, Args)]
pub struct VerifyArgs {
    /// Seeded cases per gradient check.
    #[arg(long, value_name = "N", default_value_t = 20)]
    pub cases: usize,
    #[arg(long, value_name = "FAULT", hide = true)]
    pub inject_fault: Option<Fault>,
}
