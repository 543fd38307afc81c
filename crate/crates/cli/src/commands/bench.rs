use std::time::Duration;

use serde::Serialize;
use vlcd_core::evaluation::{bench_model, BenchReport};
use vlcd_core::training::{load_checkpoint, Checkpoint};

use crate::cli::CommonArgs;
use crate::commands::Context;
use crate::error::CliError;
use crate::layout::{write_atomic, ExperimentDir};

#[derive(Serialize)]
struct BenchFile<'a> {
    config_hash: &'a str,
    seed: u64,
    #[serde(flatten)]
    report: &'a BenchReport,
}

/// Times both encoders and writes `reports/bench.json` and `reports/bench.csv`.
pub(crate) fn write_bench(ctx: &Context, teacher: &Checkpoint, student: &Checkpoint) -> Result<BenchReport, CliError> {
    let b = &ctx.cfg.bench;
    let min_time = Duration::from_millis(b.min_time_ms);
    let run = |c: &Checkpoint| bench_model(&c.params, b.batch_size, b.repeats, min_time);
    let report = BenchReport::new(
        b.batch_size,
        b.repeats,
        run(teacher).map_err(CliError::stage("bench"))?,
        run(student).map_err(CliError::stage("bench"))?,
    );
    ctx.write_json(
        &ctx.dir.report("bench.json"),
        &BenchFile {
            config_hash: &ctx.hash,
            seed: ctx.cfg.seed,
            report: &report,
        },
    )?;
    write_atomic(&ctx.dir.report("bench.csv"), report.csv().as_bytes())?;
    Ok(report)
}

fn require(dir: &ExperimentDir, stage: &str) -> Result<Checkpoint, CliError> {
    let path = dir.checkpoint(stage);
    if !path.exists() {
        return Err(CliError::MissingArtifact(format!(
            "checkpoint {} not found; run `vlcd pipeline` first",
            path.display()
        )));
    }
    load_checkpoint(&path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

pub fn cmd_bench(args: &CommonArgs) -> Result<(), CliError> {
    let ctx = Context::attach(args)?;
    let teacher = require(&ctx.dir, "teacher")?;
    let student = require(&ctx.dir, "vlcd")?;
    for c in [&teacher, &student] {
        if c.meta.config_hash != ctx.hash && !args.force {
            return Err(CliError::Config(format!(
                "checkpoint '{}' was produced under config {} but the current config is {}; pass --force to bench anyway",
                c.meta.stage, c.meta.config_hash, ctx.hash
            )));
        }
    }
    let report = write_bench(&ctx, &teacher, &student)?;
    print!("{}", report.table());
    Ok(())
}
