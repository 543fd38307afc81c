use std::fmt::Write as _;

use rayon::prelude::*;
use serde::Serialize;
use vlcd_core::evaluation::task_name;
use vlcd_core::training::{run_predistill, run_teacher_pretrain, run_vlcd, Checkpoint, StudentInit, TrainConfig};

use crate::cli::AblateArgs;
use crate::commands::{evaluate_student, Context, Datasets, StudentEval};
use crate::config::parse_lambdas;
use crate::error::CliError;
use crate::layout::write_atomic;

pub const ABLATION_HEADER: &str = "arm,lambda,predistill,task,mean_auc,std_auc";

#[derive(Clone, Debug, Serialize)]
pub struct AblationArm {
    pub arm: String,
    pub lambda: f64,
    pub predistill: bool,
    /// `None` when the arm completed.
    pub error: Option<String>,
    pub eval: Option<StudentEval>,
}

#[derive(Serialize)]
struct AblationFile<'a> {
    config_hash: &'a str,
    seed: u64,
    arms: &'a [AblationArm],
}

pub fn arm_name(lambda: f64, predistill: bool) -> String {
    format!("lambda-{lambda}-{}", if predistill { "pd" } else { "nopd" })
}

fn run_arm(
    ctx: &Context,
    data: &Datasets,
    teacher: &Checkpoint,
    predistilled: Option<&Checkpoint>,
    lambda: f64,
) -> Result<StudentEval, CliError> {
    let arm = arm_name(lambda, predistilled.is_some());
    let cfg = TrainConfig {
        lambda,
        ..ctx.cfg.vlcd_train.clone()
    };
    let init = predistilled.map_or(StudentInit::Fresh, StudentInit::From);
    let outcome = run_vlcd(&cfg, teacher, &ctx.cfg.student, init, &data.pretrain).map_err(CliError::stage(&arm))?;
    let dir = ctx.dir.arm(&arm);
    let student = ctx.store(outcome, &dir.join("student.ckpt"), &dir.join("log.jsonl"), &arm)?;
    let eval = evaluate_student(&student, data, &ctx.cfg).map_err(CliError::stage(&arm))?;
    ctx.write_json(&dir.join("eval.json"), &eval)?;
    Ok(eval)
}

pub fn cmd_ablate(args: &AblateArgs) -> Result<(), CliError> {
    let ctx = Context::open(&args.common)?;
    let lambdas = match &args.lambdas {
        Some(csv) => parse_lambdas(csv)?,
        None => ctx.cfg.lambdas.clone(),
    };
    if lambdas.is_empty() || lambdas.iter().any(|l| !(*l >= 0.0 && l.is_finite())) {
        return Err(CliError::Config("lambdas must be a nonempty list of finite values >= 0".into()));
    }
    if args.jobs == 0 {
        return Err(CliError::Config("--jobs must be >= 1".into()));
    }
    let data = Datasets::obtain(&ctx, args.gen)?;
    let cfg = &ctx.cfg;
    let teacher = ctx.stage("teacher", || run_teacher_pretrain(&cfg.teacher_train, &cfg.teacher, &data.pretrain))?;
    let predistilled = if args.no_predistill {
        None
    } else {
        Some(ctx.stage("predistill", || {
            run_predistill(&cfg.predistill_train, &teacher, &cfg.student, &data.unlabeled)
        })?)
    };

    let variants: &[bool] = if args.no_predistill { &[false] } else { &[true, false] };
    let arms: Vec<(f64, bool)> = lambdas
        .iter()
        .flat_map(|&l| variants.iter().map(move |&p| (l, p)))
        .collect();
    eprintln!("[ablate] {} arms, up to {} at a time", arms.len(), args.jobs);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(args.jobs)
        .build()
        .map_err(|e| CliError::Run(format!("cannot start worker pool: {e}")))?;
    let results: Vec<AblationArm> = pool.install(|| {
        arms.par_iter()
            .map(|&(lambda, pd)| {
                let init = if pd { predistilled.as_ref() } else { None };
                let outcome = run_arm(&ctx, &data, &teacher, init, lambda);
                AblationArm {
                    arm: arm_name(lambda, pd),
                    lambda,
                    predistill: pd,
                    error: outcome.as_ref().err().map(|e| e.to_string()),
                    eval: outcome.ok(),
                }
            })
            .collect()
    });

    let mut csv = format!("{ABLATION_HEADER}\n");
    for a in &results {
        match &a.eval {
            Some(e) => {
                for t in &e.clean.tasks {
                    let _ = writeln!(csv, "{},{},{},{},{},{}", a.arm, a.lambda, a.predistill, t.name, t.mean, t.std);
                }
            }
            None => {
                for &t in &data.finetune.tasks {
                    let _ = writeln!(csv, "{},{},{},{},nan,nan", a.arm, a.lambda, a.predistill, task_name(t));
                }
            }
        }
    }
    write_atomic(&ctx.dir.report("ablation.csv"), csv.as_bytes())?;
    ctx.write_json(
        &ctx.dir.report("ablation.json"),
        &AblationFile {
            config_hash: &ctx.hash,
            seed: cfg.seed,
            arms: &results,
        },
    )?;

    println!("ablation ({} arms, config {}):", results.len(), ctx.hash);
    for a in &results {
        match &a.eval {
            Some(e) => {
                let mean = e.clean.tasks.iter().map(|t| t.mean).sum::<f64>() / e.clean.tasks.len() as f64;
                println!("  {:<22} mean AUC {:.3}  retrieval {:.3}", a.arm, mean, e.retrieval);
            }
            None => println!("  {:<22} FAILED: {}", a.arm, a.error.as_deref().unwrap_or("")),
        }
    }
    let failed = results.iter().filter(|a| a.eval.is_none()).count();
    if failed > 0 {
        return Err(CliError::Run(format!("{failed} of {} ablation arms failed", results.len())));
    }
    Ok(())
}
