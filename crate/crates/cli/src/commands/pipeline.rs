use std::fmt::Write as _;

use serde::Serialize;
use vlcd_core::evaluation::{retrieval_accuracy, EvalReport};
use vlcd_core::training::{
    fresh_student, mean_feature_cosine, run_predistill, run_teacher_pretrain, run_vlcd, Checkpoint, StudentInit,
};

use crate::cli::PipelineArgs;
use crate::commands::bench::write_bench;
use crate::commands::{evaluate_student, final_epoch_loss, Context, Datasets, StudentEval};
use crate::error::CliError;
use crate::layout::write_atomic;

pub const RESULTS_HEADER: &str = "dataset,task,mean_auc,std_auc,splits";

#[derive(Debug, Serialize)]
struct StageSummary {
    stage: String,
    encoder: String,
    init: String,
    epochs: usize,
    final_epoch_loss: f64,
    loss_digest: String,
    checkpoint_digest: String,
}

#[derive(Debug, Serialize)]
struct PredistillCosine {
    fresh: f64,
    predistilled: f64,
}

#[derive(Debug, Serialize)]
struct Summary {
    config_hash: String,
    seed: u64,
    lambda: f64,
    alpha: f64,
    tau: f64,
    predistill: bool,
    stages: Vec<StageSummary>,
    teacher_retrieval: f64,
    student: StudentEval,
    #[serde(skip_serializing_if = "Option::is_none")]
    predistill_cosine: Option<PredistillCosine>,
}

/// Rows of `results.csv` for one report, tasks in ascending order.
pub fn results_rows(report: &EvalReport, out: &mut String) {
    for t in &report.tasks {
        let splits: Vec<String> = t.splits.iter().map(|s| s.auc.to_string()).collect();
        let _ = writeln!(out, "{},{},{},{},{}", report.dataset, t.name, t.mean, t.std, splits.join(";"));
    }
}

fn stage_summary(ctx: &Context, name: &str, c: &Checkpoint) -> Result<StageSummary, CliError> {
    Ok(StageSummary {
        stage: name.to_string(),
        encoder: c.params.spec.name.clone(),
        init: c.meta.init.clone(),
        epochs: c.meta.epoch,
        final_epoch_loss: final_epoch_loss(&ctx.dir.log(name))?,
        loss_digest: c.meta.loss_digest.clone(),
        checkpoint_digest: c.digest().map_err(|e| CliError::Io(e.to_string()))?,
    })
}

pub fn cmd_pipeline(args: &PipelineArgs) -> Result<(), CliError> {
    let ctx = Context::open(&args.common)?;
    let data = Datasets::obtain(&ctx, args.gen)?;
    let cfg = &ctx.cfg;

    let teacher = ctx.stage("teacher", || run_teacher_pretrain(&cfg.teacher_train, &cfg.teacher, &data.pretrain))?;
    let mut stages = vec![stage_summary(&ctx, "teacher", &teacher)?];

    let predistilled = if args.no_predistill {
        None
    } else {
        let c = ctx.stage("predistill", || {
            run_predistill(&cfg.predistill_train, &teacher, &cfg.student, &data.unlabeled)
        })?;
        stages.push(stage_summary(&ctx, "predistill", &c)?);
        Some(c)
    };
    let init = match &predistilled {
        Some(c) => StudentInit::From(c),
        None => StudentInit::Fresh,
    };
    let student = ctx.stage("vlcd", || run_vlcd(&cfg.vlcd_train, &teacher, &cfg.student, init, &data.pretrain))?;
    stages.push(stage_summary(&ctx, "vlcd", &student)?);

    eprintln!("[evaluate] probing clean and degraded tasks");
    let eval = evaluate_student(&student, &data, cfg).map_err(CliError::stage("evaluate"))?;
    let teacher_retrieval = retrieval_accuracy(&teacher.params, &data.holdout).map_err(CliError::stage("evaluate"))?;
    let predistill_cosine = match &predistilled {
        Some(c) => {
            let x = &data.unlabeled_holdout.x;
            let fresh = fresh_student(&cfg.student, cfg.seed).map_err(CliError::stage("evaluate"))?;
            Some(PredistillCosine {
                fresh: mean_feature_cosine(&fresh, &teacher.params, x).map_err(CliError::stage("evaluate"))?,
                predistilled: mean_feature_cosine(&c.params, &teacher.params, x).map_err(CliError::stage("evaluate"))?,
            })
        }
        None => None,
    };

    let mut csv = format!("{RESULTS_HEADER}\n");
    results_rows(&eval.clean, &mut csv);
    results_rows(&eval.degraded, &mut csv);
    write_atomic(&ctx.dir.report("results.csv"), csv.as_bytes())?;

    let summary = Summary {
        config_hash: ctx.hash.clone(),
        seed: cfg.seed,
        lambda: cfg.vlcd_train.lambda,
        alpha: cfg.vlcd_train.alpha,
        tau: cfg.vlcd_train.tau,
        predistill: predistilled.is_some(),
        stages,
        teacher_retrieval,
        student: eval,
        predistill_cosine,
    };
    ctx.write_json(&ctx.dir.report("summary.json"), &summary)?;

    eprintln!("[bench] timing teacher and student");
    let bench = write_bench(&ctx, &teacher, &student)?;

    println!("results ({}, config {}):", ctx.dir.root.display(), ctx.hash);
    for r in [&summary.student.clean, &summary.student.degraded] {
        for t in &r.tasks {
            println!("  {:<9} {:<7} AUC {:.3} ± {:.3}", r.dataset.as_str(), t.name, t.mean, t.std);
        }
    }
    println!(
        "  retrieval: student {:.3}, teacher {:.3}",
        summary.student.retrieval, summary.teacher_retrieval
    );
    if let Some(c) = &summary.predistill_cosine {
        println!("  teacher/student cosine: fresh {:.3}, predistilled {:.3}", c.fresh, c.predistilled);
    }
    print!("{}", bench.table());
    Ok(())
}
