//! Acceptance suite. Prints one PASS/FAIL line per criterion, then fails if any criterion failed.
//!
//! Runs the full default desk pipeline twice, the default ablation once and the
//! three-seed trend study, so it takes a few minutes.

use std::fs;
use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use vlcd_cli::commands::Datasets;
use vlcd_cli::config::ExperimentConfig;
use vlcd_cli::verify::{auc_check, gradient_check, loss_identity_failures, GradLoss, GRAD_TOLERANCE};
use vlcd_core::encoders::EncoderSpec;
use vlcd_core::evaluation::retrieval_accuracy;
use vlcd_core::training::{
    fresh_student, load_checkpoint, mean_feature_cosine, run_no_kd, run_predistill, run_teacher_pretrain, run_vlcd,
    Checkpoint, CheckpointError, Stage, StudentInit, TrainConfig,
};

const TREND_SEEDS: [u64; 3] = [0, 1, 2];
const DESK_LIMIT: Duration = Duration::from_secs(600);
const GRADIENT_LIMIT: Duration = Duration::from_secs(120);

type Verdict = Result<String, String>;

fn say(line: &str) {
    let mut e = std::io::stderr();
    let _ = writeln!(e, "{line}");
}

fn criterion(id: &str, title: &str, f: impl FnOnce() -> Verdict) -> bool {
    let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        let msg = p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panic".into());
        Err(format!("panicked: {msg}"))
    });
    let (tag, detail, ok) = match outcome {
        Ok(d) => ("PASS", d, true),
        Err(d) => ("FAIL", d, false),
    };
    say(&format!("ACCEPTANCE {id} {tag} {title}: {detail}"));
    ok
}

fn check(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn vlcd(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_vlcd"))
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    check(
        out.status.success(),
        format!("vlcd {} failed: {}", args.join(" "), String::from_utf8_lossy(&out.stderr)),
    )
}

struct DeskRuns {
    a: PathBuf,
    b: PathBuf,
    elapsed: Duration,
    setup: Result<(), String>,
}

fn desk_runs(root: &Path) -> DeskRuns {
    let a = root.join("desk-a");
    let b = root.join("desk-b");
    let start = Instant::now();
    let first = vlcd(&["pipeline", "--gen", "--out", a.to_str().unwrap()]);
    let elapsed = start.elapsed();
    let setup = first
        .and_then(|_| vlcd(&["pipeline", "--gen", "--out", b.to_str().unwrap()]))
        .and_then(|_| vlcd(&["ablate", "--out", a.to_str().unwrap(), "--jobs", "2"]));
    DeskRuns { a, b, elapsed, setup }
}

fn read_json(p: &Path) -> Result<serde_json::Value, String> {
    let bytes = fs::read(p).map_err(|e| format!("{}: {e}", p.display()))?;
    serde_json::from_slice(&bytes).map_err(|e| e.to_string())
}

fn gradients() -> Verdict {
    let start = Instant::now();
    let mut parts = Vec::new();
    for loss in GradLoss::ALL {
        let r = gradient_check(loss, 100, None);
        if !r.passed {
            return Err(r.line());
        }
        parts.push(format!("{} ok", loss.name()));
    }
    let t = start.elapsed();
    check(t <= GRADIENT_LIMIT, format!("took {t:?}"))?;
    Ok(format!("6 losses x 100 cases within {GRAD_TOLERANCE:e} in {:.1}s", t.as_secs_f64()))
}

fn identities() -> Verdict {
    let failures = loss_identity_failures(200).map_err(|e| e.to_string())?;
    check(failures.is_empty(), failures.join("; "))?;
    Ok("200 random batches, all identities hold".into())
}

fn auc_oracle() -> Verdict {
    let r = auc_check(1000);
    check(r.passed, r.line())?;
    Ok(r.detail)
}

fn determinism(runs: &DeskRuns) -> Verdict {
    runs.setup.clone()?;
    let mut files = vec!["reports/results.csv".to_string()];
    for s in ["teacher", "predistill", "vlcd"] {
        files.push(format!("logs/{s}.jsonl"));
        files.push(format!("checkpoints/{s}.ckpt"));
    }
    for f in &files {
        let a = fs::read(runs.a.join(f)).map_err(|e| format!("{f}: {e}"))?;
        let b = fs::read(runs.b.join(f)).map_err(|e| format!("{f}: {e}"))?;
        check(a == b, format!("{f} differs between runs"))?;
    }
    Ok(format!("{} artifacts byte-identical across two desk runs", files.len()))
}

fn corrupted(bytes: &[u8]) -> Vec<(&'static str, Vec<u8>, fn(&CheckpointError) -> bool)> {
    let meta_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let meta: serde_json::Value = serde_json::from_slice(&bytes[16..16 + meta_len]).unwrap();
    let mut reshaped = meta.clone();
    reshaped["tensors"][0]["rows"] = serde_json::json!(meta["tensors"][0]["rows"].as_u64().unwrap() + 1);
    let new_meta = serde_json::to_vec(&reshaped).unwrap();
    let mut shape = bytes[..8].to_vec();
    shape.extend_from_slice(&(new_meta.len() as u64).to_le_bytes());
    shape.extend_from_slice(&new_meta);
    shape.extend_from_slice(&bytes[16 + meta_len..]);

    let mut magic = bytes.to_vec();
    magic[1] = b'X';
    let mut version = bytes.to_vec();
    version[4] = 9;
    let mut garbage = bytes.to_vec();
    garbage[16] = b'#';
    let mut trailing = bytes.to_vec();
    trailing.push(0);
    vec![
        ("bad magic", magic, |e| matches!(e, CheckpointError::BadMagic(_))),
        ("future version", version, |e| matches!(e, CheckpointError::UnsupportedVersion(9))),
        ("truncated header", bytes[..10].to_vec(), |e| matches!(e, CheckpointError::Truncated { .. })),
        ("truncated tensors", bytes[..bytes.len() - 3].to_vec(), |e| matches!(e, CheckpointError::Truncated { .. })),
        ("garbled metadata", garbage, |e| matches!(e, CheckpointError::Metadata(_))),
        ("inconsistent shapes", shape, |e| matches!(e, CheckpointError::Shape(_))),
        ("trailing bytes", trailing, |e| matches!(e, CheckpointError::TrailingBytes(1))),
    ]
}

fn checkpoint_roundtrip(runs: &DeskRuns, scratch: &Path) -> Verdict {
    runs.setup.clone()?;
    let mut n = 0;
    for s in ["teacher", "predistill", "vlcd"] {
        let path = runs.a.join(format!("checkpoints/{s}.ckpt"));
        let original = fs::read(&path).map_err(|e| e.to_string())?;
        let c = load_checkpoint(&path).map_err(|e| e.to_string())?;
        let copy = scratch.join(format!("{s}.ckpt"));
        c.save(&copy).map_err(|e| e.to_string())?;
        check(fs::read(&copy).unwrap() == original, format!("{s}: save-load-save changed bytes"))?;
        for (what, bytes, expected) in corrupted(&original) {
            match Checkpoint::from_bytes(&bytes) {
                Err(e) if expected(&e) => n += 1,
                Err(e) => return Err(format!("{s}/{what}: wrong error {e:?}")),
                Ok(_) => return Err(format!("{s}/{what}: accepted")),
            }
        }
    }
    Ok(format!("3 trained checkpoints bit-identical; {n} corruptions rejected with typed errors"))
}

fn protocol_shape(runs: &DeskRuns) -> Verdict {
    runs.setup.clone()?;
    let csv = fs::read_to_string(runs.a.join("reports/results.csv")).map_err(|e| e.to_string())?;
    let rows: Vec<Vec<&str>> = csv.lines().skip(1).map(|l| l.split(',').collect()).collect();
    let keys: Vec<(&str, &str)> = rows.iter().map(|r| (r[0], r[1])).collect();
    let expected = [
        ("finetune", "task-0"),
        ("finetune", "task-1"),
        ("finetune", "task-2"),
        ("finetune", "task-3"),
        ("finetune", "task-4"),
        ("degraded", "task-2"),
        ("degraded", "task-3"),
    ];
    check(keys == expected, format!("results rows {keys:?}"))?;
    for r in &rows {
        let splits: Vec<f64> = r[4].split(';').map(|s| s.parse().unwrap()).collect();
        check(splits.len() == 5, format!("{r:?} has {} splits", splits.len()))?;
        let (mean, std) = vlcd_core::evaluation::mean_std(&splits);
        check(
            mean.to_string() == r[2] && std.to_string() == r[3],
            format!("{r:?}: mean/std disagree with splits"),
        )?;
    }

    let abl = fs::read_to_string(runs.a.join("reports/ablation.csv")).map_err(|e| e.to_string())?;
    let mut lines = abl.lines();
    check(lines.next() == Some("arm,lambda,predistill,task,mean_auc,std_auc"), "ablation header")?;
    let arms: Vec<Vec<String>> = lines.map(|l| l.split(',').map(str::to_string).collect()).collect();
    let mut order = Vec::new();
    for r in &arms {
        check(r[4] != "nan", format!("arm {} failed", r[0]))?;
        if order.last() != Some(&(r[1].clone(), r[2].clone())) {
            order.push((r[1].clone(), r[2].clone()));
        }
    }
    let want: Vec<(String, String)> = ["0.01", "0.1", "1", "10"]
        .iter()
        .flat_map(|l| ["true", "false"].map(|p| (l.to_string(), p.to_string())))
        .collect();
    check(order == want, format!("arm order {order:?}"))?;
    check(arms.len() == 8 * 5, format!("{} ablation rows", arms.len()))?;
    Ok("7 result rows x 5 splits; 8 ablation arms x 5 tasks".into())
}

fn efficiency(runs: &DeskRuns) -> Verdict {
    runs.setup.clone()?;
    let ratio = EncoderSpec::teacher_default().count_params() as f64 / EncoderSpec::student_default().count_params() as f64;
    check((3.0..=5.0).contains(&ratio), format!("param ratio {ratio}"))?;
    let bench = read_json(&runs.a.join("reports/bench.json"))?;
    let batch = bench["batch_size"].as_u64().unwrap_or(0);
    let t = bench["teacher"]["throughput"].as_f64().unwrap_or(f64::NAN);
    let s = bench["student"]["throughput"].as_f64().unwrap_or(f64::NAN);
    check(batch == 64, format!("bench batch {batch}"))?;
    check(s > t, format!("student {s:.0}/s vs teacher {t:.0}/s"))?;
    Ok(format!("param ratio {ratio:.2}; throughput student {s:.0}/s > teacher {t:.0}/s at batch 64"))
}

struct SeedTrend {
    seed: u64,
    vlcd: f64,
    no_kd: f64,
    lambda10: f64,
    cos_fresh: f64,
    cos_predistilled: f64,
}

fn trend_for_seed(seed: u64) -> Result<SeedTrend, String> {
    let e = |e: vlcd_core::Error| e.to_string();
    let cfg = ExperimentConfig {
        seed,
        ..ExperimentConfig::default()
    }
    .resolve()
    .map_err(|e| e.to_string())?;
    let data = Datasets::generate(&cfg).map_err(|e| e.to_string())?;
    let teacher = run_teacher_pretrain(&cfg.teacher_train, &cfg.teacher, &data.pretrain).map_err(e)?.checkpoint;
    let pd = run_predistill(&cfg.predistill_train, &teacher, &cfg.student, &data.unlabeled)
        .map_err(e)?
        .checkpoint;
    let arm = |lambda: f64| -> Result<f64, String> {
        let c = TrainConfig {
            lambda,
            ..cfg.vlcd_train.clone()
        };
        let out = run_vlcd(&c, &teacher, &cfg.student, StudentInit::From(&pd), &data.pretrain).map_err(e)?;
        retrieval_accuracy(&out.checkpoint.params, &data.holdout).map_err(e)
    };
    let no_kd_cfg = TrainConfig {
        stage: Stage::NoKd,
        ..cfg.vlcd_train.clone()
    };
    let no_kd = run_no_kd(&no_kd_cfg, &cfg.student, StudentInit::Fresh, &data.pretrain).map_err(e)?;
    let fresh = fresh_student(&cfg.student, seed).map_err(e)?;
    let x = &data.unlabeled_holdout.x;
    Ok(SeedTrend {
        seed,
        vlcd: arm(cfg.vlcd_train.lambda)?,
        lambda10: arm(10.0)?,
        no_kd: retrieval_accuracy(&no_kd.checkpoint.params, &data.holdout).map_err(e)?,
        cos_fresh: mean_feature_cosine(&fresh, &teacher.params, x).map_err(e)?,
        cos_predistilled: mean_feature_cosine(&pd.params, &teacher.params, x).map_err(e)?,
    })
}

#[test]
fn acceptance_criteria() {
    let scratch = tempfile::tempdir().unwrap();
    let mut ok = Vec::new();
    ok.push(criterion("1", "gradient correctness", gradients));
    ok.push(criterion("2", "loss identities", identities));
    ok.push(criterion("3", "AUC oracle equivalence", auc_oracle));

    say("running the default desk pipeline twice and the default ablation ...");
    let runs = desk_runs(scratch.path());
    ok.push(criterion("4", "pipeline determinism", || determinism(&runs)));
    ok.push(criterion("5", "checkpoint roundtrip", || checkpoint_roundtrip(&runs, scratch.path())));
    ok.push(criterion("6", "protocol shape", || protocol_shape(&runs)));
    ok.push(criterion("7", "efficiency analog", || efficiency(&runs)));

    say("training the pinned-seed trend study ...");
    let trends: Vec<Result<SeedTrend, String>> = TREND_SEEDS.iter().map(|&s| trend_for_seed(s)).collect();
    let trends: Result<Vec<SeedTrend>, String> = trends.into_iter().collect();
    for t in trends.iter().flatten() {
        say(&format!(
            "  seed {}: retrieval vlcd {:.3} no-kd {:.3} lambda10 {:.3}; cosine fresh {:.3} predistilled {:.3}",
            t.seed, t.vlcd, t.no_kd, t.lambda10, t.cos_fresh, t.cos_predistilled
        ));
    }
    ok.push(criterion("8a", "distilled student retrieval >= no-KD (3-seed mean)", || {
        let t = trends.as_ref().map_err(|e| e.clone())?;
        let n = t.len() as f64;
        let v = t.iter().map(|s| s.vlcd).sum::<f64>() / n;
        let b = t.iter().map(|s| s.no_kd).sum::<f64>() / n;
        check(v >= b, format!("mean {v:.4} < {b:.4}"))?;
        Ok(format!("mean {v:.4} >= {b:.4}"))
    }));
    ok.push(criterion("8b", "predistillation raises teacher/student cosine", || {
        let t = trends.as_ref().map_err(|e| e.clone())?;
        for s in t {
            check(
                s.cos_predistilled > s.cos_fresh,
                format!("seed {}: {:.4} <= {:.4}", s.seed, s.cos_predistilled, s.cos_fresh),
            )?;
        }
        Ok(t.iter()
            .map(|s| format!("seed {}: {:.3} > {:.3}", s.seed, s.cos_predistilled, s.cos_fresh))
            .collect::<Vec<_>>()
            .join(", "))
    }));
    ok.push(criterion("8c", "lambda=10 retrieval <= lambda=0.1 on every pinned seed", || {
        let t = trends.as_ref().map_err(|e| e.clone())?;
        for s in t {
            check(
                s.lambda10 <= s.vlcd,
                format!("seed {}: {:.4} > {:.4}", s.seed, s.lambda10, s.vlcd),
            )?;
        }
        Ok(t.iter()
            .map(|s| format!("seed {}: {:.3} <= {:.3}", s.seed, s.lambda10, s.vlcd))
            .collect::<Vec<_>>()
            .join(", "))
    }));
    ok.push(criterion("8d", "full desk pipeline within 10 minutes", || {
        runs.setup.clone()?;
        check(runs.elapsed <= DESK_LIMIT, format!("{:?}", runs.elapsed))?;
        Ok(format!("{:.1}s", runs.elapsed.as_secs_f64()))
    }));

    let failed = ok.iter().filter(|p| !**p).count();
    say(&format!("ACCEPTANCE SUMMARY {} of {} criteria passed", ok.len() - failed, ok.len()));
    assert_eq!(failed, 0, "{failed} acceptance criteria failed");
}
