//! Frozen-encoder evaluation: linear probes scored by AUC-ROC over random
//! splits, paired retrieval accuracy, and efficiency benchmarks.

mod auc;
mod bench;
mod probe;

pub use auc::auc_roc;
pub use bench::{bench_model, BenchEntry, BenchRatios, BenchReport};
pub use probe::{train_logreg, LogReg, ProbeConfig, Standardizer};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::encoders::EncoderParams;
use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::synthdata::{split_random_where, Dataset, DatasetKind, Split};

pub const SPLIT_COUNT: usize = 5;
const MAX_SPLIT_DRAWS: usize = 64;

/// Encoder outputs for every image of `data`.
pub fn extract_features(encoder: &EncoderParams, data: &Dataset) -> Result<Tensor> {
    if encoder.spec.input_dim != data.image_dim {
        return Err(Error::Contract(format!(
            "encoder '{}' takes {} inputs but the {} set has image dim {}",
            encoder.spec.name, encoder.spec.input_dim, data.kind, data.image_dim
        )));
    }
    encoder.forward(&data.x)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitAuc {
    pub split: usize,
    pub auc: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskReport {
    pub task: usize,
    pub name: String,
    pub splits: Vec<SplitAuc>,
    pub mean: f64,
    /// Sample standard deviation (divisor `k - 1`).
    pub std: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub dataset: DatasetKind,
    pub encoder: String,
    pub seed: u64,
    pub probe: ProbeConfig,
    pub tasks: Vec<TaskReport>,
}

pub fn task_name(task: usize) -> String {
    format!("task-{task}")
}

/// Mean and sample standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn both_classes(labels: &[u8], idx: &[usize]) -> bool {
    let pos = idx.iter().filter(|&&i| labels[i] == 1).count();
    pos > 0 && pos < idx.len()
}

/// The evaluation splits for `data`: five random 80/20 partitions, where a
/// partition leaving some labeled task with one class on either side is redrawn.
pub fn evaluation_splits(data: &Dataset, seed: u64) -> Result<Vec<Split>> {
    let labels: Vec<Vec<u8>> = data.tasks.iter().map(|&t| data.task_labels(t)).collect::<Result<_>>()?;
    split_random_where(data.len(), SPLIT_COUNT, seed, MAX_SPLIT_DRAWS, |s| {
        labels.iter().all(|l| both_classes(l, &s.train) && both_classes(l, &s.test))
    })
}

/// Probes every labeled task of `data` on each of five splits and reports
/// per-task AUC mean and standard deviation. Probes run in parallel.
pub fn evaluate_five_splits(
    encoder: &EncoderParams,
    data: &Dataset,
    probe: &ProbeConfig,
    seed: u64,
) -> Result<EvalReport> {
    data.require_kind(&[DatasetKind::Finetune, DatasetKind::Degraded])?;
    probe.validate()?;
    let features = extract_features(encoder, data)?;
    let splits = evaluation_splits(data, seed)?;
    let jobs: Vec<(usize, usize)> = (0..data.tasks.len())
        .flat_map(|t| (0..SPLIT_COUNT).map(move |s| (t, s)))
        .collect();
    let aucs: Vec<f64> = jobs
        .par_iter()
        .map(|&(t, s)| {
            let labels = data.task_labels(data.tasks[t])?;
            let split = &splits[s];
            debug_assert!(split.test.iter().all(|i| split.train.binary_search(i).is_err()));
            let train_y: Vec<u8> = split.train.iter().map(|&i| labels[i]).collect();
            let test_y: Vec<u8> = split.test.iter().map(|&i| labels[i]).collect();
            let model = train_logreg(&features.select_rows(&split.train), &train_y, probe)?;
            let scores = model.decision(&features.select_rows(&split.test))?;
            auc_roc(&scores, &test_y)
        })
        .collect::<Result<_>>()?;
    let tasks = data
        .tasks
        .iter()
        .enumerate()
        .map(|(t, &task)| {
            let per: Vec<f64> = aucs[t * SPLIT_COUNT..(t + 1) * SPLIT_COUNT].to_vec();
            let (mean, std) = mean_std(&per);
            TaskReport {
                task,
                name: task_name(task),
                splits: per.into_iter().enumerate().map(|(split, auc)| SplitAuc { split, auc }).collect(),
                mean,
                std,
            }
        })
        .collect();
    Ok(EvalReport {
        dataset: data.kind,
        encoder: encoder.spec.name.clone(),
        seed,
        probe: probe.clone(),
        tasks,
    })
}

pub const RETRIEVAL_BATCH: usize = 100;

/// Top-1 image-to-text retrieval: the fraction of images whose own text
/// feature is the cosine-nearest among the texts of its batch of `batch` pairs.
/// A trailing partial batch is scored against its own members.
pub fn retrieval_accuracy_features(features: &Tensor, text: &Tensor, batch: usize) -> Result<f64> {
    if features.shape() != text.shape() {
        return Err(Error::dim("retrieval_accuracy", features.shape(), text.shape()));
    }
    if batch == 0 || features.rows() == 0 {
        return Err(Error::Contract("retrieval needs a nonempty batch".into()));
    }
    let n = features.rows();
    let mut hits = 0usize;
    let idx: Vec<usize> = (0..n).collect();
    for chunk in idx.chunks(batch) {
        let u = features.select_rows(chunk);
        let v = text.select_rows(chunk);
        let sim = Tensor::cosine_matrix(&u, &v)?;
        for i in 0..chunk.len() {
            let row = sim.row(i);
            let best = (0..row.len()).fold(0, |b, k| if row[k] > row[b] { k } else { b });
            hits += usize::from(best == i);
        }
    }
    Ok(hits as f64 / n as f64)
}

pub fn retrieval_accuracy(encoder: &EncoderParams, holdout: &Dataset) -> Result<f64> {
    let features = extract_features(encoder, holdout)?;
    retrieval_accuracy_features(&features, holdout.text()?, RETRIEVAL_BATCH)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoders::EncoderSpec;
    use crate::numerics::Rng;
    use crate::synthdata::{gen_degraded_set, gen_finetune_labeled, gen_pretrain_pairs, WorldConfig};

    #[test]
    fn zero_encoder_gives_zero_features() {
        let data = gen_pretrain_pairs(&WorldConfig::default(), 10).unwrap();
        let enc = EncoderParams::zeros(&EncoderSpec::student_default()).unwrap();
        let f = extract_features(&enc, &data).unwrap();
        assert_eq!(f.shape(), (10, 64));
        assert!(f.data().iter().all(|&v| v == 0.0));
        let bad = EncoderParams::zeros(&EncoderSpec::new("b", 3, vec![], 64)).unwrap();
        assert!(extract_features(&bad, &data).is_err());
    }

    #[test]
    fn retrieval_with_oracle_encoder() {
        let data = gen_pretrain_pairs(&WorldConfig::default(), 250).unwrap();
        let v = data.text().unwrap();
        assert_eq!(retrieval_accuracy_features(v, v, 100).unwrap(), 1.0);
    }

    #[test]
    fn degraded_reports_two_tasks_and_std_is_sample_std() {
        let cfg = WorldConfig::default();
        let data = gen_degraded_set(&cfg, 50).unwrap();
        let enc = EncoderParams::init(&EncoderSpec::student_default(), &mut Rng::new(1)).unwrap();
        let r = evaluate_five_splits(&enc, &data, &ProbeConfig::default(), 3).unwrap();
        assert_eq!(r.tasks.iter().map(|t| t.task).collect::<Vec<_>>(), vec![2, 3]);
        for t in &r.tasks {
            assert_eq!(t.splits.len(), SPLIT_COUNT);
            let xs: Vec<f64> = t.splits.iter().map(|s| s.auc).collect();
            let (m, s) = mean_std(&xs);
            assert_eq!((m, s), (t.mean, t.std));
        }
        let again = evaluate_five_splits(&enc, &data, &ProbeConfig::default(), 3).unwrap();
        assert_eq!(r, again);
    }

    #[test]
    fn splits_are_disjoint_and_cover() {
        let data = gen_finetune_labeled(&WorldConfig::default(), 200).unwrap();
        for s in evaluation_splits(&data, 0).unwrap() {
            assert!(s.test.iter().all(|i| !s.train.contains(i)));
            assert_eq!(s.test.len() + s.train.len(), 200);
        }
    }

    #[test]
    fn mean_std_reference() {
        let (m, s) = mean_std(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert!((s - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
    }
}
