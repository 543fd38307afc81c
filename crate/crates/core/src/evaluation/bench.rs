use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::encoders::EncoderParams;
use crate::error::{Error, Result};
use crate::numerics::{Rng, Tensor};

/// Absolute efficiency figures of one encoder.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchEntry {
    pub name: String,
    pub params: usize,
    pub flops: u64,
    /// Median samples per second over the repeats.
    pub throughput: f64,
    pub repeat_throughputs: Vec<f64>,
}

/// Student figures relative to the teacher.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchRatios {
    /// teacher params / student params, printed as `÷x`.
    pub param_reduction: f64,
    /// teacher flops / student flops, printed as `÷x`.
    pub flops_reduction: f64,
    /// student throughput / teacher throughput, printed as `×x`.
    pub speedup: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub batch_size: usize,
    pub repeats: usize,
    pub teacher: BenchEntry,
    pub student: BenchEntry,
    pub ratios: BenchRatios,
}

impl BenchReport {
    pub fn new(batch_size: usize, repeats: usize, teacher: BenchEntry, student: BenchEntry) -> Self {
        let ratios = BenchRatios {
            param_reduction: teacher.params as f64 / student.params as f64,
            flops_reduction: teacher.flops as f64 / student.flops as f64,
            speedup: student.throughput / teacher.throughput,
        };
        Self {
            batch_size,
            repeats,
            teacher,
            student,
            ratios,
        }
    }

    pub fn csv(&self) -> String {
        let mut out = String::from("model,params,flops,throughput,params_ratio,flops_ratio,throughput_ratio\n");
        out.push_str(&format!(
            "{},{},{},{},1,1,1\n",
            self.teacher.name, self.teacher.params, self.teacher.flops, self.teacher.throughput
        ));
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            self.student.name,
            self.student.params,
            self.student.flops,
            self.student.throughput,
            self.ratios.param_reduction,
            self.ratios.flops_reduction,
            self.ratios.speedup
        ));
        out
    }

    /// Human-readable table with `÷` / `×` annotations.
    pub fn table(&self) -> String {
        format!(
            "{:<12} {:>10} {:>14} {:>14}\n{:<12} {:>10} {:>14} {:>14.0}\n{:<12} {:>10} {:>14} {:>14.0}\n{:<12} {:>10} {:>14} {:>14}\n",
            "model",
            "params",
            "flops",
            "samples/s",
            self.teacher.name,
            self.teacher.params,
            self.teacher.flops,
            self.teacher.throughput,
            self.student.name,
            self.student.params,
            self.student.flops,
            self.student.throughput,
            "",
            format!("÷{:.2}", self.ratios.param_reduction),
            format!("÷{:.2}", self.ratios.flops_reduction),
            format!("×{:.2}", self.ratios.speedup),
        )
    }
}

fn median(xs: &[f64]) -> f64 {
    let mut s = xs.to_vec();
    s.sort_by(f64::total_cmp);
    let m = s.len() / 2;
    if s.len() % 2 == 1 {
        s[m]
    } else {
        0.5 * (s[m - 1] + s[m])
    }
}

/// Counts parameters and FLOPs and times forward passes on a random batch.
///
/// Each repeat runs whole forward passes until at least `min_time` has
/// elapsed and records samples per second.
pub fn bench_model(
    params: &EncoderParams,
    batch_size: usize,
    repeats: usize,
    min_time: Duration,
) -> Result<BenchEntry> {
    if repeats < 3 {
        return Err(Error::Contract(format!("bench needs at least 3 repeats, got {repeats}")));
    }
    if batch_size == 0 {
        return Err(Error::Contract("bench batch size must be >= 1".into()));
    }
    let spec = &params.spec;
    let mut rng = Rng::substream(0, "bench/input");
    let x = Tensor::new(
        batch_size,
        spec.input_dim,
        (0..batch_size * spec.input_dim).map(|_| rng.normal()).collect(),
    )?;
    let mut sink = 0.0;
    sink += params.forward(&x)?.data()[0];
    let mut rates = Vec::with_capacity(repeats);
    for _ in 0..repeats {
        let start = Instant::now();
        let mut passes = 0u64;
        while passes == 0 || start.elapsed() < min_time {
            sink += std::hint::black_box(params.forward(std::hint::black_box(&x))?).data()[0];
            passes += 1;
        }
        let secs = start.elapsed().as_secs_f64();
        rates.push((passes * batch_size as u64) as f64 / secs);
    }
    std::hint::black_box(sink);
    Ok(BenchEntry {
        name: spec.name.clone(),
        params: spec.count_params(),
        flops: spec.estimate_flops(batch_size),
        throughput: median(&rates),
        repeat_throughputs: rates,
    })
}
