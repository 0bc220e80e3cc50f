use std::time::Instant;

use serde::Serialize;

use crate::analysis::count_macs;
use crate::error::Result;
use crate::model::{Model, STAGES};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LatencyStats {
    pub name: String,
    pub median_ms: f64,
    pub p95_ms: f64,
}

impl LatencyStats {
    fn from_samples(name: &str, samples: &[f64]) -> Self {
        LatencyStats { name: name.to_string(), median_ms: percentile(samples, 50.0), p95_ms: percentile(samples, 95.0) }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BenchReport {
    pub input_size: (usize, usize),
    pub warmup: usize,
    pub iters: usize,
    /// Worker threads available to the parallel kernels.
    pub threads: usize,
    pub macs: u64,
    pub stages: Vec<LatencyStats>,
    /// Wall time of the whole forward call.
    pub end_to_end: LatencyStats,
    /// Sum of the per-stage medians.
    pub stage_sum_ms: f64,
}

/// Nearest-rank percentile of unsorted samples; 0 for an empty slice.
pub fn percentile(samples: &[f64], p: f64) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    let rank = ((p / 100.0) * s.len() as f64).ceil() as usize;
    s[rank.clamp(1, s.len()) - 1]
}

/// Times `iters` forward passes after `warmup` discarded ones. Stage times
/// come from the forward pass's own diagnostics.
pub fn bench(model: &Model, left: &Tensor, right: &Tensor, warmup: usize, iters: usize) -> Result<BenchReport> {
    let iters = iters.max(1);
    for _ in 0..warmup {
        model.forward(left, right)?;
    }
    let mut per_stage = vec![Vec::with_capacity(iters); STAGES.len()];
    let mut totals = Vec::with_capacity(iters);
    for _ in 0..iters {
        let start = Instant::now();
        let out = model.forward(left, right)?;
        totals.push(start.elapsed().as_secs_f64() * 1e3);
        for (samples, stage) in per_stage.iter_mut().zip(&out.diagnostics.stages) {
            samples.push(stage.elapsed_ms);
        }
    }
    let stages: Vec<_> = STAGES.iter().zip(&per_stage).map(|(n, s)| LatencyStats::from_samples(n, s)).collect();
    let s = left.shape();
    Ok(BenchReport {
        input_size: (s.h, s.w),
        warmup,
        iters,
        threads: rayon::current_num_threads(),
        macs: count_macs(model.config(), s.h, s.w).total_macs,
        stage_sum_ms: stages.iter().map(|s| s.median_ms).sum(),
        stages,
        end_to_end: LatencyStats::from_samples("total", &totals),
    })
}
