//! MAC accounting and latency measurement.

mod bench;
mod macs;

pub use bench::{bench, percentile, BenchReport, LatencyStats};
pub use macs::{count_macs, layer_macs, MacBreakdown, StageCost};
