//! Metrics, the budget cost model, benchmark orchestration, and storage.

pub mod bench;
pub mod cost;
pub mod store;
pub mod verify;

pub use bench::{run_benchmark, run_benchmark_to_dir, BenchmarkConfig, BenchmarkOutcome, BenchmarkReport};
pub use cost::{project_cost, CostProjection, CostSheet};

use crate::error::{Error, Result};

/// Mean absolute difference between estimates and truths.
pub fn mae(estimates: &[f64], truths: &[f64]) -> Result<f64> {
    if estimates.is_empty() {
        return Err(Error::invalid("mae of an empty set"));
    }
    if estimates.len() != truths.len() {
        return Err(Error::DimensionMismatch {
            what: "mae inputs",
            expected: estimates.len(),
            got: truths.len(),
        });
    }
    Ok(estimates
        .iter()
        .zip(truths)
        .map(|(e, t)| (e - t).abs())
        .sum::<f64>()
        / estimates.len() as f64)
}
