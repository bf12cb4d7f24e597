//! Transcript-level bootstrap confidence intervals.
//!
//! Iteration `i` draws from ChaCha8 seeded with `seed` on stream `i`, so the
//! result does not depend on how iterations are scheduled.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::{pool, Counts, MetricSet};

pub const DEFAULT_ITERATIONS: usize = 1000;
pub const DEFAULT_SEED: u64 = 20_240_601;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapCI {
    pub point: f64,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapSummary {
    pub iterations: usize,
    pub seed: u64,
    pub precision: BootstrapCI,
    pub recall: BootstrapCI,
    pub f1: BootstrapCI,
}

/// Nearest-rank percentile of sorted data: the value at rank
/// `ceil(p * n)`, clamped to `1..=n`.
pub fn nearest_rank(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty(), "percentile of empty data");
    let n = sorted.len();
    let rank = ((p * n as f64) - 1e-9).ceil().clamp(1.0, n as f64) as usize;
    sorted[rank - 1]
}

/// Indices of one resample of `n` transcripts.
pub fn resample_indices(n: usize, seed: u64, iteration: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(iteration as u64);
    (0..n).map(|_| rng.random_range(0..n)).collect()
}

fn replicate(per_transcript: &[Counts], seed: u64, iteration: usize) -> MetricSet {
    let idx = resample_indices(per_transcript.len(), seed, iteration);
    pool(idx.iter().map(|&i| &per_transcript[i])).metrics()
}

fn summarize(per_transcript: &[Counts], replicates: Vec<MetricSet>, seed: u64) -> BootstrapSummary {
    let point = pool(per_transcript).metrics();
    let ci = |get: fn(&MetricSet) -> f64, point: f64| {
        let mut values: Vec<f64> = replicates.iter().map(get).collect();
        values.sort_by(f64::total_cmp);
        BootstrapCI {
            point,
            lower: nearest_rank(&values, 0.025),
            upper: nearest_rank(&values, 0.975),
        }
    };
    BootstrapSummary {
        iterations: replicates.len(),
        seed,
        precision: ci(|m| m.precision, point.precision),
        recall: ci(|m| m.recall, point.recall),
        f1: ci(|m| m.f1, point.f1),
    }
}

/// 95% intervals for P/R/F1 from `iterations` resamples of the
/// per-transcript counts, pooled with multiplicity. Runs in parallel.
pub fn bootstrap_ci(per_transcript: &[Counts], iterations: usize, seed: u64) -> BootstrapSummary {
    assert!(!per_transcript.is_empty(), "bootstrap needs at least one transcript");
    assert!(iterations > 0, "bootstrap needs at least one iteration");
    let replicates = (0..iterations)
        .into_par_iter()
        .map(|i| replicate(per_transcript, seed, i))
        .collect();
    summarize(per_transcript, replicates, seed)
}

/// Single-threaded [`bootstrap_ci`]; returns identical results.
pub fn bootstrap_ci_serial(per_transcript: &[Counts], iterations: usize, seed: u64) -> BootstrapSummary {
    assert!(!per_transcript.is_empty(), "bootstrap needs at least one transcript");
    assert!(iterations > 0, "bootstrap needs at least one iteration");
    let replicates = (0..iterations).map(|i| replicate(per_transcript, seed, i)).collect();
    summarize(per_transcript, replicates, seed)
}
