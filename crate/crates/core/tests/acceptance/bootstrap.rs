//! Bootstrap intervals: determinism, degenerate data, percentile ranks, and
//! agreement with exact resampling distributions.

use mathdeid_core::evaluation::{bootstrap_ci, bootstrap_ci_serial, nearest_rank, BootstrapCI, Counts};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::common::rng;
use crate::Outcome;

type Metric = fn(Counts) -> f64;

const METRICS: [(&str, Metric); 3] = [
    ("precision", |c| c.metrics().precision),
    ("recall", |c| c.metrics().recall),
    ("f1", |c| c.metrics().f1),
];

fn pick(s: &mathdeid_core::evaluation::BootstrapSummary, name: &str) -> BootstrapCI {
    match name {
        "precision" => s.precision,
        "recall" => s.recall,
        _ => s.f1,
    }
}

fn sum(data: &[Counts], idx: impl IntoIterator<Item = usize>) -> Counts {
    idx.into_iter().fold(Counts::default(), |a, i| {
        Counts::new(a.tp + data[i].tp, a.fp + data[i].fp, a.fn_ + data[i].fn_)
    })
}

/// Replicates re-derived from the stream contract, percentiles read at
/// 0-based ranks 24 and 974.
fn manual_bounds(data: &[Counts], seed: u64, metric: Metric) -> (f64, f64) {
    let n = data.len();
    let mut values: Vec<f64> = (0..1000u64)
        .map(|i| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            r.set_stream(i);
            metric(sum(data, (0..n).map(|_| r.random_range(0..n))))
        })
        .collect();
    values.sort_by(f64::total_cmp);
    (values[24], values[974])
}

/// Whether `x` is a p-quantile of the exact distribution for some p within
/// `tol` of `target`.
fn is_quantile(dist: &[f64], x: f64, target: f64, tol: f64) -> bool {
    let n = dist.len() as f64;
    let below = dist.iter().filter(|&&v| v < x).count() as f64 / n;
    let at_or_below = dist.iter().filter(|&&v| v <= x).count() as f64 / n;
    below <= target + tol && at_or_below >= target - tol
}

pub fn run() -> Outcome {
    let ranks: Vec<f64> = (0..1000).map(f64::from).collect();
    ensure!(
        nearest_rank(&ranks, 0.025) == 24.0 && nearest_rank(&ranks, 0.975) == 974.0,
        "nearest rank must read 0-based indices 24 and 974 of 1000"
    );

    let same = vec![Counts::new(3, 1, 2); 25];
    let s = bootstrap_ci(&same, 1000, 5);
    for (name, _) in METRICS {
        let ci = pick(&s, name);
        ensure!(
            ci.lower == ci.point && ci.upper == ci.point,
            "identical transcripts: {name} interval {ci:?} is not degenerate"
        );
    }

    let mut r = rng(21);
    let data: Vec<Counts> = (0..60)
        .map(|_| Counts::new(r.random_range(0..8), r.random_range(0..5), r.random_range(0..5)))
        .collect();
    let a = bootstrap_ci(&data, 1000, 42);
    ensure!(a == bootstrap_ci(&data, 1000, 42), "same seed gave different intervals");
    ensure!(
        a == bootstrap_ci_serial(&data, 1000, 42),
        "parallel and serial runs differ"
    );
    ensure!(
        a != bootstrap_ci(&data, 1000, 43),
        "different seeds gave identical intervals"
    );
    for (name, metric) in METRICS {
        let ci = pick(&a, name);
        let (lo, hi) = manual_bounds(&data, 42, metric);
        ensure!(
            ci.lower == lo && ci.upper == hi,
            "{name}: bounds ({}, {}) != re-derived ({lo}, {hi})",
            ci.lower,
            ci.upper
        );
        ensure!(ci.lower <= ci.upper, "{name}: lower above upper");
    }

    let tiny = [Counts::new(3, 1, 2), Counts::new(1, 4, 0), Counts::new(5, 0, 5)];
    for (name, metric) in METRICS {
        let mut exact = Vec::with_capacity(27);
        for i in 0..3 {
            for j in 0..3 {
                for k in 0..3 {
                    exact.push(metric(sum(&tiny, [i, j, k])));
                }
            }
        }
        for seed in 0..10 {
            let ci = pick(&bootstrap_ci(&tiny, 1000, seed), name);
            ensure!(
                is_quantile(&exact, ci.lower, 0.025, 0.02) && is_quantile(&exact, ci.upper, 0.975, 0.02),
                "{name} seed {seed}: ({}, {}) are not 2.5/97.5 quantiles of the exact distribution",
                ci.lower,
                ci.upper
            );
        }
    }
    Ok("degenerate, deterministic, parallel = serial, ranks 24/974, exact 27-resample quantiles within 0.02".into())
}
