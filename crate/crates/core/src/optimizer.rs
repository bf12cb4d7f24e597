//! Grid search over segmentation thresholds.
//!
//! A math segment should capture the redactions audited as NOT_PII and leave
//! the real PII outside. With `a` the captured share of NOT_PII labels and
//! `t` the captured share of PII labels, each configuration is scored by
//!
//! ```text
//! H = 2a(1 - t) / (a + (1 - t))
//! ```
//!
//! and H = 0 when the denominator vanishes.

use std::collections::HashMap;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Corpus, PiiType};
use crate::segmentation::{Embedder, MathVocabulary, SegmentationError, Thresholds, TranscriptFeatures};
use crate::surrogation::items::{upstream_spans, AnnotationItem, Evaluation, ItemOrigin};

/// How UNCERTAIN verdicts enter the proportions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum UncertainPolicy {
    #[default]
    Excluded,
    AsTruePositive,
    AsFalsePositive,
}

/// One upstream label with its audit verdict.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditedLabel {
    pub session_id: String,
    pub message_index: usize,
    pub start: usize,
    pub end: usize,
    pub pii_type: PiiType,
    pub verdict: Evaluation,
}

#[derive(Debug, Error)]
pub enum OptimizerError {
    #[error(
        "label {pii_type} at {start}..{end} in session `{session_id}` message {message_index} has no audit verdict"
    )]
    Unaudited {
        session_id: String,
        message_index: usize,
        start: usize,
        end: usize,
        pii_type: PiiType,
    },
    #[error("audited label references unknown session `{0}`")]
    UnknownSession(String),
    #[error("empty threshold range")]
    EmptyRange,
    #[error(transparent)]
    Segmentation(#[from] SegmentationError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

/// Pairs every upstream label with the verdict of the latest-iteration item
/// that refers to it.
pub fn audited_labels(corpus: &Corpus, items: &[AnnotationItem]) -> Result<Vec<AuditedLabel>, OptimizerError> {
    let mut verdicts: HashMap<(&str, usize, usize, usize), (u32, Evaluation)> = HashMap::new();
    for item in items.iter().filter(|i| i.origin == ItemOrigin::Upstream) {
        let Some(span) = item.span else { continue };
        let key = (item.session_id.as_str(), item.message_index, span.start, span.end);
        let entry = verdicts.entry(key).or_insert((item.iteration, item.evaluation));
        if item.iteration >= entry.0 {
            *entry = (item.iteration, item.evaluation);
        }
    }
    let mut labels = Vec::new();
    for transcript in corpus {
        for message in &transcript.messages {
            for span in upstream_spans(message) {
                let key = (transcript.session_id.as_str(), message.index, span.start, span.end);
                let Some(&(_, verdict)) = verdicts.get(&key) else {
                    return Err(OptimizerError::Unaudited {
                        session_id: transcript.session_id.clone(),
                        message_index: message.index,
                        start: span.start,
                        end: span.end,
                        pii_type: span.pii_type,
                    });
                };
                labels.push(AuditedLabel {
                    session_id: transcript.session_id.clone(),
                    message_index: message.index,
                    start: span.start,
                    end: span.end,
                    pii_type: span.pii_type,
                    verdict,
                });
            }
        }
    }
    Ok(labels)
}

/// Inclusive arithmetic range; values are rounded to 1e-9 so that
/// 0.05 + 3 * 0.01 prints and compares as 0.08.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridRange {
    pub start: f64,
    pub stop: f64,
    pub step: f64,
}

impl GridRange {
    pub const REFERENCE_ANCHOR: GridRange = GridRange {
        start: 0.05,
        stop: 0.10,
        step: 0.01,
    };
    pub const REFERENCE_SIMILARITY: GridRange = GridRange {
        start: 0.0,
        stop: 0.5,
        step: 0.1,
    };

    pub fn new(start: f64, stop: f64, step: f64) -> Self {
        Self { start, stop, step }
    }

    pub fn values(&self) -> Vec<f64> {
        if self.step <= 0.0 || self.stop < self.start {
            return if self.stop == self.start {
                vec![round9(self.start)]
            } else {
                Vec::new()
            };
        }
        let n = ((self.stop - self.start) / self.step + 1e-9).floor() as usize;
        (0..=n).map(|i| round9(self.start + i as f64 * self.step)).collect()
    }
}

fn round9(x: f64) -> f64 {
    (x * 1e9).round() / 1e9
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub thresholds: Thresholds,
    pub fp_captured: usize,
    pub fp_total: usize,
    pub tp_captured: usize,
    pub tp_total: usize,
    /// a: captured share of false-positive (NOT_PII) labels.
    pub fp_proportion: f64,
    /// t: captured share of true-PII labels.
    pub tp_proportion: f64,
    pub objective: f64,
}

pub fn harmonic_objective(a: f64, t: f64) -> f64 {
    let keep = 1.0 - t;
    let denom = a + keep;
    if denom > 0.0 {
        2.0 * a * keep / denom
    } else {
        0.0
    }
}

fn proportion(part: usize, whole: usize) -> f64 {
    if whole == 0 {
        0.0
    } else {
        part as f64 / whole as f64
    }
}

enum Side {
    FalsePositive,
    TruePositive,
}

fn side(verdict: Evaluation, policy: UncertainPolicy) -> Option<Side> {
    match (verdict, policy) {
        (Evaluation::NotPii, _) | (Evaluation::Uncertain, UncertainPolicy::AsFalsePositive) => {
            Some(Side::FalsePositive)
        }
        (Evaluation::Pii, _) | (Evaluation::Uncertain, UncertainPolicy::AsTruePositive) => Some(Side::TruePositive),
        (Evaluation::Uncertain, UncertainPolicy::Excluded) => None,
    }
}

/// Scores one configuration from precomputed features.
pub fn evaluate_point(
    features: &[TranscriptFeatures],
    labels: &[AuditedLabel],
    thresholds: Thresholds,
    policy: UncertainPolicy,
) -> Result<GridPoint, OptimizerError> {
    let math: HashMap<&str, Vec<bool>> = features
        .iter()
        .map(|f| {
            let flags = f.labels(thresholds).into_iter().map(|l| l.is_math()).collect();
            (f.session_id.as_str(), flags)
        })
        .collect();
    let (mut fp_captured, mut fp_total, mut tp_captured, mut tp_total) = (0, 0, 0, 0);
    for label in labels {
        let Some(side) = side(label.verdict, policy) else {
            continue;
        };
        let flags = math
            .get(label.session_id.as_str())
            .ok_or_else(|| OptimizerError::UnknownSession(label.session_id.clone()))?;
        let captured = flags.get(label.message_index).copied().unwrap_or(false);
        match side {
            Side::FalsePositive => {
                fp_total += 1;
                fp_captured += usize::from(captured);
            }
            Side::TruePositive => {
                tp_total += 1;
                tp_captured += usize::from(captured);
            }
        }
    }
    let a = proportion(fp_captured, fp_total);
    let t = proportion(tp_captured, tp_total);
    Ok(GridPoint {
        thresholds,
        fp_captured,
        fp_total,
        tp_captured,
        tp_total,
        fp_proportion: a,
        tp_proportion: t,
        objective: harmonic_objective(a, t),
    })
}

/// Scores every (T_anchor, T_sim) pair. Points are evaluated in parallel and
/// returned ordered by (T_anchor, T_sim).
pub fn evaluate_grid_features(
    features: &[TranscriptFeatures],
    labels: &[AuditedLabel],
    anchor_range: GridRange,
    sim_range: GridRange,
    policy: UncertainPolicy,
) -> Result<Vec<GridPoint>, OptimizerError> {
    let anchors = anchor_range.values();
    let sims = sim_range.values();
    if anchors.is_empty() || sims.is_empty() {
        return Err(OptimizerError::EmptyRange);
    }
    let configs: Vec<Thresholds> = anchors
        .iter()
        .flat_map(|&a| sims.iter().map(move |&s| Thresholds::new(a, s)))
        .collect();
    configs
        .into_par_iter()
        .map(|t| evaluate_point(features, labels, t, policy))
        .collect()
}

/// Computes densities and embeddings once, then scores the grid.
pub fn evaluate_grid(
    corpus: &Corpus,
    items: &[AnnotationItem],
    vocab: &MathVocabulary,
    embedder: &dyn Embedder,
    anchor_range: GridRange,
    sim_range: GridRange,
    policy: UncertainPolicy,
) -> Result<Vec<GridPoint>, OptimizerError> {
    let labels = audited_labels(corpus, items)?;
    let features = crate::segmentation::corpus_features(corpus, vocab, embedder)?;
    evaluate_grid_features(&features, &labels, anchor_range, sim_range, policy)
}

/// Argmax of the objective; ties go to the smaller T_anchor, then the
/// smaller T_sim. `None` for an empty grid.
pub fn select_thresholds(grid: &[GridPoint]) -> Option<Thresholds> {
    grid.iter()
        .min_by(|x, y| {
            y.objective
                .total_cmp(&x.objective)
                .then(x.thresholds.anchor.total_cmp(&y.thresholds.anchor))
                .then(x.thresholds.similarity.total_cmp(&y.thresholds.similarity))
        })
        .map(|p| p.thresholds)
}

/// Heatmap table: `t_anchor,t_sim,fp_prop,tp_prop,objective`.
pub fn write_heatmap(grid: &[GridPoint], writer: impl Write) -> Result<(), OptimizerError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["t_anchor", "t_sim", "fp_prop", "tp_prop", "objective"])?;
    for p in grid {
        w.write_record([
            p.thresholds.anchor.to_string(),
            p.thresholds.similarity.to_string(),
            format!("{:.6}", p.fp_proportion),
            format!("{:.6}", p.tp_proportion),
            format!("{:.6}", p.objective),
        ])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}
