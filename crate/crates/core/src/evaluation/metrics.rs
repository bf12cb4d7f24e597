//! Micro-averaged precision, recall, and F1, overall and by stratum.

use std::collections::{BTreeMap, HashMap};
use std::ops::{Add, AddAssign};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::matching::{match_spans, MatchPolicy, SpanItem};
use crate::corpus::{Corpus, PiiType};
use crate::detection::DetectionResult;
use crate::segmentation::{SegmentLabel, SegmentLabeling};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Counts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl Counts {
    pub fn new(tp: usize, fp: usize, fn_: usize) -> Self {
        Self { tp, fp, fn_ }
    }

    pub fn metrics(self) -> MetricSet {
        MetricSet::from_counts(self)
    }
}

impl Add for Counts {
    type Output = Counts;

    fn add(self, o: Counts) -> Counts {
        Counts::new(self.tp + o.tp, self.fp + o.fp, self.fn_ + o.fn_)
    }
}

impl AddAssign for Counts {
    fn add_assign(&mut self, o: Counts) {
        *self = *self + o;
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricSet {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// F1 from precision and recall; 0 when both are 0.
pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

impl MetricSet {
    pub fn from_counts(c: Counts) -> Self {
        let precision = ratio(c.tp, c.tp + c.fp);
        let recall = ratio(c.tp, c.tp + c.fn_);
        Self {
            tp: c.tp,
            fp: c.fp,
            fn_: c.fn_,
            precision,
            recall,
            f1: f1_score(precision, recall),
        }
    }

    pub fn counts(&self) -> Counts {
        Counts::new(self.tp, self.fp, self.fn_)
    }

    /// Gold spans in the stratum (tp + fn).
    pub fn support(&self) -> usize {
        self.tp + self.fn_
    }
}

/// Counts of one transcript, overall and per stratum.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranscriptCounts {
    pub session_id: String,
    pub overall: Counts,
    pub by_type: BTreeMap<PiiType, Counts>,
    pub by_segment: BTreeMap<SegmentLabel, Counts>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EvalError {
    #[error("predictions reference unknown session `{0}`")]
    UnknownSession(String),
    #[error("predictions for session `{session_id}` reference message {index}, which does not exist")]
    UnknownMessage { session_id: String, index: usize },
    #[error("segment strata requested but no labeling covers session `{0}`")]
    MissingLabeling(String),
}

/// Matches every message and tallies counts per transcript. Sessions with
/// no predictions score all gold spans as misses. With a labeling, each
/// message's counts also go to its MATH/NON-MATH stratum.
pub fn count_corpus(
    corpus: &Corpus,
    results: &[DetectionResult],
    policy: MatchPolicy,
    labeling: Option<&SegmentLabeling>,
) -> Result<Vec<TranscriptCounts>, EvalError> {
    let mut by_session: HashMap<&str, &DetectionResult> = HashMap::new();
    for r in results {
        if corpus.get(&r.session_id).is_none() {
            return Err(EvalError::UnknownSession(r.session_id.clone()));
        }
        by_session.insert(r.session_id.as_str(), r);
    }
    let mut out = Vec::with_capacity(corpus.len());
    for transcript in corpus {
        let result = by_session.get(transcript.session_id.as_str());
        if let Some(r) = result {
            if let Some(m) = r.messages.iter().find(|m| m.index >= transcript.messages.len()) {
                return Err(EvalError::UnknownMessage {
                    session_id: r.session_id.clone(),
                    index: m.index,
                });
            }
        }
        let labels = match labeling {
            Some(l) => Some(
                l.labels_for(&transcript.session_id)
                    .filter(|labels| labels.len() == transcript.messages.len())
                    .ok_or_else(|| EvalError::MissingLabeling(transcript.session_id.clone()))?,
            ),
            None => None,
        };
        let mut tc = TranscriptCounts {
            session_id: transcript.session_id.clone(),
            ..Default::default()
        };
        for message in &transcript.messages {
            let gold: Vec<SpanItem> = message.labels.iter().map(SpanItem::from).collect();
            let predicted: Vec<SpanItem> = result
                .and_then(|r| r.message(message.index))
                .map(|m| m.detections.iter().map(SpanItem::from).collect())
                .unwrap_or_default();
            let m = match_spans(&gold, &predicted, policy);
            let c = Counts::new(m.tp(), m.fp(), m.fn_());
            tc.overall += c;
            for &(gi, _) in &m.pairs {
                tc.by_type.entry(m.gold[gi].pii_type).or_default().tp += 1;
            }
            for &pi in &m.unmatched_predicted {
                tc.by_type.entry(m.predicted[pi].pii_type).or_default().fp += 1;
            }
            for &gi in &m.unmatched_gold {
                tc.by_type.entry(m.gold[gi].pii_type).or_default().fn_ += 1;
            }
            if let Some(labels) = labels {
                *tc.by_segment.entry(labels[message.index]).or_default() += c;
            }
        }
        out.push(tc);
    }
    Ok(out)
}

/// Pooled counts over transcripts.
pub fn pool<'a>(counts: impl IntoIterator<Item = &'a Counts>) -> Counts {
    counts.into_iter().fold(Counts::default(), |acc, c| acc + *c)
}
