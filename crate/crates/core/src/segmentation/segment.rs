//! Anchor detection, similarity-driven segment expansion, and MATH/NON-MATH
//! labeling.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::embed::{cosine, EmbedError, Embedder};
use super::vocab::{math_density, MathVocabulary};
use crate::corpus::{Corpus, CorpusError, Transcript};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub anchor: f64,
    pub similarity: f64,
}

impl Thresholds {
    pub const REFERENCE: Thresholds = Thresholds {
        anchor: 0.05,
        similarity: 0.3,
    };

    pub fn new(anchor: f64, similarity: f64) -> Self {
        Self { anchor, similarity }
    }
}

/// A contiguous, inclusive message range seeded by an anchor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub transcript_id: String,
    pub anchor_index: usize,
    pub start_index: usize,
    pub end_index: usize,
    pub centroid: Vec<f32>,
}

impl Segment {
    pub fn contains(&self, index: usize) -> bool {
        self.start_index <= index && index <= self.end_index
    }

    pub fn len(&self) -> usize {
        self.end_index - self.start_index + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SegmentLabel {
    #[serde(rename = "MATH")]
    Math,
    #[serde(rename = "NON-MATH")]
    NonMath,
}

impl SegmentLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            SegmentLabel::Math => "MATH",
            SegmentLabel::NonMath => "NON-MATH",
        }
    }

    pub fn is_math(self) -> bool {
        self == SegmentLabel::Math
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranscriptLabels {
    pub session_id: String,
    pub labels: Vec<SegmentLabel>,
}

/// Per-message MATH/NON-MATH labels for a corpus.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SegmentLabeling {
    pub transcripts: Vec<TranscriptLabels>,
    by_session: HashMap<String, usize>,
}

impl SegmentLabeling {
    pub fn new(transcripts: Vec<TranscriptLabels>) -> Self {
        let by_session = transcripts
            .iter()
            .enumerate()
            .map(|(i, t)| (t.session_id.clone(), i))
            .collect();
        Self {
            transcripts,
            by_session,
        }
    }

    pub fn labels_for(&self, session_id: &str) -> Option<&[SegmentLabel]> {
        self.by_session
            .get(session_id)
            .map(|&i| self.transcripts[i].labels.as_slice())
    }

    pub fn label(&self, session_id: &str, message_index: usize) -> Option<SegmentLabel> {
        self.labels_for(session_id)?.get(message_index).copied()
    }

    /// True when every transcript of `corpus` has one label per message.
    pub fn covers(&self, corpus: &Corpus) -> bool {
        corpus.iter().all(|t| {
            self.labels_for(&t.session_id)
                .is_some_and(|labels| labels.len() == t.messages.len())
        })
    }

    pub fn summary(&self, corpus: &Corpus) -> LabelingSummary {
        let mut summary = LabelingSummary::default();
        for transcript in corpus {
            let labels = self.labels_for(&transcript.session_id);
            for message in &transcript.messages {
                let tokens = message.text.split_whitespace().count();
                let math = labels.and_then(|l| l.get(message.index)).is_some_and(|l| l.is_math());
                summary.total_messages += 1;
                summary.total_tokens += tokens;
                if math {
                    summary.math_messages += 1;
                    summary.math_tokens += tokens;
                }
            }
        }
        summary
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<(), CorpusError> {
        let path = path.as_ref();
        let io_err = |source| CorpusError::Io {
            path: path.display().to_string(),
            source,
        };
        let mut w = BufWriter::new(File::create(path).map_err(io_err)?);
        for t in &self.transcripts {
            serde_json::to_writer(&mut w, t).map_err(|e| io_err(e.into()))?;
            w.write_all(b"\n").map_err(io_err)?;
        }
        w.flush().map_err(io_err)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, CorpusError> {
        let path = path.as_ref();
        let io_err = |source| CorpusError::Io {
            path: path.display().to_string(),
            source,
        };
        let reader = BufReader::new(File::open(path).map_err(io_err)?);
        let mut transcripts = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line.map_err(io_err)?;
            if line.trim().is_empty() {
                continue;
            }
            transcripts
                .push(serde_json::from_str(&line).map_err(|source| CorpusError::Malformed { line: i + 1, source })?);
        }
        Ok(Self::new(transcripts))
    }
}

/// MATH share of messages and whitespace tokens.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelingSummary {
    pub math_messages: usize,
    pub total_messages: usize,
    pub math_tokens: usize,
    pub total_tokens: usize,
}

impl LabelingSummary {
    pub fn math_token_share(&self) -> f64 {
        if self.total_tokens == 0 {
            0.0
        } else {
            self.math_tokens as f64 / self.total_tokens as f64
        }
    }

    pub fn math_message_share(&self) -> f64 {
        if self.total_messages == 0 {
            0.0
        } else {
            self.math_messages as f64 / self.total_messages as f64
        }
    }
}

#[derive(Debug, Clone, Error)]
pub enum SegmentationError {
    #[error("session `{session_id}` message {message_index}: {source}")]
    Embedding {
        session_id: String,
        message_index: usize,
        #[source]
        source: EmbedError,
    },
    #[error("session `{session_id}`: message {message_index} is not an anchor")]
    NotAnAnchor { session_id: String, message_index: usize },
}

/// Densities and embeddings of every message of one transcript. Computed
/// once and reused across threshold settings.
#[derive(Debug, Clone, PartialEq)]
pub struct TranscriptFeatures {
    pub session_id: String,
    pub densities: Vec<f64>,
    pub embeddings: Vec<Vec<f32>>,
}

impl TranscriptFeatures {
    pub fn compute(
        transcript: &Transcript,
        vocab: &MathVocabulary,
        embedder: &dyn Embedder,
    ) -> Result<Self, SegmentationError> {
        let densities = transcript
            .messages
            .iter()
            .map(|m| math_density(&m.text, vocab).value)
            .collect();
        let embeddings = transcript
            .messages
            .iter()
            .map(|m| {
                embedder.embed(&m.text).map_err(|source| SegmentationError::Embedding {
                    session_id: transcript.session_id.clone(),
                    message_index: m.index,
                    source,
                })
            })
            .collect::<Result<_, _>>()?;
        Ok(Self {
            session_id: transcript.session_id.clone(),
            densities,
            embeddings,
        })
    }

    pub fn len(&self) -> usize {
        self.densities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.densities.is_empty()
    }

    pub fn anchors(&self, anchor_threshold: f64) -> Vec<usize> {
        anchors_from_densities(&self.densities, anchor_threshold)
    }

    /// Grows a segment around `anchor`. Does not check that `anchor`
    /// qualifies.
    pub fn expand(&self, anchor: usize, similarity_threshold: f64) -> Segment {
        let (start, end, centroid) = expand_range(&self.embeddings, anchor, similarity_threshold);
        Segment {
            transcript_id: self.session_id.clone(),
            anchor_index: anchor,
            start_index: start,
            end_index: end,
            centroid,
        }
    }

    /// Merged, disjoint segments in ascending order.
    pub fn segments(&self, thresholds: Thresholds) -> Vec<Segment> {
        let mut raw: Vec<Segment> = Vec::new();
        for anchor in self.anchors(thresholds.anchor) {
            if raw.iter().any(|s| s.contains(anchor)) {
                continue;
            }
            raw.push(self.expand(anchor, thresholds.similarity));
        }
        raw.sort_by_key(|s| (s.start_index, s.anchor_index));
        let mut merged: Vec<Segment> = Vec::with_capacity(raw.len());
        for seg in raw {
            match merged.last_mut() {
                Some(last) if seg.start_index <= last.end_index + 1 => {
                    last.end_index = last.end_index.max(seg.end_index);
                    last.anchor_index = last.anchor_index.min(seg.anchor_index);
                }
                _ => merged.push(seg),
            }
        }
        for seg in &mut merged {
            seg.centroid = mean(&self.embeddings[seg.start_index..=seg.end_index]);
        }
        merged
    }

    pub fn labels(&self, thresholds: Thresholds) -> Vec<SegmentLabel> {
        let mut labels = vec![SegmentLabel::NonMath; self.len()];
        for seg in self.segments(thresholds) {
            for label in &mut labels[seg.start_index..=seg.end_index] {
                *label = SegmentLabel::Math;
            }
        }
        labels
    }
}

/// Indices with density at or above the threshold, ascending.
pub fn anchors_from_densities(densities: &[f64], anchor_threshold: f64) -> Vec<usize> {
    densities
        .iter()
        .enumerate()
        .filter(|(_, &d)| d >= anchor_threshold)
        .map(|(i, _)| i)
        .collect()
}

fn mean(vectors: &[Vec<f32>]) -> Vec<f32> {
    let dim = vectors.first().map_or(0, Vec::len);
    let mut sum = vec![0.0f64; dim];
    for v in vectors {
        for (s, &x) in sum.iter_mut().zip(v) {
            *s += x as f64;
        }
    }
    let n = vectors.len().max(1) as f64;
    sum.into_iter().map(|s| (s / n) as f32).collect()
}

#[derive(Clone, Copy, PartialEq)]
enum Direction {
    Forward,
    Backward,
}

/// Alternating expansion starting forward. A candidate joins when its cosine
/// to the running mean of member embeddings is at least the threshold; each
/// direction closes at its first rejection or at the transcript boundary.
/// Returns the inclusive range and the final centroid.
pub fn expand_range(embeddings: &[Vec<f32>], anchor: usize, similarity_threshold: f64) -> (usize, usize, Vec<f32>) {
    let n = embeddings.len();
    assert!(anchor < n, "anchor {anchor} out of range for {n} messages");
    let dim = embeddings[anchor].len();
    let mut sum: Vec<f64> = embeddings[anchor].iter().map(|&x| x as f64).collect();
    let mut members = 1usize;
    let mut centroid = embeddings[anchor].clone();
    let (mut start, mut end) = (anchor, anchor);
    let mut forward_open = anchor + 1 < n;
    let mut backward_open = anchor > 0;
    let mut turn = Direction::Forward;

    while forward_open || backward_open {
        let direction = match turn {
            Direction::Forward if forward_open => Direction::Forward,
            Direction::Backward if backward_open => Direction::Backward,
            _ if forward_open => Direction::Forward,
            _ => Direction::Backward,
        };
        let candidate = match direction {
            Direction::Forward => end + 1,
            Direction::Backward => start - 1,
        };
        if cosine(&embeddings[candidate], &centroid) >= similarity_threshold {
            for (s, &x) in sum.iter_mut().zip(&embeddings[candidate]) {
                *s += x as f64;
            }
            members += 1;
            centroid = (0..dim).map(|i| (sum[i] / members as f64) as f32).collect();
            match direction {
                Direction::Forward => {
                    end = candidate;
                    forward_open = end + 1 < n;
                }
                Direction::Backward => {
                    start = candidate;
                    backward_open = start > 0;
                }
            }
        } else {
            match direction {
                Direction::Forward => forward_open = false,
                Direction::Backward => backward_open = false,
            }
        }
        turn = match direction {
            Direction::Forward => Direction::Backward,
            Direction::Backward => Direction::Forward,
        };
    }
    (start, end, centroid)
}

/// Indices of messages whose density meets the anchor threshold.
pub fn find_anchors(transcript: &Transcript, vocab: &MathVocabulary, thresholds: Thresholds) -> Vec<usize> {
    let densities: Vec<f64> = transcript
        .messages
        .iter()
        .map(|m| math_density(&m.text, vocab).value)
        .collect();
    anchors_from_densities(&densities, thresholds.anchor)
}

/// Expands one qualifying anchor into a segment.
pub fn expand_segment(
    transcript: &Transcript,
    anchor_index: usize,
    vocab: &MathVocabulary,
    thresholds: Thresholds,
    embedder: &dyn Embedder,
) -> Result<Segment, SegmentationError> {
    let qualifies = transcript
        .messages
        .get(anchor_index)
        .is_some_and(|m| math_density(&m.text, vocab).value >= thresholds.anchor);
    if !qualifies {
        return Err(SegmentationError::NotAnAnchor {
            session_id: transcript.session_id.clone(),
            message_index: anchor_index,
        });
    }
    let features = TranscriptFeatures::compute(transcript, vocab, embedder)?;
    Ok(features.expand(anchor_index, thresholds.similarity))
}

/// Features for every transcript, computed in parallel.
pub fn corpus_features(
    corpus: &Corpus,
    vocab: &MathVocabulary,
    embedder: &dyn Embedder,
) -> Result<Vec<TranscriptFeatures>, SegmentationError> {
    corpus
        .transcripts
        .par_iter()
        .map(|t| TranscriptFeatures::compute(t, vocab, embedder))
        .collect()
}

pub fn label_features(features: &[TranscriptFeatures], thresholds: Thresholds) -> SegmentLabeling {
    SegmentLabeling::new(
        features
            .iter()
            .map(|f| TranscriptLabels {
                session_id: f.session_id.clone(),
                labels: f.labels(thresholds),
            })
            .collect(),
    )
}

/// Labels every message of the corpus MATH or NON-MATH.
pub fn label_corpus(
    corpus: &Corpus,
    vocab: &MathVocabulary,
    thresholds: Thresholds,
    embedder: &dyn Embedder,
) -> Result<SegmentLabeling, SegmentationError> {
    Ok(label_features(&corpus_features(corpus, vocab, embedder)?, thresholds))
}
