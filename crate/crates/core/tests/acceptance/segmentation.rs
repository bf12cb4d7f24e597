//! Segmentation invariants on 200 synthetic transcripts with the hashed
//! test embedder.

use mathdeid_core::segmentation::{corpus_features, HashedEmbedder, MathVocabulary, SegmentLabel, Thresholds};

use crate::common::synthetic_corpus;
use crate::Outcome;

const ANCHORS: [f64; 8] = [0.0, 0.03, 0.05, 0.07, 0.1, 0.2, 0.4, 0.8];
const SIMS: [f64; 11] = [0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0];

pub fn run() -> Outcome {
    let corpus = synthetic_corpus(200, 7);
    let vocab = MathVocabulary::reference();
    let embedder = HashedEmbedder::new(384);
    let features = corpus_features(&corpus, &vocab, &embedder).map_err(|e| e.to_string())?;
    let mut segments_seen = 0usize;
    for f in &features {
        let id = &f.session_id;
        for pair in ANCHORS.windows(2) {
            let (low, high) = (f.anchors(pair[0]), f.anchors(pair[1]));
            ensure!(
                high.iter().all(|a| low.contains(a)),
                "{id}: raising T_anchor {} -> {} added anchors ({low:?} vs {high:?})",
                pair[0],
                pair[1]
            );
        }
        for &ta in &ANCHORS {
            let anchors = f.anchors(ta);
            for &a in &anchors {
                for pair in SIMS.windows(2) {
                    let wide = f.expand(a, pair[0]);
                    let narrow = f.expand(a, pair[1]);
                    ensure!(
                        wide.start_index <= narrow.start_index && narrow.end_index <= wide.end_index,
                        "{id}: anchor {a} grew from {}..={} to {}..={} when T_sim rose {} -> {}",
                        wide.start_index,
                        wide.end_index,
                        narrow.start_index,
                        narrow.end_index,
                        pair[0],
                        pair[1]
                    );
                }
            }
            for &ts in &SIMS {
                let t = Thresholds::new(ta, ts);
                let segments = f.segments(t);
                segments_seen += segments.len();
                for s in &segments {
                    ensure!(
                        s.start_index <= s.anchor_index && s.anchor_index <= s.end_index,
                        "{id}: anchor {} outside {}..={}",
                        s.anchor_index,
                        s.start_index,
                        s.end_index
                    );
                    ensure!(
                        anchors.iter().any(|&a| s.contains(a)),
                        "{id}: segment {}..={} holds no anchor",
                        s.start_index,
                        s.end_index
                    );
                    ensure!(
                        f.densities[s.anchor_index] >= ta,
                        "{id}: segment anchor below threshold"
                    );
                }
                for w in segments.windows(2) {
                    ensure!(
                        w[0].end_index + 1 < w[1].start_index,
                        "{id}: segments {}..={} and {}..={} overlap or abut after merge",
                        w[0].start_index,
                        w[0].end_index,
                        w[1].start_index,
                        w[1].end_index
                    );
                }
                let labels = f.labels(t);
                for &a in &anchors {
                    ensure!(
                        labels[a] == SegmentLabel::Math,
                        "{id}: anchor {a} labeled NON-MATH at {t:?}"
                    );
                }
            }
        }
    }
    Ok(format!(
        "200 transcripts, {} configurations each, {segments_seen} segments checked",
        ANCHORS.len() * SIMS.len()
    ))
}
