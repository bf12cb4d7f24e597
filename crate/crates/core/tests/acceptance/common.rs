//! Shared fixtures: synthetic transcripts, a table-driven embedder, and
//! audit-item builders.

use std::collections::HashMap;

use mathdeid_core::corpus::{Corpus, PiiType, Transcript};
use mathdeid_core::segmentation::{EmbedError, Embedder};
use mathdeid_core::surrogation::{upstream_spans, AnnotationItem, Evaluation, ItemOrigin, ItemStatus, SpanRef};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const MATH_LINES: &[&str] = &[
    "so the slope is 2 and the intercept is 3",
    "solve 2x = 10 for x",
    "what is the area of the circle",
    "find the greatest common factor of 12 and 18",
    "the answer is 3.14",
    "plot the point (3, 4) on the coordinate plane",
    "simplify the fraction x/4 first",
    "use the pythagorean theorem here",
    "the probability P(A) is 0.5",
    "multiply both sides by 3 to solve the equation",
    "what is the square root of 49",
    "the mean and median of the data",
    "graph y = 2x + 1 on the plane",
    "check your answer by substitution",
];

pub const CHAT_LINES: &[&str] = &[
    "hi how are you doing today",
    "good thanks and you",
    "ok cool",
    "see you next week",
    "i had pizza for lunch",
    "my dog is barking lol",
    "sorry my internet is slow",
    "bye",
    "are you still there",
    "thank you so much",
    "i have soccer practice later",
    "yes",
];

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Transcript alternating chat stretches and math blocks.
pub fn synthetic_transcript(id: &str, rng: &mut ChaCha8Rng) -> Transcript {
    let len = rng.random_range(1..=16);
    let mut turns = Vec::with_capacity(len);
    let mut in_math = rng.random_bool(0.5);
    for i in 0..len {
        if rng.random_bool(0.3) {
            in_math = !in_math;
        }
        let pool = if in_math { MATH_LINES } else { CHAT_LINES };
        let role = if i % 2 == 0 { "Student" } else { "Volunteer" };
        turns.push((role, pool.choose(rng).unwrap().to_string()));
    }
    Transcript::from_turns(id, turns)
}

pub fn synthetic_corpus(n: usize, seed: u64) -> Corpus {
    let mut rng = rng(seed);
    Corpus::new(
        (0..n)
            .map(|i| synthetic_transcript(&format!("t{i:03}"), &mut rng))
            .collect(),
    )
    .expect("synthetic corpus is valid")
}

/// Embedder answering from a fixed text-to-vector table.
pub struct TableEmbedder {
    pub dimension: usize,
    pub table: HashMap<String, Vec<f32>>,
}

impl Embedder for TableEmbedder {
    fn id(&self) -> &str {
        "table"
    }

    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed(&self, text: &str) -> Result<Vec<f32>, EmbedError> {
        self.table.get(text).cloned().ok_or_else(|| EmbedError {
            provider: "table".into(),
            reason: format!("no vector for {text:?}"),
        })
    }
}

/// One approved item per upstream redaction, with the verdict chosen by
/// `verdict(type, session, message index)`.
pub fn audit_items(corpus: &Corpus, verdict: impl Fn(PiiType, &str, usize) -> Evaluation) -> Vec<AnnotationItem> {
    let mut items = Vec::new();
    for t in corpus {
        for m in &t.messages {
            for (k, span) in upstream_spans(m).into_iter().enumerate() {
                let evaluation = verdict(span.pii_type, &t.session_id, m.index);
                items.push(AnnotationItem {
                    id: AnnotationItem::item_id(&t.session_id, m.index, k),
                    session_id: t.session_id.clone(),
                    message_index: m.index,
                    pii_type: span.pii_type,
                    origin: ItemOrigin::Upstream,
                    span: Some(SpanRef {
                        start: span.start,
                        end: span.end,
                    }),
                    original_text: span.surface.clone(),
                    ai_redacted_content: None,
                    evaluation,
                    surrogate: Some(format!("s-{}-{}-{k}", t.session_id, m.index)),
                    iteration: 1,
                    votes: Vec::new(),
                    status: ItemStatus::Approved,
                    flagged: false,
                });
            }
        }
    }
    items
}
