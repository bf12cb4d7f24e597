//! Math segment detection: density scoring, embeddings, and segment
//! expansion.

pub mod embed;
pub mod segment;
pub mod vocab;

pub use embed::{cosine, CachedEmbedder, EmbedError, Embedder, GatewayEmbedder, HashedEmbedder};
pub use segment::{
    anchors_from_densities, corpus_features, expand_range, expand_segment, find_anchors, label_corpus, label_features,
    LabelingSummary, Segment, SegmentLabel, SegmentLabeling, SegmentationError, Thresholds, TranscriptFeatures,
    TranscriptLabels,
};
pub use vocab::{
    math_density, tokenize, DensityScore, MathPattern, MathVocabulary, VocabularyError, VocabularyFile, Weights,
    PATTERN_FAMILIES,
};
