//! Scoring detections against gold labels.

pub mod bootstrap;
pub mod matching;
pub mod metrics;
pub mod report;

pub use bootstrap::{
    bootstrap_ci, bootstrap_ci_serial, nearest_rank, resample_indices, BootstrapCI, BootstrapSummary,
    DEFAULT_ITERATIONS, DEFAULT_SEED,
};
pub use matching::{dedupe, match_spans, normalize_text, MatchPolicy, MessageMatch, SpanItem};
pub use metrics::{count_corpus, f1_score, pool, Counts, EvalError, MetricSet, TranscriptCounts};
pub use report::{
    evaluate, render_overall_table, render_report, render_segment_table, render_type_table, report_from_counts,
    write_strata_csv, BootstrapOptions, EvalReport, SegmentStratum,
};
