//! Evaluation reports and their table renderings.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write;

use serde::{Deserialize, Serialize};

use super::bootstrap::{bootstrap_ci, BootstrapSummary};
use super::matching::MatchPolicy;
use super::metrics::{count_corpus, pool, Counts, EvalError, MetricSet, TranscriptCounts};
use crate::corpus::{Corpus, PiiType};
use crate::detection::DetectionResult;
use crate::segmentation::{SegmentLabel, SegmentLabeling};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentStratum {
    pub metrics: MetricSet,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ci: Option<BootstrapSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub engine: String,
    pub policy: MatchPolicy,
    pub transcripts: usize,
    pub overall: MetricSet,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ci: Option<BootstrapSummary>,
    pub by_type: BTreeMap<PiiType, MetricSet>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub by_segment: Option<BTreeMap<SegmentLabel, SegmentStratum>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BootstrapOptions {
    pub iterations: usize,
    pub seed: u64,
}

/// Scores a detection run against the gold labels of `corpus`.
pub fn evaluate(
    corpus: &Corpus,
    results: &[DetectionResult],
    policy: MatchPolicy,
    labeling: Option<&SegmentLabeling>,
    bootstrap: Option<BootstrapOptions>,
) -> Result<EvalReport, EvalError> {
    let per_transcript = count_corpus(corpus, results, policy, labeling)?;
    let engine = results.first().map(|r| r.engine.clone()).unwrap_or_default();
    Ok(report_from_counts(
        engine,
        policy,
        &per_transcript,
        labeling.is_some(),
        bootstrap,
    ))
}

pub fn report_from_counts(
    engine: String,
    policy: MatchPolicy,
    per_transcript: &[TranscriptCounts],
    with_segments: bool,
    bootstrap: Option<BootstrapOptions>,
) -> EvalReport {
    let overall_counts: Vec<Counts> = per_transcript.iter().map(|t| t.overall).collect();
    let mut by_type: BTreeMap<PiiType, Counts> = BTreeMap::new();
    for t in per_transcript {
        for (&ty, &c) in &t.by_type {
            *by_type.entry(ty).or_default() += c;
        }
    }
    let run_ci = |counts: &[Counts]| match bootstrap {
        Some(b) if !counts.is_empty() => Some(bootstrap_ci(counts, b.iterations, b.seed)),
        _ => None,
    };
    let by_segment = with_segments.then(|| {
        [SegmentLabel::NonMath, SegmentLabel::Math]
            .into_iter()
            .map(|label| {
                let counts: Vec<Counts> = per_transcript
                    .iter()
                    .map(|t| t.by_segment.get(&label).copied().unwrap_or_default())
                    .collect();
                (
                    label,
                    SegmentStratum {
                        metrics: pool(&counts).metrics(),
                        ci: run_ci(&counts),
                    },
                )
            })
            .collect()
    });
    EvalReport {
        engine,
        policy,
        transcripts: per_transcript.len(),
        overall: pool(&overall_counts).metrics(),
        ci: run_ci(&overall_counts),
        by_type: by_type.into_iter().map(|(t, c)| (t, c.metrics())).collect(),
        by_segment,
    }
}

fn with_ci(value: f64, ci: Option<(f64, f64)>) -> String {
    match ci {
        Some((lo, hi)) => format!("{value:.3} [{lo:.3}, {hi:.3}]"),
        None => format!("{value:.3}"),
    }
}

/// Precision / Recall / F1 per engine, with bracketed 95% intervals when
/// available.
pub fn render_overall_table(reports: &[EvalReport]) -> String {
    let name_width = reports.iter().map(|r| r.engine.len()).max().unwrap_or(0).max(6);
    let mut out = String::new();
    writeln!(
        out,
        "{:<name_width$}  {:<22}  {:<22}  {:<22}",
        "Engine", "Precision", "Recall", "F1"
    )
    .unwrap();
    for r in reports {
        let ci = r.ci;
        writeln!(
            out,
            "{:<name_width$}  {:<22}  {:<22}  {:<22}",
            r.engine,
            with_ci(r.overall.precision, ci.map(|c| (c.precision.lower, c.precision.upper))),
            with_ci(r.overall.recall, ci.map(|c| (c.recall.lower, c.recall.upper))),
            with_ci(r.overall.f1, ci.map(|c| (c.f1.lower, c.f1.upper))),
        )
        .unwrap();
    }
    out
}

/// Gold total, false positives, and precision per PII type, ordered by
/// precision descending.
pub fn render_type_table(report: &EvalReport) -> String {
    let mut rows: Vec<(&PiiType, &MetricSet)> = report.by_type.iter().collect();
    rows.sort_by(|a, b| b.1.precision.total_cmp(&a.1.precision).then(a.0.cmp(b.0)));
    let mut out = String::new();
    writeln!(out, "{:<18}  {:>6}  {:>6}  {:>6}", "PII Type", "Total", "FP", "Prec").unwrap();
    for (ty, m) in rows {
        let prec = if m.tp + m.fp == 0 {
            "-".to_string()
        } else {
            format!("{:.3}", m.precision)
        };
        writeln!(out, "{:<18}  {:>6}  {:>6}  {:>6}", ty.code(), m.support(), m.fp, prec).unwrap();
    }
    out
}

/// NON-MATH and MATH precision / recall / F1 per engine.
pub fn render_segment_table(reports: &[EvalReport]) -> String {
    let name_width = reports.iter().map(|r| r.engine.len()).max().unwrap_or(0).max(6);
    let mut out = String::new();
    writeln!(
        out,
        "{:<name_width$}  | {:^23} | {:^23}",
        "", "NON-MATH Segments", "MATH Segments"
    )
    .unwrap();
    writeln!(
        out,
        "{:<name_width$}  | {:>7} {:>7} {:>7} | {:>7} {:>7} {:>7}",
        "Engine", "Prec", "Rec", "F1", "Prec", "Rec", "F1"
    )
    .unwrap();
    for r in reports {
        let Some(seg) = &r.by_segment else { continue };
        let cell = |label| seg.get(&label).map(|s| s.metrics).unwrap_or_default();
        let (n, m) = (cell(SegmentLabel::NonMath), cell(SegmentLabel::Math));
        writeln!(
            out,
            "{:<name_width$}  | {:>7.3} {:>7.3} {:>7.3} | {:>7.3} {:>7.3} {:>7.3}",
            r.engine, n.precision, n.recall, n.f1, m.precision, m.recall, m.f1
        )
        .unwrap();
    }
    out
}

/// Full text report for one run.
pub fn render_report(report: &EvalReport) -> String {
    let mut out = format!(
        "engine: {}\nmatch policy: {}\ntranscripts: {}\n",
        report.engine, report.policy, report.transcripts
    );
    if let Some(ci) = report.ci {
        writeln!(out, "bootstrap: {} iterations, seed {}", ci.iterations, ci.seed).unwrap();
    }
    out.push('\n');
    out.push_str(&render_overall_table(std::slice::from_ref(report)));
    out.push('\n');
    out.push_str(&render_type_table(report));
    if report.by_segment.is_some() {
        out.push('\n');
        out.push_str(&render_segment_table(std::slice::from_ref(report)));
    }
    out
}

/// One CSV row per stratum:
/// `stratum,key,tp,fp,fn,precision,recall,f1,p_lower,p_upper,r_lower,r_upper,f1_lower,f1_upper`.
pub fn write_strata_csv(report: &EvalReport, writer: impl Write) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "stratum",
        "key",
        "tp",
        "fp",
        "fn",
        "precision",
        "recall",
        "f1",
        "p_lower",
        "p_upper",
        "r_lower",
        "r_upper",
        "f1_lower",
        "f1_upper",
    ])?;
    let mut row = |stratum: &str, key: &str, m: &MetricSet, ci: Option<&BootstrapSummary>| {
        let bounds: Vec<String> = match ci {
            Some(c) => [c.precision, c.recall, c.f1]
                .iter()
                .flat_map(|b| [format!("{:.6}", b.lower), format!("{:.6}", b.upper)])
                .collect(),
            None => vec![String::new(); 6],
        };
        let mut record = vec![
            stratum.to_string(),
            key.to_string(),
            m.tp.to_string(),
            m.fp.to_string(),
            m.fn_.to_string(),
            format!("{:.6}", m.precision),
            format!("{:.6}", m.recall),
            format!("{:.6}", m.f1),
        ];
        record.extend(bounds);
        w.write_record(&record)
    };
    row("overall", "all", &report.overall, report.ci.as_ref())?;
    for (ty, m) in &report.by_type {
        row("type", ty.code(), m, None)?;
    }
    if let Some(seg) = &report.by_segment {
        for (label, s) in seg {
            row("segment", label.as_str(), &s.metrics, s.ci.as_ref())?;
        }
    }
    w.flush()?;
    Ok(())
}
