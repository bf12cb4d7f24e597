//! Report tables, JSON, and strata CSV.

use mathdeid_core::corpus::{Corpus, Message, PiiSpan, PiiType, Provenance, Transcript};
use mathdeid_core::detection::{Detection, DetectionResult, MessageDetections};
use mathdeid_core::evaluation::{
    evaluate, render_overall_table, render_segment_table, render_type_table, write_strata_csv, BootstrapOptions,
    MatchPolicy,
};
use mathdeid_core::segmentation::{SegmentLabel, SegmentLabeling, TranscriptLabels};
use regex::Regex;
use serde_json::Value;

use crate::Outcome;

/// Four transcripts, each with a MATH message carrying a false DATE hit and
/// a NON-MATH message whose PERSON is found.
fn fixture() -> (Corpus, Vec<DetectionResult>, SegmentLabeling) {
    let mut transcripts = Vec::new();
    let mut results = Vec::new();
    let mut labels = Vec::new();
    for t in 0..4 {
        let id = format!("rep{t}");
        let chat = format!("hello I am Sam{t}");
        let mut m1 = Message::new(1, "Student", chat.clone());
        m1.labels = vec![PiiSpan::new(
            &chat,
            11,
            chat.chars().count(),
            PiiType::Person,
            Provenance::Upstream,
        )];
        transcripts.push(Transcript::new(
            id.clone(),
            vec![Message::new(0, "Volunteer", "solve 3x + 1 = 10"), m1],
        ));
        results.push(DetectionResult {
            engine: "fixture".into(),
            session_id: id.clone(),
            messages: vec![
                MessageDetections::new(0, vec![Detection::grounded("3x + 1 = 10", PiiType::Date, 6, 17)]),
                MessageDetections::new(1, vec![Detection::grounded(format!("Sam{t}"), PiiType::Person, 11, 15)]),
            ],
        });
        labels.push(TranscriptLabels {
            session_id: id,
            labels: vec![SegmentLabel::Math, SegmentLabel::NonMath],
        });
    }
    (Corpus::new(transcripts).unwrap(), results, SegmentLabeling::new(labels))
}

pub fn run() -> Outcome {
    let (corpus, results, labeling) = fixture();
    let report = evaluate(
        &corpus,
        &results,
        MatchPolicy::TextAndType,
        Some(&labeling),
        Some(BootstrapOptions {
            iterations: 200,
            seed: 1,
        }),
    )
    .map_err(|e| e.to_string())?;
    let seg = report.by_segment.as_ref().ok_or("no segment strata")?;
    let (math, non) = (&seg[&SegmentLabel::Math].metrics, &seg[&SegmentLabel::NonMath].metrics);
    ensure!(
        math.precision == 0.0 && math.fp == 4 && non.precision == 1.0 && non.tp == 4,
        "MATH {math:?} / NON-MATH {non:?}"
    );
    ensure!(
        report.overall.precision == 0.5 && report.overall.recall == 1.0,
        "overall {:?}",
        report.overall
    );

    let overall = render_overall_table(std::slice::from_ref(&report));
    let cell = Regex::new(r"\d\.\d{3} \[\d\.\d{3}, \d\.\d{3}\]").unwrap();
    let row = overall
        .lines()
        .find(|l| l.starts_with("fixture"))
        .ok_or("engine row missing")?;
    ensure!(
        cell.find_iter(row).count() == 3,
        "overall row lacks three bracketed intervals: {row:?}"
    );
    ensure!(
        overall
            .lines()
            .next()
            .is_some_and(|h| h.contains("Precision") && h.contains("F1")),
        "overall header"
    );

    let types = render_type_table(&report);
    let order: Vec<&str> = types
        .lines()
        .skip(1)
        .filter_map(|l| l.split_whitespace().next())
        .collect();
    ensure!(order == ["PERSON", "DATE"], "type table order {order:?}");

    let segments = render_segment_table(std::slice::from_ref(&report));
    ensure!(
        segments.contains("NON-MATH Segments") && segments.contains("MATH Segments"),
        "segment table headers missing:\n{segments}"
    );

    let json: Value = serde_json::to_value(&report).map_err(|e| e.to_string())?;
    for key in [
        "engine",
        "policy",
        "transcripts",
        "overall",
        "ci",
        "by_type",
        "by_segment",
    ] {
        ensure!(json.get(key).is_some(), "JSON report lacks `{key}`");
    }
    ensure!(
        json["policy"] == "TEXT_AND_TYPE",
        "policy serialized as {}",
        json["policy"]
    );
    ensure!(
        json["by_segment"]["MATH"]["ci"].is_object(),
        "segment stratum lacks an interval"
    );

    let mut buf = Vec::new();
    write_strata_csv(&report, &mut buf).map_err(|e| e.to_string())?;
    let csv = String::from_utf8(buf).unwrap();
    let keys: Vec<String> = csv
        .lines()
        .skip(1)
        .map(|l| l.split(',').take(2).collect::<Vec<_>>().join("/"))
        .collect();
    ensure!(
        keys == [
            "overall/all",
            "type/DATE",
            "type/PERSON",
            "segment/MATH",
            "segment/NON-MATH"
        ],
        "CSV strata {keys:?}"
    );
    ensure!(
        csv.lines().all(|l| l.split(',').count() == 14),
        "CSV rows must have 14 columns"
    );
    Ok("MATH precision 0, NON-MATH 1; tables, JSON, and CSV carry every stratum".into())
}
