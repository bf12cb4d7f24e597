//! Matching and micro-averaged metrics against an exhaustive oracle.

use std::collections::{BTreeMap, HashSet};

use mathdeid_core::corpus::{Corpus, Message, PiiSpan, PiiType, Provenance, Transcript};
use mathdeid_core::detection::{Detection, DetectionResult, MessageDetections};
use mathdeid_core::evaluation::{count_corpus, match_spans, pool, Counts, MatchPolicy, SpanItem};
use mathdeid_core::segmentation::{SegmentLabel, SegmentLabeling, TranscriptLabels};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::common::rng;
use crate::Outcome;

const TYPES: [PiiType; 3] = [PiiType::Person, PiiType::Location, PiiType::Age];
const TEXT: &str = "Alice met Bob in Paris at 12 near Rome";

fn oracle_dedupe(items: &[SpanItem]) -> Vec<SpanItem> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for i in items {
        if seen.insert((i.pii_type, i.text.trim().to_lowercase())) {
            out.push(i.clone());
        }
    }
    out
}

fn edge(g: &SpanItem, p: &SpanItem, policy: MatchPolicy) -> bool {
    if g.pii_type != p.pii_type {
        return false;
    }
    match policy {
        MatchPolicy::TextAndType => g.text.trim().to_lowercase() == p.text.trim().to_lowercase(),
        MatchPolicy::OverlapAndType => match (g.range, p.range) {
            (Some((a, b)), Some((c, d))) => a < d && c < b,
            _ => false,
        },
    }
}

/// Size of a maximum one-to-one matching by exhaustive search.
fn max_matching(gold: &[SpanItem], pred: &[SpanItem], used: &mut Vec<bool>, policy: MatchPolicy) -> usize {
    let Some((g, rest)) = gold.split_first() else {
        return 0;
    };
    let mut best = max_matching(rest, pred, used, policy);
    for j in 0..pred.len() {
        if !used[j] && edge(g, &pred[j], policy) {
            used[j] = true;
            best = best.max(1 + max_matching(rest, pred, used, policy));
            used[j] = false;
        }
    }
    best
}

fn oracle_counts(gold: &[SpanItem], pred: &[SpanItem], policy: MatchPolicy) -> Counts {
    let (g, p) = (oracle_dedupe(gold), oracle_dedupe(pred));
    let tp = max_matching(&g, &p, &mut vec![false; p.len()], policy);
    Counts::new(tp, p.len() - tp, g.len() - tp)
}

fn random_range(r: &mut ChaCha8Rng) -> (usize, usize) {
    let len = TEXT.chars().count();
    let s = r.random_range(0..len - 1);
    let e = r.random_range(s + 1..=(s + 8).min(len));
    (s, e)
}

fn random_gold(r: &mut ChaCha8Rng) -> Vec<PiiSpan> {
    (0..r.random_range(0..=4))
        .map(|_| {
            let (s, e) = random_range(r);
            PiiSpan::new(TEXT, s, e, TYPES[r.random_range(0..3)], Provenance::default())
        })
        .collect()
}

fn random_pred(r: &mut ChaCha8Rng, gold: &[PiiSpan]) -> Vec<Detection> {
    (0..r.random_range(0..=5))
        .map(|_| {
            let ty = TYPES[r.random_range(0..3)];
            if !gold.is_empty() && r.random_bool(0.5) {
                let g = &gold[r.random_range(0..gold.len())];
                let text = match r.random_range(0..3) {
                    0 => g.surface.clone(),
                    1 => format!(" {} ", g.surface.to_uppercase()),
                    _ => g.surface.to_lowercase(),
                };
                let ty = if r.random_bool(0.7) { g.pii_type } else { ty };
                Detection::grounded(text, ty, g.start, g.end)
            } else {
                let (s, e) = random_range(r);
                let text: String = TEXT.chars().skip(s).take(e - s).collect();
                if r.random_bool(0.2) {
                    Detection::ungrounded(text, ty)
                } else {
                    Detection::grounded(text, ty, s, e)
                }
            }
        })
        .collect()
}

fn random_fixture(seed: u64) -> Result<(Corpus, Vec<DetectionResult>, SegmentLabeling), String> {
    let mut r = rng(seed);
    let mut transcripts = Vec::new();
    let mut results = Vec::new();
    let mut labels = Vec::new();
    for t in 0..30 {
        let id = format!("m{t:02}");
        let n = r.random_range(1..=10);
        let mut messages = Vec::new();
        let mut detected = Vec::new();
        for i in 0..n {
            let mut m = Message::new(i, "Student", TEXT);
            m.labels = random_gold(&mut r);
            if r.random_bool(0.8) {
                detected.push(MessageDetections::new(i, random_pred(&mut r, &m.labels)));
            }
            messages.push(m);
        }
        transcripts.push(Transcript::new(id.clone(), messages));
        if r.random_bool(0.9) {
            results.push(DetectionResult {
                engine: "random".into(),
                session_id: id.clone(),
                messages: detected,
            });
        }
        labels.push(TranscriptLabels {
            session_id: id,
            labels: (0..n)
                .map(|_| {
                    if r.random_bool(0.5) {
                        SegmentLabel::Math
                    } else {
                        SegmentLabel::NonMath
                    }
                })
                .collect(),
        });
    }
    let corpus = Corpus::new(transcripts).map_err(|e| e.to_string())?;
    Ok((corpus, results, SegmentLabeling::new(labels)))
}

fn check_random(seed: u64, policy: MatchPolicy) -> Result<usize, String> {
    let (corpus, results, labeling) = random_fixture(seed)?;
    let counts = count_corpus(&corpus, &results, policy, Some(&labeling)).map_err(|e| e.to_string())?;
    let mut pooled = Counts::default();
    let mut messages = 0;
    for (t, tc) in corpus.iter().zip(&counts) {
        let result = results.iter().find(|r| r.session_id == t.session_id);
        let mut expected = Counts::default();
        for m in &t.messages {
            let gold: Vec<SpanItem> = m.labels.iter().map(SpanItem::from).collect();
            let pred: Vec<SpanItem> = result
                .and_then(|r| r.messages.iter().find(|d| d.index == m.index))
                .map(|d| d.detections.iter().map(SpanItem::from).collect())
                .unwrap_or_default();
            let direct = match_spans(&gold, &pred, policy);
            let oracle = oracle_counts(&gold, &pred, policy);
            ensure!(
                Counts::new(direct.tp(), direct.fp(), direct.fn_()) == oracle,
                "{policy} {}#{}: match_spans {:?} != oracle {oracle:?}",
                t.session_id,
                m.index,
                (direct.tp(), direct.fp(), direct.fn_())
            );
            expected += oracle;
            messages += 1;
        }
        ensure!(
            tc.overall == expected,
            "{}: transcript counts {:?} != {expected:?}",
            t.session_id,
            tc.overall
        );
        let by_type = pool(tc.by_type.values());
        let by_segment = pool(tc.by_segment.values());
        ensure!(
            by_type == tc.overall,
            "{}: type strata {by_type:?} do not add up",
            t.session_id
        );
        ensure!(
            by_segment == tc.overall,
            "{}: segment strata {by_segment:?} do not add up",
            t.session_id
        );
        pooled += expected;
    }
    let overall = pool(counts.iter().map(|c| &c.overall));
    ensure!(overall == pooled, "pooled {overall:?} != {pooled:?}");
    let m = overall.metrics();
    let div = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let (p, rc) = (div(m.tp, m.tp + m.fp), div(m.tp, m.tp + m.fn_));
    let f1 = div(2 * m.tp, 2 * m.tp + m.fp + m.fn_);
    ensure!(
        (m.precision - p).abs() < 1e-12 && (m.recall - rc).abs() < 1e-12 && (m.f1 - f1).abs() < 1e-12,
        "micro metrics {m:?} != ({p}, {rc}, {f1})"
    );
    let mut type_sum: BTreeMap<PiiType, Counts> = BTreeMap::new();
    for tc in &counts {
        for (ty, c) in &tc.by_type {
            *type_sum.entry(*ty).or_default() += *c;
        }
    }
    ensure!(pool(type_sum.values()) == overall, "corpus type strata do not add up");
    Ok(messages)
}

pub fn run() -> Outcome {
    let person = |s: &str| SpanItem::new(s, PiiType::Person, None);
    let gold = [person("Alice"), person("Bob")];
    let pred = [person("alice "), person("Carol"), person("Dan"), person("ALICE")];
    let m = match_spans(&gold, &pred, MatchPolicy::TextAndType);
    let c = Counts::new(m.tp(), m.fp(), m.fn_()).metrics();
    ensure!(
        (c.precision - 1.0 / 3.0).abs() < 1e-12 && (c.recall - 0.5).abs() < 1e-12 && (c.f1 - 0.4).abs() < 1e-12,
        "worked case: P {} R {} F1 {}, expected 1/3, 1/2, 0.4",
        c.precision,
        c.recall,
        c.f1
    );
    let empty = Counts::default().metrics();
    ensure!(
        empty.precision == 0.0 && empty.recall == 0.0 && empty.f1 == 0.0,
        "undefined ratios must be 0"
    );

    let mut messages = 0;
    for seed in 0..20 {
        for policy in [MatchPolicy::TextAndType, MatchPolicy::OverlapAndType] {
            messages += check_random(seed, policy)?;
        }
    }
    Ok(format!(
        "P/R/F1 = 1/3, 1/2, 0.4; {messages} random messages agree with exhaustive matching; strata add up"
    ))
}
