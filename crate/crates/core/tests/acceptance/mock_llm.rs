//! Offline LLM runs against recorded responses, record/replay equivalence,
//! and parser totality.

use std::collections::BTreeMap;

use mathdeid_core::corpus::{Corpus, Message, PiiSpan, PiiType, Provenance, Transcript};
use mathdeid_core::detection::{DetectionResult, ParseStatus};
use mathdeid_core::evaluation::{evaluate, MatchPolicy};
use mathdeid_core::llm::gateway::{RecordingClient, ReplayClient, RetryPolicy, ScriptedClient};
use mathdeid_core::llm::{
    detect_llm_corpus, parse_audit_table, parse_detections, GatewayRequest, LlmRunConfig, PromptVariant,
};
use mathdeid_core::segmentation::{label_corpus, HashedEmbedder, MathVocabulary, SegmentLabeling, Thresholds};
use rand::Rng;
use serde::Deserialize;
use serde_json::Value;

use crate::common::rng;
use crate::Outcome;

#[derive(Deserialize)]
struct Fixture {
    default: String,
    responses: Vec<Entry>,
}

#[derive(Deserialize)]
struct Entry {
    variant: String,
    #[serde(default)]
    math_label: Option<String>,
    text: String,
    response: String,
}

fn load_fixture() -> Result<Fixture, String> {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures/mock_llm_responses.json");
    let raw = std::fs::read_to_string(path).map_err(|e| format!("{path}: {e}"))?;
    serde_json::from_str(&raw).map_err(|e| format!("{path}: {e}"))
}

fn client(fixture: Fixture) -> ScriptedClient {
    ScriptedClient::new(move |req: &GatewayRequest, _| {
        let variant = PromptVariant::ALL
            .into_iter()
            .find(|v| v.template() == req.system_text)
            .expect("request uses a detection template");
        let payload: Value = serde_json::from_str(&req.user_text).expect("payload is JSON");
        let text = payload["message"]["text"].as_str().unwrap_or_default();
        let label = payload.get("math_label").and_then(Value::as_str);
        Ok(fixture
            .responses
            .iter()
            .find(|e| e.variant == variant.code() && e.text == text && e.math_label.as_deref() == label)
            .map(|e| e.response.clone())
            .unwrap_or_else(|| fixture.default.clone()))
    })
}

fn message(index: usize, role: &str, text: &str, gold: &[(&str, PiiType)]) -> Message {
    let mut m = Message::new(index, role, text);
    m.labels = gold
        .iter()
        .map(|&(needle, ty)| {
            let byte = text.find(needle).expect("gold text occurs in message");
            let start = text[..byte].chars().count();
            PiiSpan::new(text, start, start + needle.chars().count(), ty, Provenance::Upstream)
        })
        .collect();
    m
}

fn gold_corpus() -> Corpus {
    let t1 = Transcript::new(
        "mock-1",
        vec![
            message(0, "Student", "hi my name is Maya", &[("Maya", PiiType::Person)]),
            message(
                1,
                "Volunteer",
                "nice to meet you Maya, lets solve 2x + 5 = 11",
                &[("Maya", PiiType::Person)],
            ),
            message(2, "Student", "2x + 5 = 11 so x is 3", &[]),
            message(3, "Volunteer", "great, now solve 3x - 4 = 20", &[]),
            message(
                4,
                "Student",
                "x = 8 i think, i go to Lincoln Middle School",
                &[("Lincoln Middle School", PiiType::School)],
            ),
        ],
    );
    let t2 = Transcript::new(
        "mock-2",
        vec![
            message(0, "Student", "the area is 12/25 of the square", &[]),
            message(
                1,
                "Volunteer",
                "call the office at 555-0134 tomorrow",
                &[("555-0134", PiiType::PhoneNumber)],
            ),
            message(2, "Student", "the probability is 0.25 and the mean is 1990", &[]),
            message(
                3,
                "Student",
                "my teacher Mr. Ortiz said so",
                &[("Mr. Ortiz", PiiType::Person)],
            ),
            message(4, "Volunteer", "what is the slope of y = 3x + 2", &[]),
        ],
    );
    Corpus::new(vec![t1, t2]).unwrap()
}

fn run_variant(
    corpus: &Corpus,
    variant: PromptVariant,
    labeling: &SegmentLabeling,
    client: &dyn mathdeid_core::llm::gateway::ChatClient,
) -> Result<Vec<DetectionResult>, String> {
    let mut config = LlmRunConfig::new(variant, "mock-model");
    config.retry = RetryPolicy::immediate(2);
    detect_llm_corpus(corpus, &config, Some(labeling), client).map_err(|e| e.to_string())
}

fn numeric_fp(results: &[DetectionResult], corpus: &Corpus) -> Result<(usize, usize), String> {
    let report = evaluate(corpus, results, MatchPolicy::TextAndType, None, None).map_err(|e| e.to_string())?;
    let fp = report
        .by_type
        .iter()
        .filter(|(t, _)| t.is_numeric_identifier())
        .map(|(_, m)| m.fp)
        .sum();
    Ok((fp, report.overall.tp))
}

fn fuzz_parsers() -> Result<usize, String> {
    const PIECES: &[&str] = &[
        "[",
        "]",
        "{",
        "}",
        "\"text\"",
        "\"type\"",
        ":",
        ",",
        "\"PERSON\"",
        "\"Maya\"",
        "\"\"",
        "|",
        "pii_type",
        "pii_evaluation",
        "PII",
        "NOT_PII",
        "---",
        "\n",
        " ",
        "```json",
        "é",
        "\\",
        "\\|",
        "null",
        "42",
        "<PERSON>",
        "surrogate",
        "ai_redacted_content",
        "\t",
        "\"",
        "COURSE",
    ];
    let mut r = rng(99);
    for i in 0..1000 {
        let n = r.random_range(0..24);
        let mut s = String::new();
        for _ in 0..n {
            if r.random_bool(0.1) {
                s.push(char::from_u32(r.random_range(0..0x3000)).unwrap_or('?'));
            } else {
                s.push_str(PIECES[r.random_range(0..PIECES.len())]);
            }
        }
        let blank = s.trim().is_empty();
        let d = parse_detections(&s);
        ensure!(
            (d.status == ParseStatus::Empty) == blank,
            "case {i} {s:?}: detection status {:?}",
            d.status
        );
        ensure!(
            d.status == ParseStatus::Ok || d.detections.is_empty(),
            "case {i} {s:?}: non-OK parse returned detections"
        );
        ensure!(
            d.detections.iter().all(|(t, _)| !t.trim().is_empty()),
            "case {i} {s:?}: blank detection text"
        );
        let a = parse_audit_table(&s);
        ensure!(
            (a.status == ParseStatus::Empty) == blank,
            "case {i} {s:?}: audit status {:?}",
            a.status
        );
        ensure!(
            a.status == ParseStatus::Ok || a.rows.is_empty(),
            "case {i} {s:?}: non-OK audit returned rows"
        );
    }
    Ok(1000)
}

pub fn run() -> Outcome {
    let corpus = gold_corpus();
    let labeling = label_corpus(
        &corpus,
        &MathVocabulary::reference(),
        Thresholds::REFERENCE,
        &HashedEmbedder::new(384),
    )
    .map_err(|e| e.to_string())?;
    let live = client(load_fixture()?);
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let log = dir.path().join("responses.jsonl");
    let recorder = RecordingClient::new(live, &log).map_err(|e| e.to_string())?;

    let mut recorded = BTreeMap::new();
    for variant in PromptVariant::ALL {
        let results = run_variant(&corpus, variant, &labeling, &recorder)?;
        let bad: Vec<_> = results
            .iter()
            .flat_map(|r| &r.messages)
            .filter(|m| m.status != Some(ParseStatus::Ok))
            .map(|m| m.index)
            .collect();
        ensure!(bad.is_empty(), "{variant}: messages {bad:?} did not parse");
        recorded.insert(variant.code(), results);
    }
    let replay = ReplayClient::load(&log).map_err(|e| e.to_string())?;
    for variant in PromptVariant::ALL {
        let replayed = run_variant(&corpus, variant, &labeling, &replay)?;
        ensure!(
            replayed == recorded[variant.code()],
            "{variant}: replay differs from recorded run"
        );
    }

    let (basic, basic_tp) = numeric_fp(&recorded["BASIC"], &corpus)?;
    let (math, math_tp) = numeric_fp(&recorded["MATH_AWARE"], &corpus)?;
    let (seg, seg_tp) = numeric_fp(&recorded["SEGMENT_AWARE"], &corpus)?;
    ensure!(math < basic, "MATH_AWARE numeric FP {math} not below BASIC {basic}");
    ensure!(seg <= basic, "SEGMENT_AWARE numeric FP {seg} above BASIC {basic}");
    ensure!(
        basic_tp == 5 && math_tp == 5 && seg_tp == 5,
        "true positives {basic_tp}/{math_tp}/{seg_tp}, expected 5"
    );
    let fuzzed = fuzz_parsers()?;
    Ok(format!(
        "numeric FP: BASIC {basic}, MATH_AWARE {math}, SEGMENT_AWARE {seg}; replay identical; {fuzzed} fuzzed inputs parsed totally"
    ))
}
