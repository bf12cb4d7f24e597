//! Audit-to-apply conservation, surrogate uniqueness, and label totals.

use std::collections::{BTreeMap, HashMap, HashSet};

use chrono::Utc;
use mathdeid_core::corpus::{char_slice, placeholder_spans, Corpus, PiiType, Provenance, Transcript};
use mathdeid_core::llm::gateway::{RetryPolicy, ScriptedClient};
use mathdeid_core::surrogation::{
    apply_surrogates, audit_corpus, select_applicable, AnnotationItem, ApplyOutcome, AuditConfig, Evaluation,
    ItemOrigin, ItemStatus, SpanRef, SurrogateRegistry, Vote, VoteDirection,
};
use rand::Rng;
use serde_json::Value;

use crate::common::rng;
use crate::Outcome;

const HEADER: &str = "| pii_type | ai_redacted_content | pii_evaluation | surrogate |\n|---|---|---|---|\n";

fn up(item: &mut AnnotationItem) {
    item.add_vote(Vote {
        reviewer_id: "r1".into(),
        direction: VoteDirection::Up,
        timestamp: Utc::now(),
        note: None,
    })
    .expect("first vote");
}

/// Answers audit requests: numeric identifiers are NOT_PII with a digit,
/// other redactions are PII with a session-unique name, and "my name is X"
/// reports X as new PII.
fn audit_script() -> ScriptedClient {
    ScriptedClient::new(|req, _| {
        let payload: Value = serde_json::from_str(&req.user_text).expect("audit payload is JSON");
        let session = payload["message"]["text"].as_str().unwrap_or_default().to_string();
        let tag = payload["message"]["index"].as_u64().unwrap_or_default();
        let mut out = String::from(HEADER);
        for (k, r) in payload["existing_redactions"]
            .as_array()
            .into_iter()
            .flatten()
            .enumerate()
        {
            let ty: PiiType = r["type"].as_str().unwrap().parse().unwrap();
            if ty.is_numeric_identifier() {
                out.push_str(&format!("| {} |  | NOT_PII | {} |\n", ty.prompt_name(), k + 1));
            } else {
                let id = session
                    .split_whitespace()
                    .find(|w| w.starts_with("sid"))
                    .unwrap_or("sid?");
                out.push_str(&format!("| {} |  | PII | Robin {id}x{tag}x{k} |\n", ty.prompt_name()));
            }
        }
        if let Some(rest) = session.split("my name is ").nth(1) {
            let name = rest.split_whitespace().next().unwrap();
            let redacted = session.replacen(name, "<PERSON>", 1);
            let id = session.split_whitespace().find(|w| w.starts_with("sid")).unwrap();
            out.push_str(&format!("| PERSON | {redacted} | PII | Jordan {id}n |\n"));
        }
        Ok(out)
    })
}

fn config() -> AuditConfig {
    let mut c = AuditConfig::new("mock-audit");
    c.retry = RetryPolicy::immediate(1);
    c
}

fn fixture() -> (Corpus, usize, usize, usize) {
    let mut r = rng(31);
    let types = [
        PiiType::Person,
        PiiType::Location,
        PiiType::UsDriverLicense,
        PiiType::PhoneNumber,
        PiiType::School,
        PiiType::Date,
    ];
    let names = ["Priya", "Mateo", "Keiko", "Olu", "Sven"];
    let (mut kept, mut removed, mut planted) = (0, 0, 0);
    let mut transcripts = Vec::new();
    for t in 0..50 {
        let sid = format!("sid{t:02}");
        let mut turns = Vec::new();
        for m in 0..r.random_range(2..=6) {
            let mut text = format!("{sid} turn {m}");
            for _ in 0..r.random_range(0..=2) {
                let ty = types[r.random_range(0..types.len())];
                text.push_str(&format!(" then {} and", ty.placeholder()));
                if ty.is_numeric_identifier() {
                    removed += 1;
                } else {
                    kept += 1;
                }
            }
            if r.random_bool(0.2) {
                text.push_str(&format!(" my name is {} btw", names[r.random_range(0..names.len())]));
                planted += 1;
            }
            turns.push(("Student", text));
        }
        transcripts.push(Transcript::from_turns(sid, turns));
    }
    (Corpus::new(transcripts).unwrap(), kept, removed, planted)
}

fn check_output(outcome: &ApplyOutcome, registry: &SurrogateRegistry) -> Result<(), String> {
    ensure!(
        outcome.summary.balances(),
        "ledger does not balance: {:?}",
        outcome.summary
    );
    registry.check().map_err(|e| e.to_string())?;
    let mut owners: HashMap<String, HashSet<&str>> = HashMap::new();
    for t in &outcome.corpus {
        for m in &t.messages {
            for l in &m.labels {
                let slice = char_slice(&m.text, l.start, l.end);
                ensure!(
                    slice == Some(l.surface.as_str()),
                    "{}#{}: label offsets drifted",
                    t.session_id,
                    m.index
                );
                if l.provenance == Provenance::Surrogate {
                    owners
                        .entry(l.surface.to_lowercase())
                        .or_default()
                        .insert(&t.session_id);
                }
            }
        }
    }
    if let Some((s, o)) = owners.iter().find(|(_, o)| o.len() > 1) {
        return Err(format!("surrogate `{s}` appears in {o:?}"));
    }
    Ok(())
}

pub fn run() -> Outcome {
    let (corpus, kept, removed, planted) = fixture();
    let audit = audit_corpus(&corpus, &audit_script(), &config()).map_err(|e| e.to_string())?;
    ensure!(
        audit.warnings.is_empty(),
        "audit warnings: {:?}",
        &audit.warnings[..audit.warnings.len().min(3)]
    );
    let mut items = audit.items;
    for item in &mut items {
        item.auto_approve();
        if item.origin == ItemOrigin::Discovered {
            up(item);
            item.close_iteration();
        }
    }
    let (applicable, skipped) = select_applicable(&items);
    ensure!(skipped.is_empty(), "items not applicable: {skipped:?}");
    let mut registry = SurrogateRegistry::new();
    let outcome = apply_surrogates(&corpus, &applicable, &mut registry).map_err(|e| e.to_string())?;
    check_output(&outcome, &registry)?;
    let s = &outcome.summary;
    ensure!(
        (s.input_labels, s.retained, s.removed, s.discovered, s.untouched)
            == (kept + removed, kept, removed, planted, 0),
        "summary {s:?}, expected kept {kept}, removed {removed}, discovered {planted}"
    );
    ensure!(s.output_labels == kept + planted, "output labels {}", s.output_labels);
    ensure!(
        outcome
            .corpus
            .iter()
            .flat_map(|t| &t.messages)
            .all(|m| placeholder_spans(&m.text).is_empty()),
        "placeholders remain after apply"
    );
    let again = apply_surrogates(&outcome.corpus, &applicable, &mut registry.clone());
    ensure!(again.is_err(), "second apply of the same items succeeded");

    let coord = |text: &str| {
        Corpus::new(vec![Transcript::from_turns(
            "coord",
            [
                ("Volunteer", "so let's break this down"),
                ("Volunteer", text),
                ("Volunteer", "or in this case our point which is (1,3)"),
            ],
        )])
        .unwrap()
    };
    let two = format!("{HEADER}| US_DRIVER_LICENSE |  | NOT_PII | 1 |\n| US_DRIVER_LICENSE |  | NOT_PII | 3 |\n");
    let one = format!("{HEADER}| US_DRIVER_LICENSE |  | NOT_PII | 1 and 3 |\n");
    let dl = PiiType::UsDriverLicense.placeholder();
    for (text, table) in [
        (format!("{dl} and {dl} are the numbers of our coordinate"), two),
        (format!("{dl} are the numbers of our coordinate"), one),
    ] {
        let corpus = coord(&text);
        let client = ScriptedClient::new(move |req, _| {
            let payload: Value = serde_json::from_str(&req.user_text).unwrap();
            Ok(
                if payload["existing_redactions"].as_array().is_some_and(|a| !a.is_empty()) {
                    table.clone()
                } else {
                    HEADER.to_string()
                },
            )
        });
        let mut items = audit_corpus(&corpus, &client, &config())
            .map_err(|e| e.to_string())?
            .items;
        items.iter_mut().for_each(AnnotationItem::auto_approve);
        let (applicable, _) = select_applicable(&items);
        let out = apply_surrogates(&corpus, &applicable, &mut SurrogateRegistry::new()).map_err(|e| e.to_string())?;
        let m = &out.corpus.transcripts[0].messages[1];
        ensure!(
            m.text == "1 and 3 are the numbers of our coordinate" && m.labels.is_empty(),
            "coordinate example gave {:?} with {} labels",
            m.text,
            m.labels.len()
        );
        ensure!(
            out.summary.balances() && out.summary.output_labels == 0,
            "coordinate ledger {:?}",
            out.summary
        );
    }
    Ok(format!(
        "{} transcripts: {kept} retained, {removed} removed, {planted} discovered; ledger balances; surrogates unique; coordinate example restored",
        corpus.len()
    ))
}

const SOURCE: [(PiiType, usize, usize); 12] = [
    (PiiType::Person, 1915, 1265),
    (PiiType::Url, 245, 186),
    (PiiType::Location, 595, 121),
    (PiiType::GradeLevel, 87, 84),
    (PiiType::School, 88, 71),
    (PiiType::CourseNumber, 1103, 37),
    (PiiType::Nrp, 235, 22),
    (PiiType::UsDriverLicense, 941, 2),
    (PiiType::PhoneNumber, 30, 2),
    (PiiType::IpAddress, 2, 2),
    (PiiType::UsBankNumber, 20, 0),
    (PiiType::UsPassport, 2, 0),
];

const DISCOVERED: [(PiiType, usize); 8] = [
    (PiiType::Person, 159),
    (PiiType::GradeLevel, 23),
    (PiiType::Age, 8),
    (PiiType::Date, 4),
    (PiiType::CourseNumber, 3),
    (PiiType::Nrp, 3),
    (PiiType::School, 2),
    (PiiType::Url, 1),
];

const EXPECTED: [(PiiType, usize); 12] = [
    (PiiType::Person, 1424),
    (PiiType::Url, 187),
    (PiiType::Location, 121),
    (PiiType::GradeLevel, 107),
    (PiiType::School, 73),
    (PiiType::CourseNumber, 40),
    (PiiType::Nrp, 25),
    (PiiType::Age, 8),
    (PiiType::Date, 4),
    (PiiType::UsDriverLicense, 2),
    (PiiType::PhoneNumber, 2),
    (PiiType::IpAddress, 2),
];

pub fn run_label_totals() -> Outcome {
    const TRANSCRIPTS: usize = 1000;
    let mut texts: Vec<Vec<String>> = vec![Vec::new(); TRANSCRIPTS];
    let mut items = Vec::new();
    let mut slot = 0usize;
    let mut next = || {
        slot += 1;
        slot % TRANSCRIPTS
    };
    for (ty, total, kept) in SOURCE {
        for n in 0..total {
            let t = next();
            let m = texts[t].len();
            let prefix = "we saw ";
            let text = format!("{prefix}{} today", ty.placeholder());
            let start = prefix.len();
            let (evaluation, surrogate) = if n < kept {
                (Evaluation::Pii, format!("{}-{t}-{n}", ty.code().to_lowercase()))
            } else {
                (Evaluation::NotPii, "it".to_string())
            };
            items.push(AnnotationItem {
                id: AnnotationItem::item_id(&format!("L{t:04}"), m, 0),
                session_id: format!("L{t:04}"),
                message_index: m,
                pii_type: ty,
                origin: ItemOrigin::Upstream,
                span: Some(SpanRef {
                    start,
                    end: start + ty.placeholder().len(),
                }),
                original_text: ty.placeholder(),
                ai_redacted_content: None,
                evaluation,
                surrogate: Some(surrogate),
                iteration: 1,
                votes: Vec::new(),
                status: ItemStatus::Pending,
                flagged: false,
            });
            texts[t].push(text);
        }
    }
    for (ty, count) in DISCOVERED {
        for n in 0..count {
            let t = next();
            let m = texts[t].len();
            let secret = format!("zq{}{n}", ty.code().to_lowercase());
            let prefix = "call me ";
            texts[t].push(format!("{prefix}{secret} please"));
            let mut item = AnnotationItem {
                id: AnnotationItem::item_id(&format!("L{t:04}"), m, 0),
                session_id: format!("L{t:04}"),
                message_index: m,
                pii_type: ty,
                origin: ItemOrigin::Discovered,
                span: Some(SpanRef {
                    start: prefix.len(),
                    end: prefix.len() + secret.len(),
                }),
                original_text: secret,
                ai_redacted_content: Some(format!("{prefix}{} please", ty.placeholder())),
                evaluation: Evaluation::Pii,
                surrogate: Some(format!("new-{}-{t}-{n}", ty.code().to_lowercase())),
                iteration: 1,
                votes: Vec::new(),
                status: ItemStatus::Pending,
                flagged: false,
            };
            up(&mut item);
            item.close_iteration();
            items.push(item);
        }
    }
    for item in &mut items {
        item.auto_approve();
    }
    let corpus = Corpus::new(
        texts
            .into_iter()
            .enumerate()
            .map(|(t, msgs)| Transcript::from_turns(format!("L{t:04}"), msgs.into_iter().map(|m| ("Student", m))))
            .collect(),
    )
    .map_err(|e| e.to_string())?;

    let mut registry = SurrogateRegistry::new();
    let outcome = apply_surrogates(&corpus, &items, &mut registry).map_err(|e| e.to_string())?;
    check_output(&outcome, &registry)?;
    let s = &outcome.summary;
    let source_total: usize = SOURCE.iter().map(|s| s.1).sum();
    ensure!(
        s.input_labels == source_total && source_total == 5263,
        "input labels {}",
        s.input_labels
    );
    ensure!(
        s.retained == 1792 && s.discovered == 203,
        "retained {} discovered {}",
        s.retained,
        s.discovered
    );
    ensure!(
        s.output_labels == 1995,
        "output labels {}, expected 1995",
        s.output_labels
    );
    let expected: BTreeMap<PiiType, usize> = EXPECTED.into_iter().collect();
    ensure!(
        s.output_by_type == expected,
        "per-type totals differ: {:?}",
        s.output_by_type
            .iter()
            .filter(|(t, n)| expected.get(t) != Some(n))
            .collect::<Vec<_>>()
    );
    Ok("5263 source labels -> 1792 kept + 203 discovered = 1995; all 12 per-type totals match".into())
}
