//! The LLM audit pass: judge every upstream redaction, report missed PII, and
//! propose surrogates.

use serde::{Deserialize, Serialize};

use super::items::{upstream_spans, AnnotationItem, Evaluation, ItemOrigin, ItemStatus, SpanRef};
use crate::corpus::{byte_to_char, Corpus, PiiSpan, PiiType, Transcript};
use crate::detection::ParseStatus;
use crate::llm::detect::run_bounded;
use crate::llm::gateway::{complete_with_retry, ChatClient, GatewayError, RateLimiter, RetryPolicy};
use crate::llm::parse::{parse_audit_table, AuditRow, ParsedAudit};
use crate::llm::prompts::{context_window, ContextMessage, GatewayRequest, AUDIT_TEMPLATE, DEFAULT_CONTEXT_RADIUS};
use crate::llm::LlmError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum AuditScope {
    /// Every non-empty message, so missed PII can be found anywhere.
    #[default]
    AllMessages,
    /// Only messages carrying an upstream redaction.
    RedactedOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditConfig {
    pub model_id: String,
    pub context_radius: usize,
    pub concurrency_limit: usize,
    pub retry: RetryPolicy,
    pub rate_limit: Option<f64>,
    pub iteration: u32,
    pub scope: AuditScope,
}

impl AuditConfig {
    pub fn new(model_id: impl Into<String>) -> Self {
        Self {
            model_id: model_id.into(),
            context_radius: DEFAULT_CONTEXT_RADIUS,
            concurrency_limit: 8,
            retry: RetryPolicy::default(),
            rate_limit: None,
            iteration: 1,
            scope: AuditScope::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RedactionRef {
    #[serde(rename = "type")]
    pub pii_type: PiiType,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditPayload {
    pub context_before: Vec<ContextMessage>,
    pub message: ContextMessage,
    pub context_after: Vec<ContextMessage>,
    pub existing_redactions: Vec<RedactionRef>,
}

pub fn build_audit_request(transcript: &Transcript, message_index: usize, config: &AuditConfig) -> GatewayRequest {
    let (context_before, message, context_after) = context_window(transcript, message_index, config.context_radius);
    let existing_redactions = upstream_spans(&transcript.messages[message_index])
        .into_iter()
        .map(|s| RedactionRef {
            pii_type: s.pii_type,
            text: s.surface,
        })
        .collect();
    let payload = AuditPayload {
        context_before,
        message,
        context_after,
        existing_redactions,
    };
    GatewayRequest {
        model_id: config.model_id.clone(),
        system_text: AUDIT_TEMPLATE.to_string(),
        user_text: serde_json::to_string_pretty(&payload).expect("payload serializes"),
        max_attempts: config.retry.max_attempts,
    }
}

/// Char ranges of `original` that `redacted` replaced with `tag`. Gaps whose
/// text is the tag itself (pre-existing placeholders) are skipped. `None`
/// when the two texts do not align.
pub fn redacted_gaps(original: &str, redacted: &str, tag: &str) -> Option<Vec<(usize, usize)>> {
    let pieces: Vec<&str> = redacted.split(tag).collect();
    if pieces.len() < 2 {
        return None;
    }
    let first = pieces[0];
    let last = pieces[pieces.len() - 1];
    if !original.starts_with(first) || !original.ends_with(last) || first.len() + last.len() > original.len() {
        return None;
    }
    let tail_start = original.len() - last.len();
    let mut pos = first.len();
    let mut gaps = Vec::new();
    for piece in &pieces[1..pieces.len() - 1] {
        if piece.is_empty() {
            return None;
        }
        let from = original[pos..].char_indices().nth(1).map(|(b, _)| pos + b)?;
        let found = from + original[from..tail_start.max(from)].find(piece)?;
        gaps.push((pos, found));
        pos = found + piece.len();
    }
    if pos >= tail_start {
        return None;
    }
    gaps.push((pos, tail_start));
    Some(
        gaps.into_iter()
            .filter(|&(s, e)| &original[s..e] != tag)
            .map(|(s, e)| (byte_to_char(original, s), byte_to_char(original, e)))
            .collect(),
    )
}

fn overlaps(a: (usize, usize), b: (usize, usize)) -> bool {
    a.0 < b.1 && b.0 < a.1
}

/// Turns parsed audit rows for one message into items.
///
/// Rows without redacted content judge existing redactions: each is matched
/// to the first unjudged redaction of the same type, then remaining rows to
/// remaining redactions in order. Redactions left unjudged, or all of them
/// when the response did not parse, become flagged UNCERTAIN items without a
/// surrogate. Rows with redacted content report new PII, located by
/// aligning the redacted content with the message.
pub fn items_from_rows(
    transcript: &Transcript,
    message_index: usize,
    parsed: &ParsedAudit,
    iteration: u32,
) -> (Vec<AnnotationItem>, Vec<String>) {
    let message = &transcript.messages[message_index];
    let spans: Vec<PiiSpan> = upstream_spans(message);
    let mut warnings = Vec::new();
    let context = format!("session `{}` message {}", transcript.session_id, message.index);
    let usable = parsed.status == ParseStatus::Ok;
    if parsed.status == ParseStatus::Malformed {
        warnings.push(format!("{context}: unparseable audit response"));
    }
    let rows: &[AuditRow] = if usable { &parsed.rows } else { &[] };
    let (existing, discovered): (Vec<&AuditRow>, Vec<&AuditRow>) =
        rows.iter().partition(|r| r.ai_redacted_content.is_none());

    let mut assignment: Vec<Option<&AuditRow>> = vec![None; spans.len()];
    let mut leftover = Vec::new();
    for row in existing {
        match (0..spans.len()).find(|&i| assignment[i].is_none() && spans[i].pii_type == row.pii_type) {
            Some(i) => assignment[i] = Some(row),
            None => leftover.push(row),
        }
    }
    for row in leftover {
        match (0..spans.len()).find(|&i| assignment[i].is_none()) {
            Some(i) => assignment[i] = Some(row),
            None => warnings.push(format!("{context}: extra {} row ignored", row.pii_type)),
        }
    }

    let base = |ordinal: usize, pii_type: PiiType| AnnotationItem {
        id: AnnotationItem::item_id(&transcript.session_id, message.index, ordinal),
        session_id: transcript.session_id.clone(),
        message_index: message.index,
        pii_type,
        origin: ItemOrigin::Upstream,
        span: None,
        original_text: String::new(),
        ai_redacted_content: None,
        evaluation: Evaluation::Uncertain,
        surrogate: None,
        iteration,
        votes: Vec::new(),
        status: ItemStatus::Pending,
        flagged: false,
    };

    let mut items = Vec::new();
    for (i, span) in spans.iter().enumerate() {
        let mut item = base(i, span.pii_type);
        item.span = Some(SpanRef {
            start: span.start,
            end: span.end,
        });
        item.original_text = span.surface.clone();
        match assignment[i] {
            Some(row) => {
                item.pii_type = row.pii_type;
                item.evaluation = row.evaluation;
                item.surrogate = row.surrogate.clone();
                if item.surrogate.is_none() {
                    item.flagged = true;
                    warnings.push(format!("{context}: no surrogate for {}", span.surface));
                }
            }
            None => {
                item.flagged = true;
                if usable {
                    warnings.push(format!("{context}: redaction {} not judged", span.surface));
                }
            }
        }
        items.push(item);
    }

    let mut claimed: Vec<(usize, usize)> = spans.iter().map(|s| (s.start, s.end)).collect();
    for row in discovered {
        let content = row.ai_redacted_content.as_deref().unwrap_or_default();
        let mut item = base(items.len(), row.pii_type);
        item.origin = ItemOrigin::Discovered;
        item.ai_redacted_content = row.ai_redacted_content.clone();
        item.evaluation = row.evaluation;
        item.surrogate = row.surrogate.clone();
        let gap = redacted_gaps(&message.text, content, &row.pii_type.placeholder())
            .or_else(|| redacted_gaps(&message.text, content, &format!("<{}>", row.pii_type.prompt_name())))
            .and_then(|gaps| gaps.into_iter().find(|g| !claimed.iter().any(|c| overlaps(*c, *g))));
        match gap {
            Some((start, end)) => {
                claimed.push((start, end));
                item.span = Some(SpanRef { start, end });
                item.original_text = crate::corpus::char_slice(&message.text, start, end)
                    .expect("gap within message")
                    .to_string();
            }
            None => {
                item.flagged = true;
                warnings.push(format!(
                    "{context}: could not locate new {} in redacted content",
                    row.pii_type
                ));
            }
        }
        if item.surrogate.is_none() {
            item.flagged = true;
        }
        items.push(item);
    }
    (items, warnings)
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct AuditOutcome {
    pub items: Vec<AnnotationItem>,
    pub warnings: Vec<String>,
    pub requests: usize,
    pub malformed: usize,
}

/// Audits the corpus. Gateway failures after retries mark that message's
/// redactions as flagged UNCERTAIN items; authentication or configuration
/// failures abort.
pub fn audit_corpus(corpus: &Corpus, client: &dyn ChatClient, config: &AuditConfig) -> Result<AuditOutcome, LlmError> {
    let jobs: Vec<(&Transcript, usize)> = corpus
        .iter()
        .flat_map(|t| (0..t.messages.len()).map(move |i| (t, i)))
        .filter(|(t, i)| {
            let m = &t.messages[*i];
            !m.text.trim().is_empty() && (config.scope == AuditScope::AllMessages || !upstream_spans(m).is_empty())
        })
        .collect();
    let limiter = config.rate_limit.map(RateLimiter::per_second);
    let per_message = run_bounded(&jobs, config.concurrency_limit, |&(t, i)| {
        let request = build_audit_request(t, i, config);
        let attempted = complete_with_retry(client, &request, &config.retry, limiter.as_ref());
        let parsed = match attempted.result {
            Ok(response) => parse_audit_table(&response.raw_text),
            Err(e) if e.is_fatal() => return Err(e),
            Err(_) => ParsedAudit {
                status: ParseStatus::Malformed,
                rows: Vec::new(),
                dropped: 0,
            },
        };
        Ok::<_, GatewayError>((parsed.status, items_from_rows(t, i, &parsed, config.iteration)))
    })?;
    let mut outcome = AuditOutcome {
        requests: jobs.len(),
        ..Default::default()
    };
    for (status, (items, warnings)) in per_message {
        if status == ParseStatus::Malformed {
            outcome.malformed += 1;
        }
        outcome.items.extend(items);
        outcome.warnings.extend(warnings);
    }
    Ok(outcome)
}
