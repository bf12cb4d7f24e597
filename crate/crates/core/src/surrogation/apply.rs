//! Rewrites the corpus with approved audit decisions.
//!
//! PII and UNCERTAIN items replace their target text with the registered
//! surrogate and keep a SURROGATE label over it. NOT_PII items replace their
//! target with the context replacement and drop the label. Redactions
//! without an applicable item are left untouched.

use std::collections::{BTreeMap, HashMap};
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::items::{upstream_spans, AnnotationItem, Evaluation, ItemOrigin};
use super::registry::{entity_key, RegistryError, SurrogateRegistry};
use crate::corpus::{char_slice, Corpus, Message, PiiSpan, PiiType, Provenance, Transcript, ValidationError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LedgerAction {
    /// Upstream redaction replaced by a surrogate; label kept.
    Retained,
    /// Redaction judged NOT_PII; text restored, label removed.
    Removed,
    /// Newly found PII replaced by a surrogate; label added.
    Discovered,
    /// Redaction with no applicable item; text and label unchanged.
    Untouched,
}

impl LedgerAction {
    pub fn code(self) -> &'static str {
        match self {
            LedgerAction::Retained => "retained",
            LedgerAction::Removed => "removed",
            LedgerAction::Discovered => "discovered",
            LedgerAction::Untouched => "untouched",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LedgerRow {
    pub session_id: String,
    pub message_index: usize,
    #[serde(rename = "type")]
    pub pii_type: PiiType,
    pub verdict: Option<Evaluation>,
    pub action: LedgerAction,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LedgerSummary {
    pub input_labels: usize,
    pub discovered_items: usize,
    pub retained: usize,
    pub removed: usize,
    pub discovered: usize,
    pub untouched: usize,
    pub output_labels: usize,
    pub output_by_type: BTreeMap<PiiType, usize>,
}

impl LedgerSummary {
    /// Labels kept in the output: surrogated, untouched, and discovered.
    pub fn kept(&self) -> usize {
        self.retained + self.untouched + self.discovered
    }

    /// Every input label and every applied discovery is accounted for once.
    pub fn balances(&self) -> bool {
        self.kept() + self.removed == self.input_labels + self.discovered_items && self.kept() == self.output_labels
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ApplyOutcome {
    pub corpus: Corpus,
    pub ledger: Vec<LedgerRow>,
    pub summary: LedgerSummary,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ApplyError {
    #[error("item `{0}` is not approved for apply")]
    NotApplicable(String),
    #[error("item `{0}` has no span")]
    NoSpan(String),
    #[error("item `{0}` refers to a message that does not exist")]
    UnknownMessage(String),
    #[error("item `{id}` expects `{expected}` but the text there is `{found}` (already applied?)")]
    StaleTarget {
        id: String,
        expected: String,
        found: String,
    },
    #[error("upstream item `{0}` does not match any redaction")]
    NotARedaction(String),
    #[error("discovered item `{0}` overlaps another edit or redaction")]
    Overlap(String),
    #[error(transparent)]
    Registry(#[from] RegistryError),
    #[error(transparent)]
    Invalid(#[from] ValidationError),
}

/// Latest-iteration version of each item id that is ready to apply, plus the
/// ids of the latest versions that are not.
pub fn select_applicable(items: &[AnnotationItem]) -> (Vec<AnnotationItem>, Vec<String>) {
    let mut latest: HashMap<&str, &AnnotationItem> = HashMap::new();
    for item in items {
        let slot = latest.entry(item.id.as_str()).or_insert(item);
        if item.iteration >= slot.iteration {
            *slot = item;
        }
    }
    let mut chosen: Vec<&AnnotationItem> = latest.into_values().collect();
    chosen.sort_by(|a, b| (&a.session_id, a.message_index, &a.id).cmp(&(&b.session_id, b.message_index, &b.id)));
    let (ok, skipped): (Vec<&AnnotationItem>, Vec<&AnnotationItem>) =
        chosen.into_iter().partition(|i| i.is_applicable());
    (
        ok.into_iter().cloned().collect(),
        skipped.into_iter().map(|i| i.id.clone()).collect(),
    )
}

struct Edit<'a> {
    start: usize,
    end: usize,
    replacement: String,
    keep_as: Option<PiiType>,
    item: &'a AnnotationItem,
}

fn rewrite_message(
    session: &str,
    message: &Message,
    items: &[&AnnotationItem],
    registry: &mut SurrogateRegistry,
    ledger: &mut Vec<LedgerRow>,
) -> Result<Message, ApplyError> {
    let upstream = upstream_spans(message);
    let mut edits: Vec<Edit<'_>> = Vec::new();
    for &item in items {
        let span = item.span.ok_or_else(|| ApplyError::NoSpan(item.id.clone()))?;
        let found = char_slice(&message.text, span.start, span.end)
            .ok_or_else(|| ApplyError::UnknownMessage(item.id.clone()))?;
        if found != item.original_text {
            return Err(ApplyError::StaleTarget {
                id: item.id.clone(),
                expected: item.original_text.clone(),
                found: found.to_string(),
            });
        }
        let hits_redaction = upstream.iter().any(|s| s.start < span.end && span.start < s.end);
        match item.origin {
            ItemOrigin::Upstream if !upstream.iter().any(|s| s.start == span.start && s.end == span.end) => {
                return Err(ApplyError::NotARedaction(item.id.clone()))
            }
            ItemOrigin::Discovered if hits_redaction => return Err(ApplyError::Overlap(item.id.clone())),
            _ => {}
        }
        let proposed = item.surrogate.as_deref().expect("applicable items carry a value");
        let (replacement, keep_as) = if item.evaluation.keeps_label() {
            let key = entity_key(item, &message.text);
            (registry.register(session, key, proposed)?, Some(item.pii_type))
        } else {
            (proposed.to_string(), None)
        };
        edits.push(Edit {
            start: span.start,
            end: span.end,
            replacement,
            keep_as,
            item,
        });
    }
    edits.sort_by_key(|e| (e.start, e.end));
    if let Some(pair) = edits.windows(2).find(|w| w[1].start < w[0].end) {
        return Err(ApplyError::Overlap(pair[1].item.id.clone()));
    }

    let chars: Vec<char> = message.text.chars().collect();
    let mut text = String::with_capacity(message.text.len());
    let mut labels = Vec::new();
    let mut cursor = 0usize;
    let mut shift: isize = 0;
    let mut untouched = upstream
        .iter()
        .filter(|s| !edits.iter().any(|e| e.start == s.start && e.end == s.end))
        .peekable();
    let mut place_untouched = |upto: usize, shift: isize, labels: &mut Vec<(usize, usize, PiiType, Provenance)>| {
        while let Some(s) = untouched.next_if(|s| s.end <= upto) {
            labels.push((
                (s.start as isize + shift) as usize,
                (s.end as isize + shift) as usize,
                s.pii_type,
                s.provenance,
            ));
            ledger.push(LedgerRow {
                session_id: session.to_string(),
                message_index: message.index,
                pii_type: s.pii_type,
                verdict: None,
                action: LedgerAction::Untouched,
            });
        }
    };
    for edit in &edits {
        place_untouched(edit.start, shift, &mut labels);
        text.extend(&chars[cursor..edit.start]);
        let new_start = (edit.start as isize + shift) as usize;
        let new_len = edit.replacement.chars().count();
        text.push_str(&edit.replacement);
        if let Some(pii_type) = edit.keep_as {
            if new_len > 0 {
                labels.push((new_start, new_start + new_len, pii_type, Provenance::Surrogate));
            }
        }
        shift += new_len as isize - (edit.end - edit.start) as isize;
        cursor = edit.end;
    }
    place_untouched(usize::MAX, shift, &mut labels);
    text.extend(&chars[cursor..]);

    for edit in &edits {
        let action = match (edit.keep_as, edit.item.origin) {
            (None, _) => LedgerAction::Removed,
            (Some(_), ItemOrigin::Upstream) => LedgerAction::Retained,
            (Some(_), ItemOrigin::Discovered) => LedgerAction::Discovered,
        };
        ledger.push(LedgerRow {
            session_id: session.to_string(),
            message_index: message.index,
            pii_type: edit.item.pii_type,
            verdict: Some(edit.item.evaluation),
            action,
        });
    }

    let mut out = Message::new(message.index, message.role.clone(), text);
    out.labels = labels
        .into_iter()
        .map(|(s, e, t, p)| PiiSpan::new(&out.text, s, e, t, p))
        .collect();
    out.labels.sort_by_key(|s| (s.start, s.end, s.pii_type));
    Ok(out)
}

/// Applies items to the corpus. Every item must be applicable. The registry
/// is updated only when the whole corpus succeeds.
pub fn apply_surrogates(
    corpus: &Corpus,
    items: &[AnnotationItem],
    registry: &mut SurrogateRegistry,
) -> Result<ApplyOutcome, ApplyError> {
    if let Some(bad) = items.iter().find(|i| !i.is_applicable()) {
        return Err(ApplyError::NotApplicable(bad.id.clone()));
    }
    let mut by_message: HashMap<(&str, usize), Vec<&AnnotationItem>> = HashMap::new();
    for item in items {
        let exists = corpus
            .get(&item.session_id)
            .is_some_and(|t| item.message_index < t.messages.len());
        if !exists {
            return Err(ApplyError::UnknownMessage(item.id.clone()));
        }
        by_message
            .entry((item.session_id.as_str(), item.message_index))
            .or_default()
            .push(item);
    }

    let mut working = registry.clone();
    let mut ledger = Vec::new();
    let mut summary = LedgerSummary::default();
    let mut transcripts = Vec::with_capacity(corpus.len());
    for transcript in corpus {
        let mut messages = Vec::with_capacity(transcript.messages.len());
        for message in &transcript.messages {
            summary.input_labels += upstream_spans(message).len();
            let targets = by_message
                .get(&(transcript.session_id.as_str(), message.index))
                .map(Vec::as_slice)
                .unwrap_or(&[]);
            summary.discovered_items += targets.iter().filter(|i| i.origin == ItemOrigin::Discovered).count();
            messages.push(rewrite_message(
                &transcript.session_id,
                message,
                targets,
                &mut working,
                &mut ledger,
            )?);
        }
        transcripts.push(Transcript::new(transcript.session_id.clone(), messages));
    }
    working.check()?;
    let corpus = Corpus::new(transcripts)?;

    for row in &ledger {
        match row.action {
            LedgerAction::Retained => summary.retained += 1,
            LedgerAction::Removed => summary.removed += 1,
            LedgerAction::Discovered => summary.discovered += 1,
            LedgerAction::Untouched => summary.untouched += 1,
        }
    }
    summary.output_by_type = corpus.label_counts_by_type();
    summary.output_labels = corpus.label_count();
    *registry = working;
    Ok(ApplyOutcome {
        corpus,
        ledger,
        summary,
    })
}

/// CSV ledger: `session_id,message_index,type,verdict,action`.
pub fn write_ledger(rows: &[LedgerRow], writer: impl Write) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["session_id", "message_index", "type", "verdict", "action"])?;
    for row in rows {
        w.write_record([
            row.session_id.as_str(),
            &row.message_index.to_string(),
            row.pii_type.code(),
            row.verdict.map_or("", Evaluation::code),
            row.action.code(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
