//! Annotation items produced by the audit pass and the votes reviewers cast
//! on them.

use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::corpus::{placeholder_spans, CorpusError, Message, PiiSpan, PiiType};

/// Audit verdict for one redaction or discovered mention.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Evaluation {
    Pii,
    NotPii,
    Uncertain,
}

impl Evaluation {
    pub const ALL: [Evaluation; 3] = [Evaluation::Pii, Evaluation::NotPii, Evaluation::Uncertain];

    pub fn code(self) -> &'static str {
        match self {
            Evaluation::Pii => "PII",
            Evaluation::NotPii => "NOT_PII",
            Evaluation::Uncertain => "UNCERTAIN",
        }
    }

    /// PII and UNCERTAIN are substituted with a surrogate and keep their label.
    pub fn keeps_label(self) -> bool {
        self != Evaluation::NotPii
    }
}

impl fmt::Display for Evaluation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown evaluation `{0}`")]
pub struct UnknownEvaluation(pub String);

impl FromStr for Evaluation {
    type Err = UnknownEvaluation;

    /// Accepts the codes and the audit table spellings ("Not PII",
    /// "Uncertain"), case-insensitively.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm: String = s
            .trim()
            .trim_matches(|c| c == '"' || c == '\'')
            .chars()
            .map(|c| {
                if c == ' ' || c == '-' {
                    '_'
                } else {
                    c.to_ascii_uppercase()
                }
            })
            .collect();
        match norm.as_str() {
            "PII" => Ok(Evaluation::Pii),
            "NOT_PII" | "NOTPII" => Ok(Evaluation::NotPii),
            "UNCERTAIN" => Ok(Evaluation::Uncertain),
            _ => Err(UnknownEvaluation(s.to_string())),
        }
    }
}

impl Serialize for Evaluation {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.code())
    }
}

impl<'de> Deserialize<'de> for Evaluation {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        String::deserialize(deserializer)?
            .parse()
            .map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ItemStatus {
    #[default]
    Pending,
    Approved,
    Rejected,
    Overridden,
}

impl ItemStatus {
    pub fn code(self) -> &'static str {
        match self {
            ItemStatus::Pending => "PENDING",
            ItemStatus::Approved => "APPROVED",
            ItemStatus::Rejected => "REJECTED",
            ItemStatus::Overridden => "OVERRIDDEN",
        }
    }
}

impl FromStr for ItemStatus {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_uppercase().as_str() {
            "PENDING" => Ok(ItemStatus::Pending),
            "APPROVED" => Ok(ItemStatus::Approved),
            "REJECTED" => Ok(ItemStatus::Rejected),
            "OVERRIDDEN" => Ok(ItemStatus::Overridden),
            other => Err(format!("unknown status `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum VoteDirection {
    Up,
    Down,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vote {
    pub reviewer_id: String,
    pub direction: VoteDirection,
    pub timestamp: DateTime<Utc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

/// Whether an item audits an existing redaction or reports new PII.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ItemOrigin {
    #[default]
    Upstream,
    Discovered,
}

/// Char range of the placeholder or detected text in the source message.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SpanRef {
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationItem {
    pub id: String,
    pub session_id: String,
    pub message_index: usize,
    pub pii_type: PiiType,
    #[serde(default)]
    pub origin: ItemOrigin,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub span: Option<SpanRef>,
    /// Placeholder tag or detected text the item refers to.
    #[serde(default)]
    pub original_text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ai_redacted_content: Option<String>,
    pub evaluation: Evaluation,
    /// Surrogate for PII/UNCERTAIN, context replacement for NOT_PII.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub surrogate: Option<String>,
    pub iteration: u32,
    #[serde(default)]
    pub votes: Vec<Vote>,
    #[serde(default)]
    pub status: ItemStatus,
    /// Set when the audit response could not be parsed or aligned; the item
    /// needs a reviewer override before it can be applied.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ItemError {
    #[error("item `{id}`: reviewer `{reviewer_id}` already voted in iteration {iteration}")]
    DuplicateVote {
        id: String,
        reviewer_id: String,
        iteration: u32,
    },
    #[error("item `{id}`: {evaluation} verdict requires a surrogate or replacement value")]
    MissingSurrogate { id: String, evaluation: Evaluation },
    #[error("item `{id}`: iteration must be at least 1")]
    BadIteration { id: String },
}

impl AnnotationItem {
    pub fn item_id(session_id: &str, message_index: usize, ordinal: usize) -> String {
        format!("{session_id}#{message_index}#{ordinal}")
    }

    /// Checks the verdict/surrogate invariant. Flagged items are exempt.
    pub fn validate(&self) -> Result<(), ItemError> {
        if self.iteration == 0 {
            return Err(ItemError::BadIteration { id: self.id.clone() });
        }
        if !self.flagged && self.surrogate.is_none() {
            return Err(ItemError::MissingSurrogate {
                id: self.id.clone(),
                evaluation: self.evaluation,
            });
        }
        Ok(())
    }

    pub fn add_vote(&mut self, vote: Vote) -> Result<(), ItemError> {
        if self.votes.iter().any(|v| v.reviewer_id == vote.reviewer_id) {
            return Err(ItemError::DuplicateVote {
                id: self.id.clone(),
                reviewer_id: vote.reviewer_id,
                iteration: self.iteration,
            });
        }
        self.votes.push(vote);
        Ok(())
    }

    pub fn has_down_vote(&self) -> bool {
        self.votes.iter().any(|v| v.direction == VoteDirection::Down)
    }

    pub fn has_up_vote(&self) -> bool {
        self.votes.iter().any(|v| v.direction == VoteDirection::Up)
    }

    /// Reviewer override: replaces the verdict (and surrogate if given) and
    /// clears the flag.
    pub fn apply_override(&mut self, evaluation: Evaluation, surrogate: Option<String>) -> Result<(), ItemError> {
        let surrogate = surrogate.or_else(|| self.surrogate.clone());
        if surrogate.is_none() {
            return Err(ItemError::MissingSurrogate {
                id: self.id.clone(),
                evaluation,
            });
        }
        self.evaluation = evaluation;
        self.surrogate = surrogate;
        self.status = ItemStatus::Overridden;
        self.flagged = false;
        Ok(())
    }

    /// Settles the status at iteration close: any DOWN vote rejects, else
    /// any UP vote approves. Overridden items are left alone.
    pub fn close_iteration(&mut self) {
        if self.status == ItemStatus::Overridden {
            return;
        }
        if self.has_down_vote() {
            self.status = ItemStatus::Rejected;
        } else if self.has_up_vote() {
            self.status = ItemStatus::Approved;
        }
    }

    /// Marks items that need no human sign-off (upstream, unflagged, no
    /// down-vote) as approved. Discovered items still need an UP vote.
    pub fn auto_approve(&mut self) {
        if self.status == ItemStatus::Pending
            && self.origin == ItemOrigin::Upstream
            && !self.flagged
            && !self.has_down_vote()
        {
            self.status = ItemStatus::Approved;
        }
    }

    /// Whether the item may be applied: final status, a value to write, and
    /// for discovered PII a human approval.
    pub fn is_applicable(&self) -> bool {
        let final_status = match self.status {
            ItemStatus::Overridden => true,
            ItemStatus::Approved => self.origin == ItemOrigin::Upstream || self.has_up_vote(),
            _ => false,
        };
        final_status && !self.flagged && self.surrogate.is_some()
    }
}

/// Upstream redactions of a message: its labels, or the placeholder tags in
/// its text when it carries no labels.
pub fn upstream_spans(message: &Message) -> Vec<PiiSpan> {
    if message.labels.is_empty() {
        placeholder_spans(&message.text)
    } else {
        message.labels.clone()
    }
}

pub fn write_items(items: &[AnnotationItem], path: impl AsRef<Path>) -> Result<(), CorpusError> {
    let path = path.as_ref();
    let io_err = |source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut w = BufWriter::new(File::create(path).map_err(io_err)?);
    write_items_to(items, &mut w).map_err(io_err)?;
    w.flush().map_err(io_err)
}

pub fn write_items_to(items: &[AnnotationItem], writer: &mut impl Write) -> std::io::Result<()> {
    for item in items {
        serde_json::to_writer(&mut *writer, item)?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}

pub fn load_items(path: impl AsRef<Path>) -> Result<Vec<AnnotationItem>, CorpusError> {
    let path = path.as_ref();
    let io_err = |source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    };
    let reader = BufReader::new(File::open(path).map_err(io_err)?);
    let mut items = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(io_err)?;
        if line.trim().is_empty() {
            continue;
        }
        items.push(serde_json::from_str(&line).map_err(|source| CorpusError::Malformed { line: i + 1, source })?);
    }
    Ok(items)
}
