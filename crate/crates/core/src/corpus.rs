//! Transcript data model, the 17-type PII taxonomy, and the JSONL corpus format.
//!
//! Span offsets are Unicode scalar-value offsets into the message text, not
//! byte offsets. Use [`char_slice`] and [`char_to_byte`] when slicing.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// One of the 17 PII categories.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum PiiType {
    Age,
    CourseNumber,
    Date,
    EmailAddress,
    GradeLevel,
    IpAddress,
    Location,
    Nrp,
    Person,
    PhoneNumber,
    School,
    SocialHandle,
    Url,
    UsBankNumber,
    UsDriverLicense,
    UsPassport,
    UsSsn,
}

impl PiiType {
    pub const ALL: [PiiType; 17] = [
        PiiType::Age,
        PiiType::CourseNumber,
        PiiType::Date,
        PiiType::EmailAddress,
        PiiType::GradeLevel,
        PiiType::IpAddress,
        PiiType::Location,
        PiiType::Nrp,
        PiiType::Person,
        PiiType::PhoneNumber,
        PiiType::School,
        PiiType::SocialHandle,
        PiiType::Url,
        PiiType::UsBankNumber,
        PiiType::UsDriverLicense,
        PiiType::UsPassport,
        PiiType::UsSsn,
    ];

    /// Canonical code, e.g. `COURSE_NUMBER`.
    pub fn code(self) -> &'static str {
        match self {
            PiiType::Age => "AGE",
            PiiType::CourseNumber => "COURSE_NUMBER",
            PiiType::Date => "DATE",
            PiiType::EmailAddress => "EMAIL_ADDRESS",
            PiiType::GradeLevel => "GRADE_LEVEL",
            PiiType::IpAddress => "IP_ADDRESS",
            PiiType::Location => "LOCATION",
            PiiType::Nrp => "NRP",
            PiiType::Person => "PERSON",
            PiiType::PhoneNumber => "PHONE_NUMBER",
            PiiType::School => "SCHOOL",
            PiiType::SocialHandle => "SOCIAL_HANDLE",
            PiiType::Url => "URL",
            PiiType::UsBankNumber => "US_BANK_NUMBER",
            PiiType::UsDriverLicense => "US_DRIVER_LICENSE",
            PiiType::UsPassport => "US_PASSPORT",
            PiiType::UsSsn => "US_SSN",
        }
    }

    /// Name used in the detection and audit prompts. Only `COURSE_NUMBER`
    /// differs (`COURSE`).
    pub fn prompt_name(self) -> &'static str {
        match self {
            PiiType::CourseNumber => "COURSE",
            other => other.code(),
        }
    }

    /// Placeholder literal used by upstream redaction, e.g. `<PERSON>`.
    pub fn placeholder(self) -> String {
        format!("<{}>", self.code())
    }

    /// Types whose surface forms are numeric identifiers and therefore collide
    /// with math content.
    pub fn is_numeric_identifier(self) -> bool {
        matches!(
            self,
            PiiType::Date | PiiType::UsDriverLicense | PiiType::PhoneNumber | PiiType::UsSsn | PiiType::UsBankNumber
        )
    }
}

impl fmt::Display for PiiType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown PII type `{0}`")]
pub struct UnknownPiiType(pub String);

impl FromStr for PiiType {
    type Err = UnknownPiiType;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let trimmed = s.trim();
        if trimmed == "COURSE" {
            return Ok(PiiType::CourseNumber);
        }
        PiiType::ALL
            .iter()
            .copied()
            .find(|t| t.code() == trimmed)
            .ok_or_else(|| UnknownPiiType(s.to_string()))
    }
}

impl Serialize for PiiType {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.code())
    }
}

impl<'de> Deserialize<'de> for PiiType {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Where a span came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Provenance {
    #[default]
    Upstream,
    LlmAudit,
    Surrogate,
    Detected,
}

/// A labeled PII character span within one message.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PiiSpan {
    pub start: usize,
    pub end: usize,
    /// Equal to `text[start..end]`; rebuilt from the text on load.
    #[serde(skip)]
    pub surface: String,
    #[serde(rename = "type")]
    pub pii_type: PiiType,
    #[serde(default)]
    pub provenance: Provenance,
}

impl PiiSpan {
    /// Builds a span over `text`, filling in the surface. Panics if the range
    /// is out of bounds; use [`Message::validate`] for untrusted input.
    pub fn new(text: &str, start: usize, end: usize, pii_type: PiiType, provenance: Provenance) -> Self {
        let surface = char_slice(text, start, end)
            .unwrap_or_else(|| panic!("span {start}..{end} out of bounds"))
            .to_string();
        Self {
            start,
            end,
            surface,
            pii_type,
            provenance,
        }
    }

    pub fn overlaps(&self, other: &PiiSpan) -> bool {
        self.start < other.end && other.start < self.end
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub index: usize,
    pub role: String,
    pub text: String,
    #[serde(default)]
    pub labels: Vec<PiiSpan>,
}

impl Message {
    pub fn new(index: usize, role: impl Into<String>, text: impl Into<String>) -> Self {
        Self {
            index,
            role: role.into(),
            text: text.into(),
            labels: Vec::new(),
        }
    }

    pub fn char_len(&self) -> usize {
        self.text.chars().count()
    }

    /// Checks bounds, refreshes surfaces, and merges overlapping same-type
    /// spans. Labels end up sorted by `(start, end, type)`.
    pub fn normalize_labels(&mut self) -> Result<(), SpanError> {
        let len = self.char_len();
        for span in &mut self.labels {
            if span.start >= span.end || span.end > len {
                return Err(SpanError {
                    start: span.start,
                    end: span.end,
                    len,
                });
            }
        }
        let mut labels = std::mem::take(&mut self.labels);
        labels.sort_by_key(|s| (s.pii_type, s.start, s.end));
        let mut merged: Vec<PiiSpan> = Vec::with_capacity(labels.len());
        for span in labels {
            match merged.last_mut() {
                Some(last) if last.pii_type == span.pii_type && last.overlaps(&span) => {
                    last.end = last.end.max(span.end);
                }
                _ => merged.push(span),
            }
        }
        for span in &mut merged {
            span.surface = char_slice(&self.text, span.start, span.end)
                .expect("bounds checked above")
                .to_string();
        }
        merged.sort_by_key(|s| (s.start, s.end, s.pii_type));
        self.labels = merged;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("span {start}..{end} outside text of length {len}")]
pub struct SpanError {
    pub start: usize,
    pub end: usize,
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transcript {
    pub session_id: String,
    pub messages: Vec<Message>,
}

impl Transcript {
    pub fn new(session_id: impl Into<String>, messages: Vec<Message>) -> Self {
        Self {
            session_id: session_id.into(),
            messages,
        }
    }

    /// Builds a transcript from `(role, text)` pairs with indices assigned in order.
    pub fn from_turns<R, T>(session_id: impl Into<String>, turns: impl IntoIterator<Item = (R, T)>) -> Self
    where
        R: Into<String>,
        T: Into<String>,
    {
        let messages = turns
            .into_iter()
            .enumerate()
            .map(|(i, (role, text))| Message::new(i, role, text))
            .collect();
        Self::new(session_id, messages)
    }

    pub fn label_count(&self) -> usize {
        self.messages.iter().map(|m| m.labels.len()).sum()
    }

    /// Validates message indices and spans, merging same-type overlaps.
    pub fn validate(&mut self) -> Result<(), ValidationError> {
        if self.messages.is_empty() {
            return Err(ValidationError::NoMessages {
                session_id: self.session_id.clone(),
            });
        }
        for (pos, message) in self.messages.iter_mut().enumerate() {
            if message.index != pos {
                return Err(ValidationError::IndexGap {
                    session_id: self.session_id.clone(),
                    expected: pos,
                    found: message.index,
                });
            }
            message.normalize_labels().map_err(|source| ValidationError::Span {
                session_id: self.session_id.clone(),
                message_index: pos,
                source,
            })?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ValidationError {
    #[error("session `{session_id}` has no messages")]
    NoMessages { session_id: String },
    #[error("session `{session_id}`: expected message index {expected}, found {found}")]
    IndexGap {
        session_id: String,
        expected: usize,
        found: usize,
    },
    #[error("session `{session_id}` message {message_index}: {source}")]
    Span {
        session_id: String,
        message_index: usize,
        #[source]
        source: SpanError,
    },
    #[error("duplicate session id `{0}`")]
    DuplicateSession(String),
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: malformed record: {source}")]
    Malformed {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("line {line}: {source}")]
    Invalid {
        line: usize,
        #[source]
        source: ValidationError,
    },
}

/// An ordered collection of validated transcripts.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Corpus {
    pub transcripts: Vec<Transcript>,
}

impl Corpus {
    /// Validates every transcript and the uniqueness of session ids.
    pub fn new(mut transcripts: Vec<Transcript>) -> Result<Self, ValidationError> {
        let mut seen = HashSet::new();
        for transcript in &mut transcripts {
            transcript.validate()?;
            if !seen.insert(transcript.session_id.clone()) {
                return Err(ValidationError::DuplicateSession(transcript.session_id.clone()));
            }
        }
        Ok(Self { transcripts })
    }

    pub fn len(&self) -> usize {
        self.transcripts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transcripts.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Transcript> {
        self.transcripts.iter()
    }

    pub fn message_count(&self) -> usize {
        self.transcripts.iter().map(|t| t.messages.len()).sum()
    }

    pub fn label_count(&self) -> usize {
        self.transcripts.iter().map(Transcript::label_count).sum()
    }

    pub fn label_counts_by_type(&self) -> BTreeMap<PiiType, usize> {
        let mut counts = BTreeMap::new();
        for span in self
            .transcripts
            .iter()
            .flat_map(|t| &t.messages)
            .flat_map(|m| &m.labels)
        {
            *counts.entry(span.pii_type).or_insert(0) += 1;
        }
        counts
    }

    pub fn get(&self, session_id: &str) -> Option<&Transcript> {
        self.transcripts.iter().find(|t| t.session_id == session_id)
    }
}

impl<'a> IntoIterator for &'a Corpus {
    type Item = &'a Transcript;
    type IntoIter = std::slice::Iter<'a, Transcript>;

    fn into_iter(self) -> Self::IntoIter {
        self.transcripts.iter()
    }
}

/// Reads a JSONL corpus, one transcript per line. Blank lines are skipped.
pub fn load_corpus(path: impl AsRef<Path>) -> Result<Corpus, CorpusError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    read_corpus(BufReader::new(file), &path.display().to_string())
}

/// Parses a JSONL corpus from any buffered reader.
pub fn read_corpus(reader: impl BufRead, origin: &str) -> Result<Corpus, CorpusError> {
    let mut transcripts = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|source| CorpusError::Io {
            path: origin.to_string(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let mut transcript: Transcript =
            serde_json::from_str(&line).map_err(|source| CorpusError::Malformed { line: line_no, source })?;
        transcript
            .validate()
            .map_err(|source| CorpusError::Invalid { line: line_no, source })?;
        if !seen.insert(transcript.session_id.clone()) {
            return Err(CorpusError::Invalid {
                line: line_no,
                source: ValidationError::DuplicateSession(transcript.session_id),
            });
        }
        transcripts.push(transcript);
    }
    Ok(Corpus { transcripts })
}

pub fn write_corpus(corpus: &Corpus, path: impl AsRef<Path>) -> Result<(), CorpusError> {
    let path = path.as_ref();
    let io_err = |source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    };
    let file = File::create(path).map_err(io_err)?;
    let mut writer = BufWriter::new(file);
    write_corpus_to(corpus, &mut writer).map_err(io_err)?;
    writer.flush().map_err(io_err)
}

pub fn write_corpus_to(corpus: &Corpus, writer: &mut impl Write) -> std::io::Result<()> {
    for transcript in &corpus.transcripts {
        serde_json::to_writer(&mut *writer, transcript)?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}

/// Converts a char offset to a byte offset. `None` if past the end.
pub fn char_to_byte(text: &str, char_offset: usize) -> Option<usize> {
    if char_offset == 0 {
        return Some(0);
    }
    let mut count = 0;
    for (byte, _) in text.char_indices() {
        if count == char_offset {
            return Some(byte);
        }
        count += 1;
    }
    (count == char_offset).then_some(text.len())
}

/// Converts a byte offset (on a char boundary) to a char offset.
pub fn byte_to_char(text: &str, byte_offset: usize) -> usize {
    text[..byte_offset].chars().count()
}

/// Slices `text` by char offsets.
pub fn char_slice(text: &str, start: usize, end: usize) -> Option<&str> {
    if start > end {
        return None;
    }
    let from = char_to_byte(text, start)?;
    let to = char_to_byte(text, end)?;
    Some(&text[from..to])
}

/// Finds `<TYPE>` placeholder literals (upstream redaction tags) in a text.
/// Tags naming an unknown type are ignored.
pub fn placeholder_spans(text: &str) -> Vec<PiiSpan> {
    let mut spans = Vec::new();
    let mut search_from = 0;
    while let Some(open_rel) = text[search_from..].find('<') {
        let open = search_from + open_rel;
        let Some(close_rel) = text[open..].find('>') else {
            break;
        };
        let close = open + close_rel;
        let inner = &text[open + 1..close];
        match inner.parse::<PiiType>() {
            Ok(pii_type) if !inner.contains('<') => {
                let start = byte_to_char(text, open);
                let end = start + (close + 1 - open);
                spans.push(PiiSpan {
                    start,
                    end,
                    surface: text[open..=close].to_string(),
                    pii_type,
                    provenance: Provenance::Upstream,
                });
                search_from = close + 1;
            }
            _ => search_from = open + 1,
        }
    }
    spans
}
