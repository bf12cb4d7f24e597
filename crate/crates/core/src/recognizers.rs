//! Baseline detection engine.
//!
//! Regular-expression recognizers cover structured identifiers and the three
//! education-specific types (SCHOOL, COURSE_NUMBER, GRADE_LEVEL). Context
//! dependent types (PERSON, LOCATION, NRP, DATE) come from a pluggable
//! named-entity provider whose labels are mapped onto the taxonomy.
//!
//! The engine has no math guard: numeric text such as `4/12` is reported as a
//! DATE on purpose, so that the over-redaction failure mode stays measurable.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;
use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{byte_to_char, Corpus, Message, PiiSpan, PiiType, Provenance, Transcript};
use crate::detection::{Detection, DetectionResult, MessageDetections};

pub const BASELINE_ENGINE_ID: &str = "baseline";

const DEFAULT_RECOGNIZERS: &str = include_str!("../data/recognizers.json");
const DEFAULT_GAZETTEER: &str = include_str!("../data/gazetteer.json");

#[derive(Debug, Error)]
pub enum RecognizerError {
    #[error("recognizer `{name}`: pattern `{pattern}` does not compile: {source}")]
    Pattern {
        name: String,
        pattern: String,
        #[source]
        source: regex::Error,
    },
    #[error("recognizer `{0}` has no patterns")]
    NoPatterns(String),
    #[error("invalid recognizer config: {0}")]
    Config(#[from] serde_json::Error),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("unknown NER provider `{0}`")]
    UnknownProvider(String),
}

/// Serialized form of a recognizer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecognizerSpec {
    pub name: String,
    #[serde(rename = "type")]
    pub pii_type: PiiType,
    pub patterns: Vec<String>,
    #[serde(default, rename = "context")]
    pub context_words: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecognizerConfig {
    pub recognizers: Vec<RecognizerSpec>,
}

impl RecognizerConfig {
    pub fn from_json(json: &str) -> Result<Self, RecognizerError> {
        Ok(serde_json::from_str(json)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, RecognizerError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn reference() -> Self {
        Self::from_json(DEFAULT_RECOGNIZERS).expect("bundled recognizer config is valid")
    }

    pub fn compile(&self) -> Result<Vec<Recognizer>, RecognizerError> {
        self.recognizers.iter().map(Recognizer::compile).collect()
    }
}

/// A compiled pattern recognizer targeting exactly one PII type.
///
/// Patterns may contain a named group `pii`; when it participates in a match
/// only that group is reported. Confidence is binary, so context words are
/// carried for reporting but do not gate hits.
#[derive(Debug, Clone)]
pub struct Recognizer {
    pub name: String,
    pub target_type: PiiType,
    pub patterns: Vec<Regex>,
    pub context_words: Vec<String>,
}

impl Recognizer {
    pub fn compile(spec: &RecognizerSpec) -> Result<Self, RecognizerError> {
        if spec.patterns.is_empty() {
            return Err(RecognizerError::NoPatterns(spec.name.clone()));
        }
        let patterns = spec
            .patterns
            .iter()
            .map(|p| {
                Regex::new(p).map_err(|source| RecognizerError::Pattern {
                    name: spec.name.clone(),
                    pattern: p.clone(),
                    source,
                })
            })
            .collect::<Result<_, _>>()?;
        Ok(Self {
            name: spec.name.clone(),
            target_type: spec.pii_type,
            patterns,
            context_words: spec.context_words.clone(),
        })
    }

    /// Char ranges of every hit of every pattern, in pattern order.
    pub fn find(&self, text: &str) -> Vec<(usize, usize)> {
        let mut hits = Vec::new();
        for pattern in &self.patterns {
            for caps in pattern.captures_iter(text) {
                let m = caps.name("pii").unwrap_or_else(|| caps.get(0).expect("group 0"));
                if m.start() == m.end() {
                    continue;
                }
                let start = byte_to_char(text, m.start());
                let end = start + m.as_str().chars().count();
                hits.push((start, end));
            }
        }
        hits
    }
}

/// The bundled recognizer set.
pub fn default_recognizers() -> Vec<Recognizer> {
    RecognizerConfig::reference()
        .compile()
        .expect("bundled recognizers compile")
}

/// An entity reported by a named-entity provider, in char offsets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NerEntity {
    pub start: usize,
    pub end: usize,
    pub label: String,
}

#[derive(Debug, Clone, Error)]
#[error("NER provider `{provider}` unavailable: {reason}")]
pub struct NerError {
    pub provider: String,
    pub reason: String,
}

/// A source of named entities with provider-specific labels.
pub trait NerProvider: Send + Sync {
    fn id(&self) -> &str;
    fn entities(&self, text: &str) -> Result<Vec<NerEntity>, NerError>;
}

/// Maps a provider's labels onto the taxonomy; unmapped labels are dropped.
#[derive(Clone)]
pub struct NerAdapter {
    pub provider: Arc<dyn NerProvider>,
    pub type_mapping: BTreeMap<String, PiiType>,
}

impl std::fmt::Debug for NerAdapter {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("NerAdapter")
            .field("provider", &self.provider.id())
            .field("type_mapping", &self.type_mapping)
            .finish()
    }
}

pub fn default_type_mapping() -> BTreeMap<String, PiiType> {
    [
        ("GPE", PiiType::Location),
        ("LOC", PiiType::Location),
        ("PERSON", PiiType::Person),
        ("NORP", PiiType::Nrp),
        ("DATE", PiiType::Date),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect()
}

impl NerAdapter {
    pub fn new(provider: Arc<dyn NerProvider>) -> Self {
        Self {
            provider,
            type_mapping: default_type_mapping(),
        }
    }

    pub fn provider_id(&self) -> &str {
        self.provider.id()
    }

    pub fn detect(&self, text: &str) -> Result<Vec<(usize, usize, PiiType)>, NerError> {
        Ok(self
            .provider
            .entities(text)?
            .into_iter()
            .filter_map(|e| self.type_mapping.get(&e.label).map(|&t| (e.start, e.end, t)))
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GazetteerEntry {
    pub text: String,
    pub label: String,
}

/// Dictionary NER: whole-word, case-sensitive lookup of known surface forms.
/// Deterministic and offline; stands in for a statistical model.
#[derive(Debug, Clone)]
pub struct GazetteerNer {
    matcher: Option<Regex>,
    labels: BTreeMap<String, String>,
}

impl GazetteerNer {
    pub const PROVIDER_ID: &'static str = "gazetteer";

    pub fn new(entries: Vec<GazetteerEntry>) -> Self {
        let mut entries = entries;
        // longest first so alternation prefers "San Antonio" over "San"
        entries.sort_by(|a, b| b.text.len().cmp(&a.text.len()).then(a.text.cmp(&b.text)));
        entries.dedup_by(|a, b| a.text == b.text);
        let matcher = if entries.is_empty() {
            None
        } else {
            let alternation = entries
                .iter()
                .map(|e| regex::escape(&e.text))
                .collect::<Vec<_>>()
                .join("|");
            Some(Regex::new(&format!(r"\b(?:{alternation})\b")).expect("escaped alternation compiles"))
        };
        let labels = entries.into_iter().map(|e| (e.text, e.label)).collect();
        Self { matcher, labels }
    }

    pub fn from_json(json: &str) -> Result<Self, RecognizerError> {
        #[derive(Deserialize)]
        struct File {
            entries: Vec<GazetteerEntry>,
        }
        let file: File = serde_json::from_str(json)?;
        Ok(Self::new(file.entries))
    }

    pub fn reference() -> Self {
        Self::from_json(DEFAULT_GAZETTEER).expect("bundled gazetteer is valid")
    }
}

impl NerProvider for GazetteerNer {
    fn id(&self) -> &str {
        Self::PROVIDER_ID
    }

    fn entities(&self, text: &str) -> Result<Vec<NerEntity>, NerError> {
        let Some(matcher) = &self.matcher else {
            return Ok(Vec::new());
        };
        Ok(matcher
            .find_iter(text)
            .map(|m| {
                let start = byte_to_char(text, m.start());
                NerEntity {
                    start,
                    end: start + m.as_str().chars().count(),
                    label: self.labels[m.as_str()].clone(),
                }
            })
            .collect())
    }
}

/// Resolves a provider id from configuration. `None` disables NER.
pub fn ner_from_config(
    provider_id: Option<&str>,
    gazetteer_path: Option<&Path>,
) -> Result<Option<NerAdapter>, RecognizerError> {
    match provider_id {
        None | Some("none") | Some("null") => Ok(None),
        Some(GazetteerNer::PROVIDER_ID) => {
            let gazetteer = match gazetteer_path {
                Some(path) => GazetteerNer::from_json(&std::fs::read_to_string(path)?)?,
                None => GazetteerNer::reference(),
            };
            Ok(Some(NerAdapter::new(Arc::new(gazetteer))))
        }
        Some(other) => Err(RecognizerError::UnknownProvider(other.to_string())),
    }
}

/// Spans found in one message plus any degradation warnings.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct BaselineDetection {
    pub spans: Vec<PiiSpan>,
    pub warnings: Vec<String>,
}

/// Runs every recognizer (and the NER adapter, if any) over one message.
///
/// Same-type overlapping hits are merged into their union. If the NER
/// provider fails, pattern hits are still returned and a warning is recorded.
pub fn detect_baseline(message: &Message, recognizers: &[Recognizer], ner: Option<&NerAdapter>) -> BaselineDetection {
    let text = &message.text;
    let mut raw: Vec<(usize, usize, PiiType)> = recognizers
        .iter()
        .flat_map(|r| r.find(text).into_iter().map(move |(s, e)| (s, e, r.target_type)))
        .collect();
    let mut warnings = Vec::new();
    if let Some(adapter) = ner {
        match adapter.detect(text) {
            Ok(hits) => raw.extend(hits),
            Err(err) => warnings.push(format!("{err}; pattern-only detection used")),
        }
    }
    BaselineDetection {
        spans: merge_same_type(text, raw),
        warnings,
    }
}

fn merge_same_type(text: &str, mut raw: Vec<(usize, usize, PiiType)>) -> Vec<PiiSpan> {
    raw.sort_by_key(|&(s, e, t)| (t, s, e));
    let mut merged: Vec<(usize, usize, PiiType)> = Vec::with_capacity(raw.len());
    for (s, e, t) in raw {
        match merged.last_mut() {
            Some(last) if last.2 == t && s < last.1 => last.1 = last.1.max(e),
            _ => merged.push((s, e, t)),
        }
    }
    merged.sort_by_key(|&(s, e, t)| (s, e, t));
    merged
        .into_iter()
        .map(|(s, e, t)| PiiSpan::new(text, s, e, t, Provenance::Detected))
        .collect()
}

/// Recognizers plus optional NER, applied uniformly to a corpus.
#[derive(Debug, Clone)]
pub struct BaselineEngine {
    pub recognizers: Vec<Recognizer>,
    pub ner: Option<NerAdapter>,
}

impl BaselineEngine {
    pub fn new(recognizers: Vec<Recognizer>, ner: Option<NerAdapter>) -> Self {
        Self { recognizers, ner }
    }

    /// Bundled recognizers with the bundled gazetteer NER.
    pub fn reference() -> Self {
        Self::new(
            default_recognizers(),
            Some(NerAdapter::new(Arc::new(GazetteerNer::reference()))),
        )
    }

    pub fn detect_transcript(&self, transcript: &Transcript) -> DetectionResult {
        let messages = transcript
            .messages
            .iter()
            .map(|message| {
                let found = detect_baseline(message, &self.recognizers, self.ner.as_ref());
                let mut out = MessageDetections::new(
                    message.index,
                    found
                        .spans
                        .into_iter()
                        .map(|s| Detection::grounded(s.surface, s.pii_type, s.start, s.end))
                        .collect(),
                );
                out.warnings = found.warnings;
                out
            })
            .collect();
        DetectionResult {
            engine: BASELINE_ENGINE_ID.to_string(),
            session_id: transcript.session_id.clone(),
            messages,
        }
    }

    /// One result per transcript, in corpus order. Transcripts are processed
    /// in parallel; output does not depend on scheduling.
    pub fn detect_corpus(&self, corpus: &Corpus) -> Vec<DetectionResult> {
        corpus
            .transcripts
            .par_iter()
            .map(|t| self.detect_transcript(t))
            .collect()
    }
}
