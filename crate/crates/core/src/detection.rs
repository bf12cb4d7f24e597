//! Engine-neutral detection output, shared by the baseline and LLM engines
//! and consumed by evaluation.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{CorpusError, PiiType};

/// Outcome of parsing one model response.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ParseStatus {
    Ok,
    Malformed,
    Empty,
}

/// One detected PII mention. Offsets are char offsets and are absent when the
/// detected text could not be located in the message.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Detection {
    pub text: String,
    #[serde(rename = "type")]
    pub pii_type: PiiType,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub start: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub end: Option<usize>,
}

impl Detection {
    pub fn grounded(text: impl Into<String>, pii_type: PiiType, start: usize, end: usize) -> Self {
        Self {
            text: text.into(),
            pii_type,
            start: Some(start),
            end: Some(end),
        }
    }

    pub fn ungrounded(text: impl Into<String>, pii_type: PiiType) -> Self {
        Self {
            text: text.into(),
            pii_type,
            start: None,
            end: None,
        }
    }

    pub fn range(&self) -> Option<(usize, usize)> {
        Some((self.start?, self.end?))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MessageDetections {
    pub index: usize,
    pub detections: Vec<Detection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub status: Option<ParseStatus>,
    #[serde(default, skip_serializing_if = "is_zero")]
    pub attempts: u32,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

fn is_zero(n: &u32) -> bool {
    *n == 0
}

impl MessageDetections {
    pub fn new(index: usize, detections: Vec<Detection>) -> Self {
        Self {
            index,
            detections,
            status: None,
            attempts: 0,
            warnings: Vec::new(),
        }
    }
}

/// Detections for one transcript, ordered by message index.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DetectionResult {
    pub engine: String,
    pub session_id: String,
    pub messages: Vec<MessageDetections>,
}

impl DetectionResult {
    pub fn detection_count(&self) -> usize {
        self.messages.iter().map(|m| m.detections.len()).sum()
    }

    pub fn message(&self, index: usize) -> Option<&MessageDetections> {
        self.messages
            .binary_search_by_key(&index, |m| m.index)
            .ok()
            .map(|pos| &self.messages[pos])
    }
}

pub fn write_results(results: &[DetectionResult], path: impl AsRef<Path>) -> Result<(), CorpusError> {
    let path = path.as_ref();
    let io_err = |source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut writer = BufWriter::new(File::create(path).map_err(io_err)?);
    for result in results {
        serde_json::to_writer(&mut writer, result).map_err(|e| io_err(e.into()))?;
        writer.write_all(b"\n").map_err(io_err)?;
    }
    writer.flush().map_err(io_err)
}

pub fn load_results(path: impl AsRef<Path>) -> Result<Vec<DetectionResult>, CorpusError> {
    let path = path.as_ref();
    let io_err = |source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    };
    let reader = BufReader::new(File::open(path).map_err(io_err)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(io_err)?;
        if line.trim().is_empty() {
            continue;
        }
        let mut result: DetectionResult =
            serde_json::from_str(&line).map_err(|source| CorpusError::Malformed { line: i + 1, source })?;
        result.messages.sort_by_key(|m| m.index);
        out.push(result);
    }
    Ok(out)
}
