//! Math vocabulary and per-message math density.
//!
//! Density is a token-normalized weighted count:
//!
//! ```text
//! value = (word_hits + w_phrase * phrase_hits + w_pattern * pattern_hits) / token_count
//! ```
//!
//! with reference weights 1.0 / 1.5 / 2.0.

use std::collections::HashSet;
use std::path::Path;

use regex::{Regex, RegexBuilder};
use serde::{Deserialize, Serialize};
use thiserror::Error;

const REFERENCE_VOCABULARY: &str = include_str!("../../data/math_vocabulary.json");

/// Names of the ten pattern families, in the order the reference vocabulary
/// lists them.
pub const PATTERN_FAMILIES: [&str; 10] = [
    "arithmetic_variables",
    "coefficients",
    "exponents",
    "functions",
    "inequalities",
    "fractions",
    "coordinates",
    "indexed_vars",
    "probability",
    "decimals",
];

/// Inline flag marking a pattern as case-sensitive; every other pattern is
/// compiled case-insensitively.
const CASE_SENSITIVE_PREFIX: &str = "(?-i)";

#[derive(Debug, Error)]
pub enum VocabularyError {
    #[error("single word `{0}` contains whitespace")]
    WordWithSpace(String),
    #[error("phrase `{0}` has no space")]
    PhraseWithoutSpace(String),
    #[error("pattern `{pattern}` does not compile: {source}")]
    Pattern {
        pattern: String,
        #[source]
        source: regex::Error,
    },
    #[error("invalid vocabulary file: {0}")]
    Json(#[from] serde_json::Error),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Weights {
    pub word: f64,
    pub phrase: f64,
    pub pattern: f64,
}

impl Default for Weights {
    fn default() -> Self {
        Self {
            word: 1.0,
            phrase: 1.5,
            pattern: 2.0,
        }
    }
}

/// On-disk vocabulary layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VocabularyFile {
    pub single_words: Vec<String>,
    pub phrases: Vec<String>,
    pub patterns: Vec<String>,
    #[serde(default)]
    pub weights: Weights,
}

#[derive(Debug, Clone)]
pub struct MathPattern {
    pub source: String,
    pub regex: Regex,
}

#[derive(Debug, Clone)]
struct Phrase {
    text: String,
    regex: Regex,
}

/// Compiled vocabulary: single words, multi-word phrases, and regex patterns.
#[derive(Debug, Clone)]
pub struct MathVocabulary {
    single_words: HashSet<String>,
    phrases: Vec<Phrase>,
    patterns: Vec<MathPattern>,
    weights: Weights,
}

/// Density of one message with its components.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DensityScore {
    pub value: f64,
    pub token_count: usize,
    pub word_hits: usize,
    pub phrase_hits: usize,
    pub pattern_hits: usize,
}

impl MathVocabulary {
    pub fn from_file(file: &VocabularyFile) -> Result<Self, VocabularyError> {
        let mut single_words = HashSet::new();
        for word in &file.single_words {
            let word = word.trim().to_lowercase();
            if word.chars().any(char::is_whitespace) {
                return Err(VocabularyError::WordWithSpace(word));
            }
            single_words.insert(word);
        }
        let mut seen = HashSet::new();
        let mut phrases = Vec::new();
        for phrase in &file.phrases {
            let phrase = phrase.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase();
            if !phrase.contains(' ') {
                return Err(VocabularyError::PhraseWithoutSpace(phrase));
            }
            if !seen.insert(phrase.clone()) {
                continue;
            }
            let regex = Regex::new(&format!(r"\b{}\b", regex::escape(&phrase))).expect("escaped phrase compiles");
            phrases.push(Phrase { text: phrase, regex });
        }
        let patterns = file
            .patterns
            .iter()
            .map(|source| {
                let case_insensitive = !source.starts_with(CASE_SENSITIVE_PREFIX);
                RegexBuilder::new(source)
                    .case_insensitive(case_insensitive)
                    .build()
                    .map(|regex| MathPattern {
                        source: source.clone(),
                        regex,
                    })
                    .map_err(|source_err| VocabularyError::Pattern {
                        pattern: source.clone(),
                        source: source_err,
                    })
            })
            .collect::<Result<_, _>>()?;
        Ok(Self {
            single_words,
            phrases,
            patterns,
            weights: file.weights,
        })
    }

    pub fn from_json(json: &str) -> Result<Self, VocabularyError> {
        Self::from_file(&serde_json::from_str(json)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, VocabularyError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// The bundled reference vocabulary.
    pub fn reference() -> Self {
        Self::from_json(REFERENCE_VOCABULARY).expect("bundled vocabulary is valid")
    }

    pub fn reference_file() -> VocabularyFile {
        serde_json::from_str(REFERENCE_VOCABULARY).expect("bundled vocabulary is valid")
    }

    pub fn weights(&self) -> Weights {
        self.weights
    }

    pub fn contains_word(&self, word: &str) -> bool {
        self.single_words.contains(word)
    }

    pub fn word_count(&self) -> usize {
        self.single_words.len()
    }

    pub fn phrases(&self) -> impl Iterator<Item = &str> {
        self.phrases.iter().map(|p| p.text.as_str())
    }

    pub fn patterns(&self) -> &[MathPattern] {
        &self.patterns
    }

    pub fn density(&self, text: &str) -> DensityScore {
        math_density(text, self)
    }
}

fn is_punctuation(c: char) -> bool {
    c.is_ascii_punctuation()
        || matches!(
            c,
            '\u{2018}'
                | '\u{2019}'
                | '\u{201C}'
                | '\u{201D}'
                | '\u{2026}'
                | '\u{2013}'
                | '\u{2014}'
                | '\u{00BF}'
                | '\u{00A1}'
        )
}

/// Lowercased whitespace tokens with leading and trailing punctuation
/// stripped. A token made only of punctuation becomes the empty string but
/// still counts toward the token total.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|t| t.to_lowercase().trim_matches(is_punctuation).to_string())
        .collect()
}

/// Math density of a message against a vocabulary.
pub fn math_density(text: &str, vocab: &MathVocabulary) -> DensityScore {
    let tokens = tokenize(text);
    let token_count = tokens.len();
    if token_count == 0 {
        return DensityScore {
            value: 0.0,
            token_count: 0,
            word_hits: 0,
            phrase_hits: 0,
            pattern_hits: 0,
        };
    }
    let word_hits = tokens
        .iter()
        .filter(|t| vocab.single_words.contains(t.as_str()))
        .count();
    let lowered = text.to_lowercase();
    let phrase_hits = vocab.phrases.iter().map(|p| p.regex.find_iter(&lowered).count()).sum();
    let pattern_hits = vocab.patterns.iter().map(|p| p.regex.find_iter(text).count()).sum();
    let w = vocab.weights;
    let weighted = w.word * word_hits as f64 + w.phrase * phrase_hits as f64 + w.pattern * pattern_hits as f64;
    DensityScore {
        value: weighted / token_count as f64,
        token_count,
        word_hits,
        phrase_hits,
        pattern_hits,
    }
}
