//! Annotation items plus an append-only event log replayed into current
//! state.

use std::collections::{BTreeMap, HashMap};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use mathdeid_core::corpus::{Corpus, CorpusError, PiiType};
use mathdeid_core::surrogation::{
    iteration_resolution, load_items, AnnotationItem, Evaluation, ItemError, ItemStatus, Resolution, Vote,
};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// One durable state change.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event {
    Vote {
        item_id: String,
        iteration: u32,
        vote: Vote,
    },
    Override {
        item_id: String,
        iteration: u32,
        evaluation: Evaluation,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        surrogate: Option<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        reviewer_id: Option<String>,
        timestamp: DateTime<Utc>,
    },
    CloseIteration {
        iteration: u32,
        timestamp: DateTime<Utc>,
    },
}

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("unknown item `{0}`")]
    NotFound(String),
    #[error(transparent)]
    Conflict(ItemError),
    #[error("{0}")]
    Invalid(String),
    #[error("event log {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("event log {path} line {line}: {reason}")]
    Replay { path: String, line: usize, reason: String },
    #[error(transparent)]
    Items(#[from] CorpusError),
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ItemFilter {
    pub status: Option<ItemStatus>,
    pub iteration: Option<u32>,
    pub pii_type: Option<PiiType>,
}

impl ItemFilter {
    fn accepts(&self, item: &AnnotationItem) -> bool {
        self.status.is_none_or(|s| item.status == s)
            && self.iteration.is_none_or(|k| item.iteration == k)
            && self.pii_type.is_none_or(|t| item.pii_type == t)
    }
}

/// Verdict counts over the latest version of every item.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Stats {
    pub items: usize,
    pub by_type: BTreeMap<PiiType, BTreeMap<Evaluation, usize>>,
    pub by_status: BTreeMap<String, usize>,
    /// Messages with at least one item.
    pub messages: usize,
    /// Messages with at least one NOT_PII item.
    pub messages_not_pii: usize,
    pub not_pii_message_share: f64,
}

/// Context window around an item's message.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextLine {
    pub index: usize,
    pub role: String,
    pub text: String,
}

pub const CONTEXT_RADIUS: usize = 3;

#[derive(Debug)]
pub struct ReviewStore {
    items: Vec<AnnotationItem>,
    /// Item id to the position of its highest-iteration version.
    latest: HashMap<String, usize>,
    corpus: Option<Corpus>,
    log: File,
    log_path: PathBuf,
}

fn index_latest(items: &[AnnotationItem]) -> HashMap<String, usize> {
    let mut latest: HashMap<String, usize> = HashMap::new();
    for (pos, item) in items.iter().enumerate() {
        let slot = latest.entry(item.id.clone()).or_insert(pos);
        if item.iteration >= items[*slot].iteration {
            *slot = pos;
        }
    }
    latest
}

impl ReviewStore {
    /// Loads items and replays the event log, creating the log if absent.
    pub fn open(items_path: impl AsRef<Path>, log_path: impl AsRef<Path>) -> Result<Self, StoreError> {
        let items = load_items(items_path)?;
        Self::from_items(items, log_path)
    }

    pub fn from_items(items: Vec<AnnotationItem>, log_path: impl AsRef<Path>) -> Result<Self, StoreError> {
        let log_path = log_path.as_ref().to_path_buf();
        let io = |source| StoreError::Io {
            path: log_path.display().to_string(),
            source,
        };
        let log = OpenOptions::new()
            .create(true)
            .append(true)
            .read(true)
            .open(&log_path)
            .map_err(io)?;
        let mut store = Self {
            latest: index_latest(&items),
            items,
            corpus: None,
            log,
            log_path: log_path.clone(),
        };
        let reader = BufReader::new(File::open(&log_path).map_err(io)?);
        for (i, line) in reader.lines().enumerate() {
            let line = line.map_err(io)?;
            if line.trim().is_empty() {
                continue;
            }
            let replay_err = |reason: String| StoreError::Replay {
                path: log_path.display().to_string(),
                line: i + 1,
                reason,
            };
            let event: Event = serde_json::from_str(&line).map_err(|e| replay_err(e.to_string()))?;
            store.apply(&event).map_err(|e| replay_err(e.to_string()))?;
        }
        Ok(store)
    }

    pub fn with_corpus(mut self, corpus: Corpus) -> Self {
        self.corpus = Some(corpus);
        self
    }

    pub fn log_path(&self) -> &Path {
        &self.log_path
    }

    pub fn items(&self) -> &[AnnotationItem] {
        &self.items
    }

    /// Latest version of an item.
    pub fn get(&self, id: &str) -> Option<&AnnotationItem> {
        self.latest.get(id).map(|&pos| &self.items[pos])
    }

    pub fn list(&self, filter: &ItemFilter) -> Vec<&AnnotationItem> {
        self.items.iter().filter(|i| filter.accepts(i)).collect()
    }

    pub fn context(&self, item: &AnnotationItem) -> Vec<ContextLine> {
        let Some(t) = self.corpus.as_ref().and_then(|c| c.get(&item.session_id)) else {
            return Vec::new();
        };
        let lo = item.message_index.saturating_sub(CONTEXT_RADIUS);
        let hi = (item.message_index + CONTEXT_RADIUS + 1).min(t.messages.len());
        t.messages
            .get(lo..hi)
            .unwrap_or_default()
            .iter()
            .map(|m| ContextLine {
                index: m.index,
                role: m.role.clone(),
                text: m.text.clone(),
            })
            .collect()
    }

    fn latest_mut(&mut self, id: &str) -> Result<&mut AnnotationItem, StoreError> {
        let pos = *self
            .latest
            .get(id)
            .ok_or_else(|| StoreError::NotFound(id.to_string()))?;
        Ok(&mut self.items[pos])
    }

    /// Applies an event to memory only.
    fn apply(&mut self, event: &Event) -> Result<(), StoreError> {
        match event {
            Event::Vote {
                item_id,
                iteration,
                vote,
            } => {
                let item = self.latest_mut(item_id)?;
                if item.iteration != *iteration {
                    return Err(StoreError::Invalid(format!(
                        "vote for iteration {iteration} but item `{item_id}` is at iteration {}",
                        item.iteration
                    )));
                }
                item.add_vote(vote.clone()).map_err(StoreError::Conflict)
            }
            Event::Override {
                item_id,
                evaluation,
                surrogate,
                ..
            } => self
                .latest_mut(item_id)?
                .apply_override(*evaluation, surrogate.clone())
                .map_err(|e| StoreError::Invalid(e.to_string())),
            Event::CloseIteration { iteration, .. } => {
                for item in self.items.iter_mut().filter(|i| i.iteration == *iteration) {
                    item.close_iteration();
                }
                Ok(())
            }
        }
    }

    /// Validates against a scratch copy, makes the event durable, then
    /// applies it.
    fn commit(&mut self, event: Event) -> Result<(), StoreError> {
        let touched = match &event {
            Event::Vote { item_id, .. } | Event::Override { item_id, .. } => Some(item_id.clone()),
            Event::CloseIteration { .. } => None,
        };
        if let Some(id) = &touched {
            let mut probe = self.get(id).ok_or_else(|| StoreError::NotFound(id.clone()))?.clone();
            match &event {
                Event::Vote { iteration, vote, .. } => {
                    if probe.iteration != *iteration {
                        return Err(StoreError::Invalid(format!(
                            "item `{id}` is at iteration {}, not {iteration}",
                            probe.iteration
                        )));
                    }
                    probe.add_vote(vote.clone()).map_err(StoreError::Conflict)?;
                }
                Event::Override {
                    evaluation, surrogate, ..
                } => probe
                    .apply_override(*evaluation, surrogate.clone())
                    .map_err(|e| StoreError::Invalid(e.to_string()))?,
                Event::CloseIteration { .. } => {}
            }
        }
        let line = serde_json::to_string(&event).expect("event serializes");
        let io = |source| StoreError::Io {
            path: self.log_path.display().to_string(),
            source,
        };
        writeln!(self.log, "{line}").map_err(io)?;
        self.log.sync_data().map_err(io)?;
        self.apply(&event)
    }

    pub fn vote(&mut self, id: &str, vote: Vote) -> Result<AnnotationItem, StoreError> {
        let iteration = self
            .get(id)
            .ok_or_else(|| StoreError::NotFound(id.to_string()))?
            .iteration;
        self.commit(Event::Vote {
            item_id: id.to_string(),
            iteration,
            vote,
        })?;
        Ok(self.get(id).expect("item exists").clone())
    }

    pub fn override_item(
        &mut self,
        id: &str,
        evaluation: Evaluation,
        surrogate: Option<String>,
        reviewer_id: Option<String>,
    ) -> Result<AnnotationItem, StoreError> {
        let iteration = self
            .get(id)
            .ok_or_else(|| StoreError::NotFound(id.to_string()))?
            .iteration;
        self.commit(Event::Override {
            item_id: id.to_string(),
            iteration,
            evaluation,
            surrogate,
            reviewer_id,
            timestamp: Utc::now(),
        })?;
        Ok(self.get(id).expect("item exists").clone())
    }

    /// Settles every item of iteration `k`; returns how many items it covered.
    pub fn close_iteration(&mut self, k: u32) -> Result<usize, StoreError> {
        self.commit(Event::CloseIteration {
            iteration: k,
            timestamp: Utc::now(),
        })?;
        Ok(self.items.iter().filter(|i| i.iteration == k).count())
    }

    pub fn resolution(&self, k: u32) -> Resolution {
        iteration_resolution(&self.items, k)
    }

    pub fn stats(&self) -> Stats {
        let mut stats = Stats::default();
        let mut messages: HashMap<(&str, usize), bool> = HashMap::new();
        for &pos in self.latest.values() {
            let item = &self.items[pos];
            stats.items += 1;
            *stats
                .by_type
                .entry(item.pii_type)
                .or_default()
                .entry(item.evaluation)
                .or_default() += 1;
            *stats.by_status.entry(item.status.code().to_string()).or_default() += 1;
            *messages.entry((&item.session_id, item.message_index)).or_default() |=
                item.evaluation == Evaluation::NotPii;
        }
        stats.messages = messages.len();
        stats.messages_not_pii = messages.values().filter(|&&n| n).count();
        stats.not_pii_message_share = if stats.messages == 0 {
            0.0
        } else {
            stats.messages_not_pii as f64 / stats.messages as f64
        };
        stats
    }
}
