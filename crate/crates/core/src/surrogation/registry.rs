//! Surrogate bookkeeping: one surrogate per entity within a transcript, and
//! no surrogate shared between transcripts.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::items::{AnnotationItem, ItemOrigin};
use crate::corpus::{char_slice, PiiType};

/// Chars of context on each side of a placeholder that identify it.
pub const CONTEXT_CHARS: usize = 16;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct EntityKey {
    pub pii_type: PiiType,
    pub fingerprint: String,
}

fn normalize(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

/// Key for the entity an item refers to. Discovered items are keyed by
/// their normalized text. Placeholders hide the original, so upstream items
/// are keyed by a hash of the placeholder and its surrounding text.
pub fn entity_key(item: &AnnotationItem, message_text: &str) -> EntityKey {
    let fingerprint = match (item.origin, item.span) {
        (ItemOrigin::Discovered, _) => normalize(&item.original_text),
        (ItemOrigin::Upstream, Some(span)) => {
            let len = message_text.chars().count();
            let before = char_slice(message_text, span.start.saturating_sub(CONTEXT_CHARS), span.start).unwrap_or("");
            let after = char_slice(message_text, span.end.min(len), (span.end + CONTEXT_CHARS).min(len)).unwrap_or("");
            let mut h = Sha256::new();
            for part in [normalize(before), normalize(&item.original_text), normalize(after)] {
                h.update((part.len() as u64).to_le_bytes());
                h.update(part.as_bytes());
            }
            hex::encode(&h.finalize()[..16])
        }
        (ItemOrigin::Upstream, None) => format!("item:{}", item.id),
    };
    EntityKey {
        pii_type: item.pii_type,
        fingerprint,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RegistryError {
    #[error("surrogate `{surrogate}` is used in session `{first}` and requested again in session `{second}`")]
    Conflict {
        surrogate: String,
        first: String,
        second: String,
    },
    #[error("entity {key:?} in session `{session}` maps to both `{a}` and `{b}`")]
    Inconsistent {
        session: String,
        key: EntityKey,
        a: String,
        b: String,
    },
}

/// Serialized as a flat list of entries; ownership is rebuilt and checked on
/// load.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(into = "RegistryFile", try_from = "RegistryFile")]
pub struct SurrogateRegistry {
    per_transcript: BTreeMap<String, BTreeMap<EntityKey, String>>,
    /// Normalized surrogate to the session that owns it.
    used: HashMap<String, String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RegistryEntry {
    session_id: String,
    #[serde(rename = "type")]
    pii_type: PiiType,
    fingerprint: String,
    surrogate: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RegistryFile {
    entries: Vec<RegistryEntry>,
}

impl From<SurrogateRegistry> for RegistryFile {
    fn from(r: SurrogateRegistry) -> Self {
        let entries = r
            .per_transcript
            .into_iter()
            .flat_map(|(session_id, map)| {
                map.into_iter().map(move |(key, surrogate)| RegistryEntry {
                    session_id: session_id.clone(),
                    pii_type: key.pii_type,
                    fingerprint: key.fingerprint,
                    surrogate,
                })
            })
            .collect();
        RegistryFile { entries }
    }
}

impl TryFrom<RegistryFile> for SurrogateRegistry {
    type Error = RegistryError;

    fn try_from(file: RegistryFile) -> Result<Self, Self::Error> {
        let mut r = SurrogateRegistry::new();
        for e in file.entries {
            let key = EntityKey {
                pii_type: e.pii_type,
                fingerprint: e.fingerprint,
            };
            let got = r.register(&e.session_id, key.clone(), &e.surrogate)?;
            if got != e.surrogate {
                return Err(RegistryError::Inconsistent {
                    session: e.session_id,
                    key,
                    a: got,
                    b: e.surrogate,
                });
            }
        }
        Ok(r)
    }
}

impl SurrogateRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Returns the surrogate to write for `key` in `session`: the one already
    /// registered for that entity, else `proposed` once it is checked
    /// against other transcripts.
    pub fn register(&mut self, session: &str, key: EntityKey, proposed: &str) -> Result<String, RegistryError> {
        if let Some(existing) = self.per_transcript.get(session).and_then(|m| m.get(&key)) {
            return Ok(existing.clone());
        }
        let norm = normalize(proposed);
        if let Some(owner) = self.used.get(&norm) {
            if owner != session {
                return Err(RegistryError::Conflict {
                    surrogate: proposed.to_string(),
                    first: owner.clone(),
                    second: session.to_string(),
                });
            }
        } else {
            self.used.insert(norm, session.to_string());
        }
        self.per_transcript
            .entry(session.to_string())
            .or_default()
            .insert(key, proposed.to_string());
        Ok(proposed.to_string())
    }

    pub fn lookup(&self, session: &str, key: &EntityKey) -> Option<&str> {
        self.per_transcript.get(session)?.get(key).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.per_transcript.values().map(BTreeMap::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Re-derives the owner of every surrogate and fails on any string held
    /// by two transcripts.
    pub fn check(&self) -> Result<(), RegistryError> {
        let mut owners: HashMap<String, &str> = HashMap::new();
        for (session, map) in &self.per_transcript {
            for surrogate in map.values() {
                let norm = normalize(surrogate);
                match owners.get(&norm) {
                    Some(owner) if *owner != session => {
                        return Err(RegistryError::Conflict {
                            surrogate: surrogate.clone(),
                            first: owner.to_string(),
                            second: session.clone(),
                        })
                    }
                    _ => {
                        owners.insert(norm, session);
                    }
                }
            }
        }
        Ok(())
    }
}
