//! One-to-one matching of predicted spans against gold spans within a
//! message.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::{PiiSpan, PiiType};
use crate::detection::Detection;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum MatchPolicy {
    /// Equal type and equal normalized text.
    #[default]
    TextAndType,
    /// Equal type and overlapping char ranges.
    OverlapAndType,
}

impl MatchPolicy {
    pub fn code(self) -> &'static str {
        match self {
            MatchPolicy::TextAndType => "TEXT_AND_TYPE",
            MatchPolicy::OverlapAndType => "OVERLAP_AND_TYPE",
        }
    }
}

impl fmt::Display for MatchPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for MatchPolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "text" | "text_and_type" => Ok(MatchPolicy::TextAndType),
            "overlap" | "overlap_and_type" => Ok(MatchPolicy::OverlapAndType),
            other => Err(format!("unknown match policy `{other}` (expected text or overlap)")),
        }
    }
}

/// Case-fold and trim.
pub fn normalize_text(s: &str) -> String {
    s.trim().to_lowercase()
}

/// A span reduced to what matching looks at.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpanItem {
    pub text: String,
    pub pii_type: PiiType,
    pub range: Option<(usize, usize)>,
}

impl SpanItem {
    pub fn new(text: impl Into<String>, pii_type: PiiType, range: Option<(usize, usize)>) -> Self {
        Self {
            text: text.into(),
            pii_type,
            range,
        }
    }
}

impl From<&PiiSpan> for SpanItem {
    fn from(s: &PiiSpan) -> Self {
        SpanItem::new(s.surface.clone(), s.pii_type, Some((s.start, s.end)))
    }
}

impl From<&Detection> for SpanItem {
    fn from(d: &Detection) -> Self {
        SpanItem::new(d.text.clone(), d.pii_type, d.range())
    }
}

/// Keeps the first item of each (type, normalized text) pair.
pub fn dedupe(items: &[SpanItem]) -> Vec<SpanItem> {
    let mut seen = HashSet::new();
    items
        .iter()
        .filter(|i| seen.insert((i.pii_type, normalize_text(&i.text))))
        .cloned()
        .collect()
}

/// Result of matching one message. Indices refer to the deduplicated lists.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MessageMatch {
    pub gold: Vec<SpanItem>,
    pub predicted: Vec<SpanItem>,
    /// (gold index, predicted index)
    pub pairs: Vec<(usize, usize)>,
    pub unmatched_predicted: Vec<usize>,
    pub unmatched_gold: Vec<usize>,
}

impl MessageMatch {
    pub fn tp(&self) -> usize {
        self.pairs.len()
    }

    pub fn fp(&self) -> usize {
        self.unmatched_predicted.len()
    }

    pub fn fn_(&self) -> usize {
        self.unmatched_gold.len()
    }
}

fn overlaps(a: Option<(usize, usize)>, b: Option<(usize, usize)>) -> bool {
    match (a, b) {
        (Some((s1, e1)), Some((s2, e2))) => s1 < e2 && s2 < e1,
        _ => false,
    }
}

/// Deduplicates both sides, then matches greedily one-to-one.
///
/// Under text matching each (type, text) key occurs at most once per side, so
/// the matching is the key intersection. Under overlap matching predictions
/// are taken by ascending end and each claims the unclaimed overlapping gold
/// span of the same type that ends first; on intervals this yields a maximum
/// matching.
pub fn match_spans(gold: &[SpanItem], predicted: &[SpanItem], policy: MatchPolicy) -> MessageMatch {
    let gold = dedupe(gold);
    let predicted = dedupe(predicted);
    let mut gold_used = vec![false; gold.len()];
    let mut pred_used = vec![false; predicted.len()];
    let mut pairs = Vec::new();
    match policy {
        MatchPolicy::TextAndType => {
            for (pi, p) in predicted.iter().enumerate() {
                let key = normalize_text(&p.text);
                if let Some(gi) = (0..gold.len()).find(|&gi| {
                    !gold_used[gi] && gold[gi].pii_type == p.pii_type && normalize_text(&gold[gi].text) == key
                }) {
                    gold_used[gi] = true;
                    pred_used[pi] = true;
                    pairs.push((gi, pi));
                }
            }
        }
        MatchPolicy::OverlapAndType => {
            let mut order: Vec<usize> = (0..predicted.len()).filter(|&i| predicted[i].range.is_some()).collect();
            order.sort_by_key(|&i| (predicted[i].range.map(|r| r.1), predicted[i].range.map(|r| r.0), i));
            for pi in order {
                let p = &predicted[pi];
                let best = (0..gold.len())
                    .filter(|&gi| {
                        !gold_used[gi] && gold[gi].pii_type == p.pii_type && overlaps(gold[gi].range, p.range)
                    })
                    .min_by_key(|&gi| (gold[gi].range.map(|r| r.1), gi));
                if let Some(gi) = best {
                    gold_used[gi] = true;
                    pred_used[pi] = true;
                    pairs.push((gi, pi));
                }
            }
            pairs.sort_unstable_by_key(|&(g, p)| (p, g));
        }
    }
    MessageMatch {
        unmatched_predicted: (0..predicted.len()).filter(|&i| !pred_used[i]).collect(),
        unmatched_gold: (0..gold.len()).filter(|&i| !gold_used[i]).collect(),
        gold,
        predicted,
        pairs,
    }
}
