//! Iteration stopping rule: stop once at least 95% of the items down-voted in
//! the previous iteration draw no down-vote after the prompt revision.

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use super::items::AnnotationItem;

pub const STOP_THRESHOLD: f64 = 0.95;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Resolution {
    pub previous_downvoted: usize,
    pub resolved: usize,
    pub rate: f64,
    pub stop: bool,
}

/// Ids of items in `iteration` with at least one DOWN vote.
pub fn downvoted_ids(items: &[AnnotationItem], iteration: u32) -> HashSet<String> {
    items
        .iter()
        .filter(|i| i.iteration == iteration && i.has_down_vote())
        .map(|i| i.id.clone())
        .collect()
}

/// Share of previously down-voted ids whose reissued item has no DOWN vote.
/// An id missing from `current` was not reissued and counts as resolved. An
/// empty previous set gives rate 1 and stop.
pub fn resolution_rate(previous_downvoted: &HashSet<String>, current: &[AnnotationItem]) -> Resolution {
    if previous_downvoted.is_empty() {
        return Resolution {
            previous_downvoted: 0,
            resolved: 0,
            rate: 1.0,
            stop: true,
        };
    }
    let current: HashMap<&str, &AnnotationItem> = current.iter().map(|i| (i.id.as_str(), i)).collect();
    let resolved = previous_downvoted
        .iter()
        .filter(|id| current.get(id.as_str()).is_none_or(|i| !i.has_down_vote()))
        .count();
    let rate = resolved as f64 / previous_downvoted.len() as f64;
    Resolution {
        previous_downvoted: previous_downvoted.len(),
        resolved,
        rate,
        stop: rate >= STOP_THRESHOLD,
    }
}

/// Resolution of iteration `k` (k >= 2) against iteration `k - 1`.
pub fn iteration_resolution(items: &[AnnotationItem], k: u32) -> Resolution {
    let previous = downvoted_ids(items, k.saturating_sub(1));
    let current: Vec<AnnotationItem> = items.iter().filter(|i| i.iteration == k).cloned().collect();
    resolution_rate(&previous, &current)
}
