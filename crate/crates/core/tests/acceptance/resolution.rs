//! Stopping rule for audit iterations.

use std::collections::HashSet;

use chrono::Utc;
use mathdeid_core::corpus::PiiType;
use mathdeid_core::surrogation::{
    iteration_resolution, resolution_rate, AnnotationItem, Evaluation, ItemOrigin, ItemStatus, Vote, VoteDirection,
};

use crate::Outcome;

fn item(n: usize, iteration: u32, down: bool) -> AnnotationItem {
    let mut item = AnnotationItem {
        id: AnnotationItem::item_id("r", n, 0),
        session_id: "r".into(),
        message_index: n,
        pii_type: PiiType::Person,
        origin: ItemOrigin::Upstream,
        span: None,
        original_text: PiiType::Person.placeholder(),
        ai_redacted_content: None,
        evaluation: Evaluation::Pii,
        surrogate: Some(format!("Casey {n}")),
        iteration,
        votes: Vec::new(),
        status: ItemStatus::Pending,
        flagged: false,
    };
    if down {
        item.add_vote(Vote {
            reviewer_id: "rev".into(),
            direction: VoteDirection::Down,
            timestamp: Utc::now(),
            note: None,
        })
        .unwrap();
    }
    item
}

/// Twenty items down-voted in iteration 1, reissued in iteration 2 with
/// `still_down` of them down-voted again.
fn history(still_down: usize) -> Vec<AnnotationItem> {
    let mut items: Vec<AnnotationItem> = (0..20).map(|n| item(n, 1, true)).collect();
    items.extend((0..5).map(|n| item(100 + n, 1, false)));
    items.extend((0..20).map(|n| item(n, 2, n < still_down)));
    items
}

pub fn run() -> Outcome {
    for (still_down, rate, stop) in [(1, 0.95, true), (2, 0.90, false), (0, 1.0, true), (20, 0.0, false)] {
        let items = history(still_down);
        let r = iteration_resolution(&items, 2);
        ensure!(
            r.previous_downvoted == 20 && (r.rate - rate).abs() < 1e-12 && r.stop == stop,
            "{} of 20 resolved: got {r:?}, expected rate {rate} stop {stop}",
            20 - still_down
        );
        let prev: HashSet<String> = (0..20).map(|n| AnnotationItem::item_id("r", n, 0)).collect();
        let current: Vec<AnnotationItem> = items.iter().filter(|i| i.iteration == 2).cloned().collect();
        let direct = resolution_rate(&prev, &current);
        ensure!(direct == r, "resolution_rate {direct:?} != iteration_resolution {r:?}");
    }
    let empty = resolution_rate(&HashSet::new(), &[]);
    ensure!(empty.rate == 1.0 && empty.stop, "empty previous set: {empty:?}");
    let clean: Vec<AnnotationItem> = (0..5).map(|n| item(n, 1, false)).collect();
    let r = iteration_resolution(&clean, 2);
    ensure!(r.rate == 1.0 && r.stop, "no prior down-votes: {r:?}");
    Ok("19/20 -> 0.95 stop; 18/20 -> 0.90 continue; empty -> 1.0 stop".into())
}
