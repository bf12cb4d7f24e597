//! Audit of upstream redactions, human review bookkeeping, and surrogate
//! substitution.

pub mod apply;
pub mod audit;
pub mod items;
pub mod registry;
pub mod resolution;

pub use apply::{
    apply_surrogates, select_applicable, write_ledger, ApplyError, ApplyOutcome, LedgerAction, LedgerRow, LedgerSummary,
};
pub use audit::{audit_corpus, items_from_rows, AuditConfig, AuditOutcome, AuditScope};
pub use items::{
    load_items, upstream_spans, write_items, AnnotationItem, Evaluation, ItemError, ItemOrigin, ItemStatus, SpanRef,
    Vote, VoteDirection,
};
pub use registry::{entity_key, EntityKey, RegistryError, SurrogateRegistry};
pub use resolution::{downvoted_ids, iteration_resolution, resolution_rate, Resolution, STOP_THRESHOLD};
