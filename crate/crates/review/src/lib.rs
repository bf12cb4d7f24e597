//! File-backed review service for audit annotation items.

pub mod api;
pub mod store;

pub use api::{router, serve, AppState, ItemPage, ItemView, TOKEN_HEADER};
pub use store::{ContextLine, Event, ItemFilter, ReviewStore, Stats, StoreError};
