//! Human verification workflow for generated question/answer data.
//!
//! Records move `generated → in_review → cross_check → finalized`, with
//! revisions and disputes looping back through `revised` and
//! `needs_revision`. Finalization needs approvals from distinct annotators;
//! records disputed too often end in `replaced`.

pub mod api;
mod error;
pub mod export;
pub mod record;
pub mod store;

pub use error::{Result, ReviewError};
pub use export::export_finalized;
pub use record::{
    Command, CrossVerdict, Event, HistoryEntry, ItemIssue, Policy, ReviewDecision, ReviewPayload, ReviewRecord,
    ReviewState,
};
pub use store::{Enqueued, ReviewStore};
