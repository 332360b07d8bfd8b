//! Review service for auto-annotated frames: list frames, fetch their
//! images, record accept/reject verdicts and export the accepted subset.
//!
//! Verdicts go to an append-only `decisions.jsonl` next to the manifest.
//! The manifest on disk is never rewritten; statuses are the manifest's
//! plus a replay of the log.

pub mod decisions;
mod error;
pub mod server;
pub mod store;

pub use decisions::{parse_log, read_log, replay, Decision, DecisionLog, Verdict, DECISIONS_FILE};
pub use error::{Result, ReviewError};
pub use server::{router, serve, serve_on, AppState};
pub use store::{export_accepted, load_view, stats_of, FrameSummary, ImageKind, Page, ReviewStore, Stats};
