//! Grounding service: HTTP endpoints for the two-stage pipeline and the
//! human-verification queue that reviews stage-1 rejections.

pub mod app;
pub mod error;
pub mod queue;

pub use app::{router, serve, serve_on, AppState, ServiceConfig};
pub use error::{ApiError, QueueError};
pub use queue::{recompute_with_decisions, Decision, DecisionRecord, QueueItem, Status, VerificationQueue};
