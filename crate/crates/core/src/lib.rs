//! Keystroke-log replay and code provenance attribution for programming
//! sessions, with timeline models for instructor review.

pub mod forge;
pub mod metrics;
pub mod provenance;
pub mod question;
pub mod replay;
pub mod session_log;
pub mod timeline;

pub use metrics::{compute_metrics, f_score, SegmentationRules, SessionMetrics};
pub use provenance::{label_session, LabeledSession, Labeler, ProvenanceConfig};
pub use replay::{snapshot_at, DocumentSnapshot, ProvenanceSpan, Source};
pub use session_log::{parse_session, validate_log, EditEvent, Event, SessionLog};
pub use timeline::{build_timeline, TimelineContext, TimelineModel, ViewportHints};
