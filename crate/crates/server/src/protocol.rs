//! Wire frames exchanged over the `/ws` stream.
//!
//! Every frame is one JSON object:
//!
//! ```json
//! { "frame_type": "edit", "session_id": "s1", "frame_seq": 7, "payload": { ... } }
//! ```
//!
//! `frame_seq` is per connection and per direction: the server numbers its
//! own frames from 1 and expects each client to do the same.

use std::fmt;

use codetrail_core::question::{Anchor, Question, QuestionEdits, QuestionMode};
use codetrail_core::replay::{ChatRef, Source};
use codetrail_core::session_log::{ChatEvent, EditEvent, SessionMetadata, TestRunEvent};
use codetrail_core::timeline::{HitTarget, PickRadius, TimelineModel, ViewportHints, ZoomDetail};
use serde::{Deserialize, Serialize};
use serde_json::Value;

pub const PROTOCOL_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrameType {
    Hello,
    Edit,
    Chat,
    TestRun,
    SnapshotRequest,
    Snapshot,
    TimelineRequest,
    Timeline,
    MetricsRequest,
    Metrics,
    QuestionCreate,
    QuestionDeliver,
    AnswerSubmit,
    AnswerDeliver,
    Relabel,
    Error,
    Bye,
}

impl fmt::Display for FrameType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let v = serde_json::to_value(self).expect("unit variants serialize");
        f.write_str(v.as_str().unwrap_or("?"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub frame_type: FrameType,
    pub session_id: String,
    #[serde(default)]
    pub frame_seq: u64,
    #[serde(default)]
    pub payload: Value,
}

impl Frame {
    /// Builds a frame with `frame_seq` 0; the sender numbers it on the way out.
    pub fn new<P: Serialize>(frame_type: FrameType, session_id: &str, payload: &P) -> Frame {
        Frame {
            frame_type,
            session_id: session_id.to_string(),
            frame_seq: 0,
            payload: serde_json::to_value(payload).expect("payloads always serialize"),
        }
    }

    pub fn error(session_id: &str, err: &ErrorPayload) -> Frame {
        Frame::new(FrameType::Error, session_id, err)
    }

    pub fn payload_as<T: for<'de> Deserialize<'de>>(&self) -> Result<T, ErrorPayload> {
        serde_json::from_value(self.payload.clone()).map_err(|e| {
            ErrorPayload::new(
                ErrorCode::BadFrame,
                format!("invalid {} payload: {e}", self.frame_type),
            )
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Student,
    Instructor,
}

/// Client `hello`. A student hello for a new session creates it from
/// `metadata` and `starter`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HelloPayload {
    pub role: Option<Role>,
    pub token: Option<String>,
    pub metadata: SessionMetadata,
    pub starter: std::collections::BTreeMap<String, String>,
}

/// Server reply to `hello`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HelloAck {
    pub protocol_version: u32,
    pub role: Role,
    pub last_seq: u64,
    pub created: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EditLabel {
    pub source: Source,
    pub chat_ref: Option<ChatRef>,
    pub provisional: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EditPayload {
    pub event: EditEvent,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<EditLabel>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatPayload {
    pub event: ChatEvent,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestRunPayload {
    pub event: TestRunEvent,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SnapshotRequest {
    pub file_path: Option<String>,
    /// Clamped to the latest accepted timestamp; `None` means now.
    pub t: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ZoomRequest {
    pub t0: u64,
    pub t1: u64,
    #[serde(default)]
    pub excerpt_len: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PickRequest {
    pub t: u64,
    pub line: usize,
    #[serde(default)]
    pub radius: Option<PickRadius>,
}

/// Plain requests return the model; `zoom` and `pick` return the detail
/// or hit target instead.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TimelineRequest {
    pub file_path: Option<String>,
    pub viewport: Option<ViewportHints>,
    pub zoom: Option<ZoomRequest>,
    pub pick: Option<PickRequest>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TimelineResponse {
    Model(Box<TimelineModel>),
    Zoom { zoom: ZoomDetail },
    Pick { pick: HitTarget },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuestionCreateRequest {
    pub anchor: Anchor,
    pub mode: QuestionMode,
    #[serde(default)]
    pub constraints: String,
    #[serde(default)]
    pub file_path: Option<String>,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuestionPayload {
    pub question: Question,
}

/// Instructor request to send a draft, with optional last-minute edits.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuestionDeliverRequest {
    pub question_id: String,
    #[serde(default)]
    pub edits: QuestionEdits,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnswerSubmit {
    pub question_id: String,
    pub answer: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    BadFrame,
    Unauthorized,
    SeqOrderViolation,
    TimestampRegression,
    OffsetOutOfRange,
    RemovedTextMismatch,
    UnknownFile,
    UnknownSession,
    RoleViolation,
    UnknownQuestion,
    IllegalTransition,
    AnchorOutOfRange,
    ProviderUnavailable,
    MalformedGeneration,
    OutOfExtent,
    JournalWrite,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, thiserror::Error)]
#[error("{code:?}: {message}")]
pub struct ErrorPayload {
    pub code: ErrorCode,
    pub message: String,
    /// Seq the server expected next, for `seq_order_violation`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expected_seq: Option<u64>,
    /// Seq of the rejected event, when there was one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seq: Option<u64>,
}

impl ErrorPayload {
    pub fn new(code: ErrorCode, message: impl Into<String>) -> Self {
        ErrorPayload {
            code,
            message: message.into(),
            expected_seq: None,
            seq: None,
        }
    }

    pub fn at_seq(mut self, seq: u64) -> Self {
        self.seq = Some(seq);
        self
    }
}
