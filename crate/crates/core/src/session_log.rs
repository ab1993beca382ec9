//! Session-log records and the canonical JSON / NDJSON formats.
//!
//! A session file is a single JSON document:
//!
//! ```json
//! { "session_id": "s1",
//!   "metadata": { "task_id": "T1", "condition": "free", "duration_ms": 1200000 },
//!   "starter": { "main.py": "" },
//!   "events": [ { "type": "edit", ... }, { "type": "chat", ... }, { "type": "test_run", ... } ] }
//! ```
//!
//! Offsets are counted in Unicode scalar values. The formal schema lives in
//! `schemas/session-log.schema.json` at the repository root.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EditKind {
    Insert,
    Delete,
    Replace,
    FileAction,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum InputHint {
    Keystroke,
    Paste,
    CompletionAccept,
    #[default]
    Unknown,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FileAction {
    Save,
    Open,
    Close,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EditEvent {
    pub session_id: String,
    pub seq: u64,
    pub timestamp_ms: u64,
    pub file_path: String,
    pub kind: EditKind,
    pub offset: usize,
    #[serde(default)]
    pub removed_text: String,
    #[serde(default)]
    pub inserted_text: String,
    #[serde(default)]
    pub input_hint: InputHint,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub file_action: Option<FileAction>,
}

impl EditEvent {
    /// Builds an insert, delete or replace event, picking the kind from
    /// which text fields are nonempty.
    #[allow(clippy::too_many_arguments)]
    pub fn splice(
        session_id: &str,
        seq: u64,
        timestamp_ms: u64,
        file_path: &str,
        offset: usize,
        removed: &str,
        inserted: &str,
        hint: InputHint,
    ) -> Self {
        let kind = match (removed.is_empty(), inserted.is_empty()) {
            (true, _) => EditKind::Insert,
            (false, true) => EditKind::Delete,
            (false, false) => EditKind::Replace,
        };
        EditEvent {
            session_id: session_id.to_string(),
            seq,
            timestamp_ms,
            file_path: file_path.to_string(),
            kind,
            offset,
            removed_text: removed.to_string(),
            inserted_text: inserted.to_string(),
            input_hint: hint,
            file_action: None,
        }
    }

    pub fn file_action(
        session_id: &str,
        seq: u64,
        timestamp_ms: u64,
        file_path: &str,
        action: FileAction,
    ) -> Self {
        EditEvent {
            session_id: session_id.to_string(),
            seq,
            timestamp_ms,
            file_path: file_path.to_string(),
            kind: EditKind::FileAction,
            offset: 0,
            removed_text: String::new(),
            inserted_text: String::new(),
            input_hint: InputHint::Unknown,
            file_action: Some(action),
        }
    }

    pub fn inserts_text(&self) -> bool {
        matches!(self.kind, EditKind::Insert | EditKind::Replace)
    }

    pub fn removes_text(&self) -> bool {
        matches!(self.kind, EditKind::Delete | EditKind::Replace)
    }

    /// Checks the per-record shape rules; returns the offending field name.
    pub fn check_shape(&self) -> Result<(), (&'static str, String)> {
        let ins = !self.inserted_text.is_empty();
        let rem = !self.removed_text.is_empty();
        if self.seq == 0 {
            return Err(("seq", "seq must be positive".into()));
        }
        match self.kind {
            EditKind::Insert if !ins || rem => Err((
                "inserted_text",
                "insert requires nonempty inserted_text and empty removed_text".into(),
            )),
            EditKind::Delete if ins || !rem => Err((
                "removed_text",
                "delete requires nonempty removed_text and empty inserted_text".into(),
            )),
            EditKind::Replace if !ins || !rem => Err((
                "kind",
                "replace requires both removed_text and inserted_text".into(),
            )),
            EditKind::FileAction => {
                if self.file_action.is_none() {
                    Err(("file_action", "file_action event without an action".into()))
                } else if self.offset != 0 || ins || rem {
                    Err((
                        "offset",
                        "file_action events carry offset 0 and no text".into(),
                    ))
                } else {
                    Ok(())
                }
            }
            _ if self.file_action.is_some() => Err((
                "file_action",
                "file_action is only allowed on file_action events".into(),
            )),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChatRole {
    Student,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChatEvent {
    pub session_id: String,
    pub timestamp_ms: u64,
    pub role: ChatRole,
    pub text: String,
    #[serde(default)]
    pub code_blocks: Vec<String>,
    pub word_count: usize,
}

impl ChatEvent {
    /// Checks the stored word count and code blocks against the text.
    pub fn check_shape(&self) -> Result<(), (&'static str, String)> {
        let expected = word_count(&self.text);
        if expected != self.word_count {
            return Err((
                "word_count",
                format!("stored {} but text has {expected} words", self.word_count),
            ));
        }
        if let Some(k) = self.code_blocks.iter().position(|b| !self.text.contains(b.as_str())) {
            return Err((
                "code_blocks",
                format!("code block {k} is not a substring of the message text"),
            ));
        }
        Ok(())
    }

    /// Builds a chat event, deriving `code_blocks` and `word_count` from the text.
    pub fn new(session_id: &str, timestamp_ms: u64, role: ChatRole, text: &str) -> Self {
        ChatEvent {
            session_id: session_id.to_string(),
            timestamp_ms,
            role,
            text: text.to_string(),
            code_blocks: extract_code_blocks(text, false),
            word_count: word_count(text),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TestRunEvent {
    pub session_id: String,
    pub timestamp_ms: u64,
    pub passed: u32,
    pub failed: u32,
    #[serde(default)]
    pub raw_output: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Event {
    Edit(EditEvent),
    Chat(ChatEvent),
    TestRun(TestRunEvent),
}

impl Event {
    pub fn timestamp_ms(&self) -> u64 {
        match self {
            Event::Edit(e) => e.timestamp_ms,
            Event::Chat(c) => c.timestamp_ms,
            Event::TestRun(t) => t.timestamp_ms,
        }
    }

    pub fn session_id(&self) -> &str {
        match self {
            Event::Edit(e) => &e.session_id,
            Event::Chat(c) => &c.session_id,
            Event::TestRun(t) => &t.session_id,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct SessionMetadata {
    #[serde(default)]
    pub task_id: String,
    #[serde(default)]
    pub condition: String,
    #[serde(default)]
    pub duration_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionLog {
    pub session_id: String,
    #[serde(default)]
    pub metadata: SessionMetadata,
    #[serde(default)]
    pub starter: BTreeMap<String, String>,
    #[serde(default)]
    pub events: Vec<Event>,
}

impl SessionLog {
    pub fn new(session_id: &str) -> Self {
        SessionLog {
            session_id: session_id.to_string(),
            metadata: SessionMetadata::default(),
            starter: BTreeMap::new(),
            events: Vec::new(),
        }
    }

    pub fn edits(&self) -> impl Iterator<Item = &EditEvent> {
        self.events.iter().filter_map(|e| match e {
            Event::Edit(ed) => Some(ed),
            _ => None,
        })
    }

    pub fn chats(&self) -> impl Iterator<Item = &ChatEvent> {
        self.events.iter().filter_map(|e| match e {
            Event::Chat(c) => Some(c),
            _ => None,
        })
    }

    pub fn test_runs(&self) -> impl Iterator<Item = &TestRunEvent> {
        self.events.iter().filter_map(|e| match e {
            Event::TestRun(t) => Some(t),
            _ => None,
        })
    }

    pub fn edit_count(&self) -> usize {
        self.edits().count()
    }

    /// Every file the log touches: starter files first, then files that
    /// only appear in edit events, in order of first appearance.
    pub fn file_paths(&self) -> Vec<String> {
        let mut out: Vec<String> = self.starter.keys().cloned().collect();
        for e in self.edits() {
            if !out.iter().any(|p| p == &e.file_path) {
                out.push(e.file_path.clone());
            }
        }
        out
    }

    /// The file a single-file view defaults to.
    pub fn primary_file(&self) -> Option<String> {
        self.edits()
            .next()
            .map(|e| e.file_path.clone())
            .or_else(|| self.starter.keys().next().cloned())
    }

    pub fn starter_text(&self, file_path: &str) -> &str {
        self.starter.get(file_path).map(String::as_str).unwrap_or("")
    }

    pub fn has_file(&self, file_path: &str) -> bool {
        self.starter.contains_key(file_path) || self.edits().any(|e| e.file_path == file_path)
    }

    /// Copy of the log holding only events with `timestamp_ms <= t`.
    pub fn prefix_until(&self, t: u64) -> SessionLog {
        SessionLog {
            events: self
                .events
                .iter()
                .filter(|e| e.timestamp_ms() <= t)
                .cloned()
                .collect(),
            ..self.clone()
        }
    }

    /// Copy of the log holding the first `n` records.
    pub fn prefix_records(&self, n: usize) -> SessionLog {
        SessionLog {
            events: self.events.iter().take(n).cloned().collect(),
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LogError {
    #[error("malformed JSON: {0}")]
    MalformedJson(String),
    #[error("schema violation at {path}.{field}: {reason}")]
    SchemaViolation {
        path: String,
        field: String,
        reason: String,
    },
    #[error("seq order violation: {prev} followed by {next}")]
    SeqOrderViolation { prev: u64, next: u64 },
    #[error("timestamp regression at {path}: {prev} ms followed by {next} ms")]
    TimestampRegression { path: String, prev: u64, next: u64 },
}

impl LogError {
    fn schema(path: impl Into<String>, field: impl Into<String>, reason: impl Into<String>) -> Self {
        LogError::SchemaViolation {
            path: path.into(),
            field: field.into(),
            reason: reason.into(),
        }
    }
}

/// Number of maximal non-whitespace runs.
pub fn word_count(text: &str) -> usize {
    text.split_whitespace().count()
}

/// Extracts the bodies of triple-backtick fenced regions, dropping the
/// fence lines and the optional language tag. An unterminated fence runs
/// to the end of the text.
pub fn extract_code_blocks(text: &str, treat_whole_message_as_code: bool) -> Vec<String> {
    let mut blocks = Vec::new();
    let mut rest = text;
    while let Some(open) = rest.find("```") {
        let after_fence = &rest[open + 3..];
        // The language tag (if any) runs to the end of the fence line.
        let body_start = match after_fence.find('\n') {
            Some(nl) => nl + 1,
            None => break,
        };
        let body = &after_fence[body_start..];
        match find_closing_fence(body) {
            Some(close) => {
                blocks.push(body[..close].to_string());
                rest = &body[close + 3..];
            }
            None => {
                blocks.push(body.to_string());
                break;
            }
        }
    }
    if blocks.is_empty() && treat_whole_message_as_code && !text.trim().is_empty() {
        blocks.push(text.to_string());
    }
    blocks
}

// A closing fence is "```" at the start of a line. Returns the index of
// the fence; the newline before it stays with the block.
fn find_closing_fence(body: &str) -> Option<usize> {
    if body.starts_with("```") {
        return Some(0);
    }
    body.find("\n```").map(|idx| idx + 1)
}

/// Parses and validates a session document.
pub fn parse_session(bytes: &[u8]) -> Result<SessionLog, LogError> {
    let text = std::str::from_utf8(bytes)
        .map_err(|e| LogError::MalformedJson(format!("input is not UTF-8: {e}")))?;
    let root: Value =
        serde_json::from_str(text).map_err(|e| LogError::MalformedJson(e.to_string()))?;
    let obj = root
        .as_object()
        .ok_or_else(|| LogError::schema("$", "", "top level must be an object"))?;

    for key in obj.keys() {
        if !matches!(key.as_str(), "session_id" | "metadata" | "starter" | "events") {
            return Err(LogError::schema("$", key, "unknown top-level field"));
        }
    }
    let session_id = match obj.get("session_id") {
        Some(Value::String(s)) => s.clone(),
        _ => return Err(LogError::schema("$", "session_id", "missing or not a string")),
    };
    let metadata: SessionMetadata = match obj.get("metadata") {
        None => SessionMetadata::default(),
        Some(v) => serde_json::from_value(v.clone())
            .map_err(|e| LogError::schema("$", "metadata", e.to_string()))?,
    };
    let starter: BTreeMap<String, String> = match obj.get("starter") {
        None => BTreeMap::new(),
        Some(v) => serde_json::from_value(v.clone())
            .map_err(|e| LogError::schema("$", "starter", e.to_string()))?,
    };
    let raw_events = match obj.get("events") {
        None => Vec::new(),
        Some(Value::Array(a)) => a.clone(),
        Some(_) => return Err(LogError::schema("$", "events", "must be an array")),
    };

    let mut events = Vec::with_capacity(raw_events.len());
    for (i, raw) in raw_events.into_iter().enumerate() {
        events.push(parse_event(i, raw)?);
    }
    let log = SessionLog {
        session_id,
        metadata,
        starter,
        events,
    };
    validate_log(&log)?;
    Ok(log)
}

fn event_path(i: usize) -> String {
    format!("events[{i}]")
}

fn parse_event(i: usize, raw: Value) -> Result<Event, LogError> {
    let path = event_path(i);
    let ty = raw
        .get("type")
        .and_then(Value::as_str)
        .ok_or_else(|| LogError::schema(&path, "type", "missing event type"))?
        .to_string();
    if !matches!(ty.as_str(), "edit" | "chat" | "test_run") {
        return Err(LogError::schema(
            &path,
            "type",
            format!("unknown event type `{ty}`"),
        ));
    }
    serde_json::from_value::<Event>(raw).map_err(|e| {
        let msg = e.to_string();
        let field = backticked(&msg).unwrap_or_default();
        LogError::schema(&path, field, msg)
    })
}

fn backticked(msg: &str) -> Option<String> {
    let start = msg.find('`')? + 1;
    let len = msg[start..].find('`')?;
    Some(msg[start..start + len].to_string())
}

/// Structural validation shared by the JSON and NDJSON readers.
pub fn validate_log(log: &SessionLog) -> Result<(), LogError> {
    let mut last_seq: Option<u64> = None;
    let mut last_ts: Option<u64> = None;
    for (i, ev) in log.events.iter().enumerate() {
        let path = event_path(i);
        if ev.session_id() != log.session_id {
            return Err(LogError::schema(
                &path,
                "session_id",
                format!(
                    "event belongs to `{}`, log is `{}`",
                    ev.session_id(),
                    log.session_id
                ),
            ));
        }
        let ts = ev.timestamp_ms();
        if let Some(prev) = last_ts {
            if ts < prev {
                return Err(LogError::TimestampRegression {
                    path,
                    prev,
                    next: ts,
                });
            }
        }
        last_ts = Some(ts);
        match ev {
            Event::Edit(e) => {
                e.check_shape()
                    .map_err(|(field, reason)| LogError::schema(&path, field, reason))?;
                if let Some(prev) = last_seq {
                    if e.seq <= prev {
                        return Err(LogError::SeqOrderViolation {
                            prev,
                            next: e.seq,
                        });
                    }
                }
                last_seq = Some(e.seq);
            }
            Event::Chat(c) => check_chat(&path, c)?,
            Event::TestRun(_) => {}
        }
    }
    Ok(())
}

fn check_chat(path: &str, c: &ChatEvent) -> Result<(), LogError> {
    c.check_shape()
        .map_err(|(field, reason)| LogError::schema(path, field, reason))
}

/// Pretty-printed canonical JSON.
pub fn serialize_session(log: &SessionLog) -> Vec<u8> {
    serde_json::to_vec_pretty(log).expect("session logs always serialize")
}

/// One line of the NDJSON stream / journal framing. The first line of a
/// stream is a `session` header; every following line is one event.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum NdjsonRecord {
    Session {
        session_id: String,
        #[serde(default)]
        metadata: SessionMetadata,
        #[serde(default)]
        starter: BTreeMap<String, String>,
    },
    Edit(EditEvent),
    Chat(ChatEvent),
    TestRun(TestRunEvent),
}

impl From<Event> for NdjsonRecord {
    fn from(e: Event) -> Self {
        match e {
            Event::Edit(x) => NdjsonRecord::Edit(x),
            Event::Chat(x) => NdjsonRecord::Chat(x),
            Event::TestRun(x) => NdjsonRecord::TestRun(x),
        }
    }
}

pub fn header_record(log: &SessionLog) -> NdjsonRecord {
    NdjsonRecord::Session {
        session_id: log.session_id.clone(),
        metadata: log.metadata.clone(),
        starter: log.starter.clone(),
    }
}

pub fn to_ndjson(log: &SessionLog) -> String {
    let mut out = String::new();
    let mut push = |r: &NdjsonRecord| {
        out.push_str(&serde_json::to_string(r).expect("records always serialize"));
        out.push('\n');
    };
    push(&header_record(log));
    for e in &log.events {
        push(&NdjsonRecord::from(e.clone()));
    }
    out
}

pub fn from_ndjson(text: &str) -> Result<SessionLog, LogError> {
    let mut log: Option<SessionLog> = None;
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let path = format!("line {}", lineno + 1);
        let value: Value =
            serde_json::from_str(line).map_err(|e| LogError::MalformedJson(format!("{path}: {e}")))?;
        let record: NdjsonRecord = serde_json::from_value(value)
            .map_err(|e| LogError::schema(&path, backticked(&e.to_string()).unwrap_or_default(), e.to_string()))?;
        match (record, log.as_mut()) {
            (
                NdjsonRecord::Session {
                    session_id,
                    metadata,
                    starter,
                },
                None,
            ) => {
                log = Some(SessionLog {
                    session_id,
                    metadata,
                    starter,
                    events: Vec::new(),
                })
            }
            (NdjsonRecord::Session { .. }, Some(_)) => {
                return Err(LogError::schema(&path, "type", "duplicate session header"))
            }
            (_, None) => {
                return Err(LogError::schema(&path, "type", "stream must start with a session header"))
            }
            (NdjsonRecord::Edit(e), Some(l)) => l.events.push(Event::Edit(e)),
            (NdjsonRecord::Chat(c), Some(l)) => l.events.push(Event::Chat(c)),
            (NdjsonRecord::TestRun(t), Some(l)) => l.events.push(Event::TestRun(t)),
        }
    }
    let log = log.ok_or_else(|| LogError::schema("line 1", "type", "empty stream"))?;
    validate_log(&log)?;
    Ok(log)
}

impl fmt::Display for EditKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EditKind::Insert => "insert",
            EditKind::Delete => "delete",
            EditKind::Replace => "replace",
            EditKind::FileAction => "file_action",
        })
    }
}
