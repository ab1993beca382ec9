//! Session registry and per-connection frame handling.
//!
//! The registry lock is held only to look up or insert a session; all
//! frame processing happens under that session's own mutex.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, MutexGuard, RwLock};

use codetrail_core::metrics::SegmentationRules;
use codetrail_core::provenance::ProvenanceConfig;
use codetrail_core::question::{GenerationProvider, Question, QuestionCreateError, QuestionError, GenerationError};
use codetrail_core::session_log::SessionLog;
use thiserror::Error;
use tracing::{debug, warn};

use crate::journal::{load_dir, Journal, JournalError};
use crate::protocol::{
    AnswerSubmit, ChatPayload, EditPayload, ErrorCode, ErrorPayload, Frame, FrameType, HelloPayload,
    QuestionCreateRequest, QuestionDeliverRequest, Role, SnapshotRequest, TestRunPayload, TimelineRequest,
};
use crate::session::{ConnId, Outbox, SessionState, SessionSummary};

#[derive(Debug, Clone, Default)]
pub struct HubSettings {
    pub provenance: ProvenanceConfig,
    pub rules: SegmentationRules,
    pub journal_dir: Option<PathBuf>,
    pub student_token: Option<String>,
    pub instructor_token: Option<String>,
}

#[derive(Debug, Error)]
pub enum HubError {
    #[error(transparent)]
    Journal(#[from] JournalError),
    #[error("journal for `{session_id}` does not replay: {message}")]
    Replay { session_id: String, message: String },
}

pub type SharedSession = Arc<Mutex<SessionState>>;

pub struct Hub {
    settings: HubSettings,
    provider: Arc<dyn GenerationProvider>,
    sessions: RwLock<BTreeMap<String, SharedSession>>,
    next_conn: AtomicU64,
}

fn lock(s: &SharedSession) -> MutexGuard<'_, SessionState> {
    s.lock().unwrap_or_else(|p| p.into_inner())
}

impl Hub {
    /// Creates the hub, restoring every journal found in the journal directory.
    pub fn open(settings: HubSettings, provider: Arc<dyn GenerationProvider>) -> Result<Hub, HubError> {
        let mut sessions = BTreeMap::new();
        if let Some(dir) = &settings.journal_dir {
            for (log, journal) in load_dir(dir)? {
                let id = log.session_id.clone();
                let state = SessionState::restore(
                    log,
                    settings.provenance.clone(),
                    settings.rules.clone(),
                    Some(journal),
                )
                .map_err(|e| HubError::Replay {
                    session_id: id.clone(),
                    message: e.to_string(),
                })?;
                debug!(session = %id, "restored from journal");
                sessions.insert(id, Arc::new(Mutex::new(state)));
            }
        }
        Ok(Hub {
            settings,
            provider,
            sessions: RwLock::new(sessions),
            next_conn: AtomicU64::new(1),
        })
    }

    pub fn settings(&self) -> &HubSettings {
        &self.settings
    }

    pub fn session(&self, id: &str) -> Option<SharedSession> {
        self.sessions.read().unwrap_or_else(|p| p.into_inner()).get(id).cloned()
    }

    pub fn list(&self) -> Vec<SessionSummary> {
        let all: Vec<SharedSession> = self
            .sessions
            .read()
            .unwrap_or_else(|p| p.into_inner())
            .values()
            .cloned()
            .collect();
        all.iter().map(|s| lock(s).summary()).collect()
    }

    /// Runs `f` against a session's state under its lock.
    pub fn with_session<T>(&self, id: &str, f: impl FnOnce(&SessionState) -> T) -> Result<T, ErrorPayload> {
        let s = self.session(id).ok_or_else(|| unknown_session(id))?;
        let guard = lock(&s);
        Ok(f(&guard))
    }

    fn get_or_create(&self, id: &str, hello: &HelloPayload) -> Result<(SharedSession, bool), ErrorPayload> {
        if let Some(s) = self.session(id) {
            return Ok((s, false));
        }
        let mut map = self.sessions.write().unwrap_or_else(|p| p.into_inner());
        if let Some(s) = map.get(id) {
            return Ok((s.clone(), false));
        }
        let mut log = SessionLog::new(id);
        log.metadata = hello.metadata.clone();
        log.starter = hello.starter.clone();
        let journal = match &self.settings.journal_dir {
            Some(dir) => Some(
                Journal::create(dir, &log)
                    .map_err(|e| ErrorPayload::new(ErrorCode::JournalWrite, e.to_string()))?,
            ),
            None => None,
        };
        let state = SessionState::restore(log, self.settings.provenance.clone(), self.settings.rules.clone(), journal)
            .expect("an empty log always replays");
        let s = Arc::new(Mutex::new(state));
        map.insert(id.to_string(), s.clone());
        Ok((s, true))
    }

    pub fn connect(self: &Arc<Self>, outbox: Outbox) -> Connection {
        Connection {
            hub: self.clone(),
            id: self.next_conn.fetch_add(1, Ordering::Relaxed),
            outbox,
            bound: None,
            last_client_seq: 0,
        }
    }
}

fn unknown_session(id: &str) -> ErrorPayload {
    ErrorPayload::new(ErrorCode::UnknownSession, format!("no session `{id}`"))
}

struct Binding {
    role: Role,
    session_id: String,
    state: SharedSession,
}

/// Whether the transport should keep reading after a frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Flow {
    Continue,
    Close,
}

/// Server side of one client connection. Replies and broadcasts go out
/// through the connection's outbox.
pub struct Connection {
    hub: Arc<Hub>,
    id: ConnId,
    outbox: Outbox,
    bound: Option<Binding>,
    last_client_seq: u64,
}

fn generation_error(e: QuestionCreateError) -> ErrorPayload {
    let code = match &e {
        QuestionCreateError::Question(QuestionError::AnchorOutOfRange { .. }) => ErrorCode::AnchorOutOfRange,
        QuestionCreateError::Question(QuestionError::IllegalTransition { .. }) => ErrorCode::IllegalTransition,
        QuestionCreateError::Generation(GenerationError::ProviderUnavailable(_)) => ErrorCode::ProviderUnavailable,
        QuestionCreateError::Generation(GenerationError::MalformedGeneration(_)) => ErrorCode::MalformedGeneration,
    };
    ErrorPayload::new(code, e.to_string())
}

fn token_ok(expected: &Option<String>, given: &Option<String>) -> bool {
    match expected {
        None => true,
        Some(t) => given.as_deref() == Some(t.as_str()),
    }
}

impl Connection {
    pub fn id(&self) -> ConnId {
        self.id
    }

    fn send(&self, frame: Frame) {
        let _ = self.outbox.send(frame);
    }

    fn send_error(&self, session_id: &str, err: ErrorPayload) {
        debug!(conn = self.id, code = ?err.code, "{}", err.message);
        self.send(Frame::error(session_id, &err));
    }

    /// Handles one inbound frame.
    pub async fn handle(&mut self, frame: Frame) -> Flow {
        let sid = frame.session_id.clone();
        if frame.frame_seq <= self.last_client_seq {
            let err = ErrorPayload::new(
                ErrorCode::BadFrame,
                format!(
                    "frame_seq {} does not increase past {}",
                    frame.frame_seq, self.last_client_seq
                ),
            );
            self.send_error(&sid, err);
            return Flow::Continue;
        }
        self.last_client_seq = frame.frame_seq;
        match self.dispatch(frame).await {
            Ok(flow) => flow,
            Err(err) => {
                let close = err.code == ErrorCode::Unauthorized;
                self.send_error(&sid, err);
                if close {
                    Flow::Close
                } else {
                    Flow::Continue
                }
            }
        }
    }

    fn binding(&self, frame: &Frame) -> Result<&Binding, ErrorPayload> {
        let b = self.bound.as_ref().ok_or_else(|| {
            ErrorPayload::new(ErrorCode::RoleViolation, "connection has not sent hello")
        })?;
        if b.session_id != frame.session_id {
            return Err(ErrorPayload::new(
                ErrorCode::BadFrame,
                format!("connection is bound to session `{}`", b.session_id),
            ));
        }
        Ok(b)
    }

    fn require(&self, frame: &Frame, role: Role) -> Result<SharedSession, ErrorPayload> {
        let b = self.binding(frame)?;
        if b.role != role {
            return Err(ErrorPayload::new(
                ErrorCode::RoleViolation,
                format!("{} frames are not accepted from a {:?} connection", frame.frame_type, b.role),
            ));
        }
        Ok(b.state.clone())
    }

    async fn dispatch(&mut self, frame: Frame) -> Result<Flow, ErrorPayload> {
        match frame.frame_type {
            FrameType::Hello => self.hello(&frame).map(|_| Flow::Continue),
            FrameType::Bye => {
                self.binding(&frame)?;
                self.send(Frame::new(FrameType::Bye, &frame.session_id, &serde_json::Value::Null));
                Ok(Flow::Close)
            }
            FrameType::Edit => {
                let s = self.require(&frame, Role::Student)?;
                let p: EditPayload = frame.payload_as()?;
                lock(&s).ingest_edit(p.event)?;
                Ok(Flow::Continue)
            }
            FrameType::Chat => {
                let s = self.require(&frame, Role::Student)?;
                let p: ChatPayload = frame.payload_as()?;
                lock(&s).ingest_chat(p.event)?;
                Ok(Flow::Continue)
            }
            FrameType::TestRun => {
                let s = self.require(&frame, Role::Student)?;
                let p: TestRunPayload = frame.payload_as()?;
                lock(&s).ingest_test_run(p.event)?;
                Ok(Flow::Continue)
            }
            FrameType::AnswerSubmit => {
                let s = self.require(&frame, Role::Student)?;
                let p: AnswerSubmit = frame.payload_as()?;
                lock(&s).submit_answer(p)?;
                Ok(Flow::Continue)
            }
            FrameType::SnapshotRequest => {
                let s = self.binding(&frame)?.state.clone();
                let req: SnapshotRequest = frame.payload_as()?;
                let snap = lock(&s).snapshot(&req)?;
                self.send(Frame::new(FrameType::Snapshot, &frame.session_id, &snap));
                Ok(Flow::Continue)
            }
            FrameType::TimelineRequest => {
                let s = self.binding(&frame)?.state.clone();
                let req: TimelineRequest = frame.payload_as()?;
                let resp = lock(&s).timeline(&req)?;
                self.send(Frame::new(FrameType::Timeline, &frame.session_id, &resp));
                Ok(Flow::Continue)
            }
            FrameType::MetricsRequest => {
                let s = self.binding(&frame)?.state.clone();
                let m = lock(&s).metrics();
                self.send(Frame::new(FrameType::Metrics, &frame.session_id, &m));
                Ok(Flow::Continue)
            }
            FrameType::QuestionCreate => {
                let s = self.require(&frame, Role::Instructor)?;
                let req: QuestionCreateRequest = frame.payload_as()?;
                let (id, snap) = lock(&s).prepare_question(&req)?;
                let provider = self.hub.provider.clone();
                let sid = frame.session_id.clone();
                let created = tokio::task::spawn_blocking(move || {
                    Question::create(&id, &sid, &snap, req.anchor, req.mode, &req.constraints, &*provider, req.seed)
                })
                .await
                .map_err(|e| ErrorPayload::new(ErrorCode::ProviderUnavailable, e.to_string()))?
                .map_err(generation_error)?;
                let reply = lock(&s).store_draft(created, self.id);
                self.send(reply);
                Ok(Flow::Continue)
            }
            FrameType::QuestionDeliver => {
                let s = self.require(&frame, Role::Instructor)?;
                let req: QuestionDeliverRequest = frame.payload_as()?;
                let ack = lock(&s).deliver_question(req)?;
                self.send(ack);
                Ok(Flow::Continue)
            }
            FrameType::Snapshot
            | FrameType::Timeline
            | FrameType::Metrics
            | FrameType::AnswerDeliver
            | FrameType::Relabel
            | FrameType::Error => Err(ErrorPayload::new(
                ErrorCode::BadFrame,
                format!("{} frames are only sent by the server", frame.frame_type),
            )),
        }
    }

    fn hello(&mut self, frame: &Frame) -> Result<(), ErrorPayload> {
        if self.bound.is_some() {
            return Err(ErrorPayload::new(ErrorCode::RoleViolation, "connection already sent hello"));
        }
        let p: HelloPayload = frame.payload_as()?;
        let role = p
            .role
            .ok_or_else(|| ErrorPayload::new(ErrorCode::BadFrame, "hello needs a role"))?;
        let settings = &self.hub.settings;
        let expected = match role {
            Role::Student => &settings.student_token,
            Role::Instructor => &settings.instructor_token,
        };
        if !token_ok(expected, &p.token) {
            warn!(conn = self.id, ?role, "rejected token");
            return Err(ErrorPayload::new(ErrorCode::Unauthorized, "bad or missing token"));
        }
        let sid = &frame.session_id;
        let state = match role {
            Role::Student => {
                let (s, created) = self.hub.get_or_create(sid, &p)?;
                lock(&s).attach_student(self.id, self.outbox.clone(), created)?;
                s
            }
            Role::Instructor => {
                let s = self.hub.session(sid).ok_or_else(|| unknown_session(sid))?;
                lock(&s).attach_instructor(self.id, self.outbox.clone());
                s
            }
        };
        self.bound = Some(Binding {
            role,
            session_id: sid.clone(),
            state,
        });
        Ok(())
    }

    /// Unregisters the connection from its session.
    pub fn close(&mut self) {
        if let Some(b) = self.bound.take() {
            lock(&b.state).detach(self.id);
        }
    }
}

impl Drop for Connection {
    fn drop(&mut self) {
        self.close();
    }
}
