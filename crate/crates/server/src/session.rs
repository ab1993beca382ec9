//! Live state of one session. All methods are synchronous; the hub wraps
//! each state in its own mutex so frames for a session apply one at a time
//! while sessions proceed in parallel.

use std::collections::{BTreeMap, VecDeque};

use codetrail_core::metrics::{compute_metrics, SegmentationRules, SessionMetrics};
use codetrail_core::provenance::{LabeledSession, Labeler, ProvenanceConfig};
use codetrail_core::question::{Question, QuestionStatus};
use codetrail_core::replay::{snapshot_at_labeled, DocumentSnapshot, ReplayError};
use codetrail_core::session_log::{ChatEvent, EditEvent, Event, SessionLog, TestRunEvent};
use codetrail_core::timeline::{build_timeline, empty_model, TimelineContext, TimelineError};
use tokio::sync::mpsc::UnboundedSender;

use crate::journal::{Journal, JournalError};
use crate::protocol::{
    AnswerSubmit, ChatPayload, EditLabel, EditPayload, ErrorCode, ErrorPayload, Frame, FrameType, HelloAck,
    QuestionCreateRequest, QuestionDeliverRequest, QuestionPayload, Role, SnapshotRequest, TestRunPayload,
    TimelineRequest, TimelineResponse, PROTOCOL_VERSION,
};

pub type ConnId = u64;
pub type Outbox = UnboundedSender<Frame>;

#[derive(Debug, Clone)]
struct QuestionEntry {
    question: Question,
    origin: ConnId,
    delivered: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct SessionSummary {
    pub session_id: String,
    pub task_id: String,
    pub condition: String,
    pub last_seq: u64,
    pub last_timestamp_ms: u64,
    pub event_count: usize,
    pub student_connected: bool,
    pub instructor_count: usize,
}

pub struct SessionState {
    log: SessionLog,
    labeler: Labeler,
    rules: SegmentationRules,
    last_seq: u64,
    last_ts: Option<u64>,
    student: Option<(ConnId, Outbox)>,
    instructors: BTreeMap<ConnId, Outbox>,
    questions: BTreeMap<String, QuestionEntry>,
    next_question: u64,
    undelivered: VecDeque<String>,
    journal: Option<Journal>,
}

fn replay_error(e: ReplayError, seq: u64) -> ErrorPayload {
    let code = match e {
        ReplayError::OffsetOutOfRange { .. } => ErrorCode::OffsetOutOfRange,
        ReplayError::RemovedTextMismatch { .. } => ErrorCode::RemovedTextMismatch,
        ReplayError::UnknownFile(_) => ErrorCode::UnknownFile,
    };
    ErrorPayload::new(code, e.to_string()).at_seq(seq)
}

fn journal_error(e: JournalError) -> ErrorPayload {
    ErrorPayload::new(ErrorCode::JournalWrite, e.to_string())
}

impl SessionState {
    /// Rebuilds state by replaying `log`, which must already be valid.
    pub fn restore(
        log: SessionLog,
        cfg: ProvenanceConfig,
        rules: SegmentationRules,
        journal: Option<Journal>,
    ) -> Result<SessionState, ReplayError> {
        let mut labeler = Labeler::new(&log.starter, cfg);
        let mut last_seq = 0;
        for ev in &log.events {
            match ev {
                Event::Edit(e) => {
                    labeler.push_edit(e)?;
                    last_seq = e.seq;
                }
                Event::Chat(c) => labeler.push_chat(c),
                Event::TestRun(_) => {}
            }
        }
        let last_ts = log.events.last().map(Event::timestamp_ms);
        Ok(SessionState {
            log,
            labeler,
            rules,
            last_seq,
            last_ts,
            student: None,
            instructors: BTreeMap::new(),
            questions: BTreeMap::new(),
            next_question: 1,
            undelivered: VecDeque::new(),
            journal,
        })
    }

    pub fn session_id(&self) -> &str {
        &self.log.session_id
    }

    pub fn log(&self) -> &SessionLog {
        &self.log
    }

    pub fn last_seq(&self) -> u64 {
        self.last_seq
    }

    pub fn summary(&self) -> SessionSummary {
        SessionSummary {
            session_id: self.log.session_id.clone(),
            task_id: self.log.metadata.task_id.clone(),
            condition: self.log.metadata.condition.clone(),
            last_seq: self.last_seq,
            last_timestamp_ms: self.last_ts.unwrap_or(0),
            event_count: self.log.events.len(),
            student_connected: self.student.is_some(),
            instructor_count: self.instructors.len(),
        }
    }

    fn frame<P: serde::Serialize>(&self, ft: FrameType, payload: &P) -> Frame {
        Frame::new(ft, &self.log.session_id, payload)
    }

    fn broadcast(&mut self, frame: Frame) {
        self.instructors.retain(|_, tx| tx.send(frame.clone()).is_ok());
    }

    fn send_student(&mut self, frame: Frame) -> bool {
        match &self.student {
            Some((_, tx)) if tx.send(frame).is_ok() => true,
            Some(_) => {
                self.student = None;
                false
            }
            None => false,
        }
    }

    pub fn attach_student(&mut self, conn: ConnId, tx: Outbox, created: bool) -> Result<(), ErrorPayload> {
        if let Some((other, old)) = &self.student {
            if *other != conn && !old.is_closed() {
                return Err(ErrorPayload::new(
                    ErrorCode::RoleViolation,
                    format!("session `{}` already has a student stream", self.log.session_id),
                ));
            }
        }
        let ack = HelloAck {
            protocol_version: PROTOCOL_VERSION,
            role: Role::Student,
            last_seq: self.last_seq,
            created,
        };
        let _ = tx.send(self.frame(FrameType::Hello, &ack));
        self.student = Some((conn, tx));
        while let Some(id) = self.undelivered.pop_front() {
            let q = self.questions[&id].question.clone();
            if !self.send_student(self.frame(FrameType::QuestionDeliver, &QuestionPayload { question: q })) {
                self.undelivered.push_front(id);
                break;
            }
            self.questions.get_mut(&id).expect("queued ids exist").delivered = true;
        }
        Ok(())
    }

    pub fn attach_instructor(&mut self, conn: ConnId, tx: Outbox) {
        let ack = HelloAck {
            protocol_version: PROTOCOL_VERSION,
            role: Role::Instructor,
            last_seq: self.last_seq,
            created: false,
        };
        if tx.send(self.frame(FrameType::Hello, &ack)).is_ok() {
            self.instructors.insert(conn, tx);
        }
    }

    pub fn detach(&mut self, conn: ConnId) {
        if self.student.as_ref().is_some_and(|(c, _)| *c == conn) {
            self.student = None;
        }
        self.instructors.remove(&conn);
    }

    fn check_time(&self, t: u64) -> Result<(), ErrorPayload> {
        match self.last_ts {
            Some(prev) if t < prev => Err(ErrorPayload::new(
                ErrorCode::TimestampRegression,
                format!("timestamp {t} ms precedes the last accepted {prev} ms"),
            )),
            _ => Ok(()),
        }
    }

    fn check_owner(&self, event_session: &str) -> Result<(), ErrorPayload> {
        if event_session != self.log.session_id {
            return Err(ErrorPayload::new(
                ErrorCode::BadFrame,
                format!("event belongs to `{event_session}`, stream is `{}`", self.log.session_id),
            ));
        }
        Ok(())
    }

    fn journal(&mut self, ev: &Event) -> Result<(), ErrorPayload> {
        match &mut self.journal {
            Some(j) => j.append(ev).map_err(journal_error),
            None => Ok(()),
        }
    }

    /// Validates and applies one edit. Nothing changes on error.
    pub fn ingest_edit(&mut self, e: EditEvent) -> Result<(), ErrorPayload> {
        self.check_owner(&e.session_id)?;
        let expected = self.last_seq + 1;
        if e.seq != expected {
            let mut err = ErrorPayload::new(
                ErrorCode::SeqOrderViolation,
                format!("expected seq {expected}, got {}", e.seq),
            )
            .at_seq(e.seq);
            err.expected_seq = Some(expected);
            return Err(err);
        }
        self.check_time(e.timestamp_ms).map_err(|err| err.at_seq(e.seq))?;
        e.check_shape().map_err(|(field, reason)| {
            ErrorPayload::new(ErrorCode::BadFrame, format!("{field}: {reason}")).at_seq(e.seq)
        })?;
        self.labeler.check(&e).map_err(|err| replay_error(err, e.seq))?;
        let ev = Event::Edit(e);
        self.journal(&ev)?;
        let Event::Edit(e) = ev else { unreachable!() };
        let outcome = self.labeler.push_edit(&e).expect("edit was checked");
        self.last_seq = e.seq;
        self.last_ts = Some(e.timestamp_ms);
        if let Some(r) = outcome.relabel {
            let f = self.frame(FrameType::Relabel, &r);
            self.broadcast(f);
        }
        let payload = EditPayload {
            label: outcome.label.map(|l| EditLabel {
                source: l.source,
                chat_ref: l.chat_ref,
                provisional: outcome.provisional,
            }),
            event: e.clone(),
        };
        let f = self.frame(FrameType::Edit, &payload);
        self.broadcast(f);
        self.log.events.push(Event::Edit(e));
        Ok(())
    }

    pub fn ingest_chat(&mut self, c: ChatEvent) -> Result<(), ErrorPayload> {
        self.check_owner(&c.session_id)?;
        self.check_time(c.timestamp_ms)?;
        c.check_shape()
            .map_err(|(field, reason)| ErrorPayload::new(ErrorCode::BadFrame, format!("{field}: {reason}")))?;
        let ev = Event::Chat(c);
        self.journal(&ev)?;
        let Event::Chat(c) = ev else { unreachable!() };
        self.labeler.push_chat(&c);
        self.last_ts = Some(c.timestamp_ms);
        let f = self.frame(FrameType::Chat, &ChatPayload { event: c.clone() });
        self.broadcast(f);
        self.log.events.push(Event::Chat(c));
        Ok(())
    }

    pub fn ingest_test_run(&mut self, t: TestRunEvent) -> Result<(), ErrorPayload> {
        self.check_owner(&t.session_id)?;
        self.check_time(t.timestamp_ms)?;
        let ev = Event::TestRun(t);
        self.journal(&ev)?;
        let Event::TestRun(t) = ev else { unreachable!() };
        self.last_ts = Some(t.timestamp_ms);
        let f = self.frame(FrameType::TestRun, &TestRunPayload { event: t.clone() });
        self.broadcast(f);
        self.log.events.push(Event::TestRun(t));
        Ok(())
    }

    /// Labels of the accepted prefix as the offline pipeline would produce
    /// them, with any open run closed on a copy.
    pub fn labeled(&self) -> LabeledSession {
        self.labeler.clone().into_labeled(&self.log.session_id)
    }

    fn file_or_primary(&self, file: Option<&str>) -> Result<String, ErrorPayload> {
        let path = match file {
            Some(f) => f.to_string(),
            None => self.log.primary_file().ok_or_else(|| {
                ErrorPayload::new(ErrorCode::UnknownFile, "session has no files yet")
            })?,
        };
        if !self.log.has_file(&path) {
            return Err(ErrorPayload::new(ErrorCode::UnknownFile, format!("unknown file `{path}`")));
        }
        Ok(path)
    }

    fn now(&self) -> u64 {
        self.last_ts.unwrap_or(0)
    }

    /// Snapshot at `t`, clamped to the latest accepted timestamp.
    pub fn snapshot(&self, req: &SnapshotRequest) -> Result<DocumentSnapshot, ErrorPayload> {
        let path = self.file_or_primary(req.file_path.as_deref())?;
        let t = req.t.unwrap_or(u64::MAX).min(self.now());
        let labeled = self.labeled();
        snapshot_at_labeled(&self.log, &path, t, &labeled.labels).map_err(|e| replay_error(e, 0))
    }

    pub fn timeline(&self, req: &TimelineRequest) -> Result<TimelineResponse, ErrorPayload> {
        let labeled = self.labeled();
        let viewport = req.viewport.unwrap_or_default();
        if req.zoom.is_none() && req.pick.is_none() {
            let model = match &req.file_path {
                Some(_) => {
                    let path = self.file_or_primary(req.file_path.as_deref())?;
                    build_timeline(&self.log, &labeled, Some(&path), &viewport)
                }
                None if self.log.file_paths().is_empty() => Ok(empty_model(&self.log)),
                None => build_timeline(&self.log, &labeled, None, &viewport),
            }
            .map_err(|e| replay_error(e, 0))?;
            return Ok(TimelineResponse::Model(Box::new(model)));
        }
        let path = self.file_or_primary(req.file_path.as_deref())?;
        let ctx = TimelineContext::new(&self.log, &labeled, &path).map_err(|e| replay_error(e, 0))?;
        if let Some(z) = req.zoom {
            let excerpt = z.excerpt_len.unwrap_or(viewport.excerpt_len);
            return Ok(TimelineResponse::Zoom {
                zoom: ctx.zoom(z.t0, z.t1, excerpt),
            });
        }
        let p = req.pick.expect("pick is set when zoom is not");
        match ctx.hit_test(p.t, p.line, p.radius.unwrap_or_default()) {
            Ok(pick) => Ok(TimelineResponse::Pick { pick }),
            Err(TimelineError::OutOfExtent { t, line }) => Err(ErrorPayload::new(
                ErrorCode::OutOfExtent,
                format!("({t} ms, line {line}) lies outside the timeline extent"),
            )),
            Err(TimelineError::Replay(e)) => Err(replay_error(e, 0)),
        }
    }

    pub fn metrics(&self) -> SessionMetrics {
        compute_metrics(&self.log, &self.labeled(), &self.rules)
    }

    /// Reserves a question id and returns the snapshot the question is
    /// generated from. Generation itself runs outside the session lock.
    pub fn prepare_question(&mut self, req: &QuestionCreateRequest) -> Result<(String, DocumentSnapshot), ErrorPayload> {
        let snap = self.snapshot(&SnapshotRequest {
            file_path: req.file_path.clone(),
            t: Some(req.anchor.timestamp_ms),
        })?;
        let id = format!("q{}", self.next_question);
        self.next_question += 1;
        Ok((id, snap))
    }

    pub fn store_draft(&mut self, question: Question, origin: ConnId) -> Frame {
        let f = self.frame(FrameType::QuestionCreate, &QuestionPayload {
            question: question.clone(),
        });
        self.questions.insert(
            question.id.clone(),
            QuestionEntry {
                question,
                origin,
                delivered: false,
            },
        );
        f
    }

    fn unknown_question(id: &str) -> ErrorPayload {
        ErrorPayload::new(ErrorCode::UnknownQuestion, format!("no question `{id}`"))
    }

    /// Marks a draft sent and delivers it, or queues it until the student
    /// reconnects. Returns the acknowledgement for the instructor.
    pub fn deliver_question(&mut self, req: QuestionDeliverRequest) -> Result<Frame, ErrorPayload> {
        let entry = self
            .questions
            .get(&req.question_id)
            .ok_or_else(|| Self::unknown_question(&req.question_id))?;
        let sent = entry
            .question
            .clone()
            .edit_and_send(req.edits)
            .map_err(|e| ErrorPayload::new(ErrorCode::IllegalTransition, e.to_string()))?;
        let payload = QuestionPayload { question: sent.clone() };
        let delivered = self.send_student(self.frame(FrameType::QuestionDeliver, &payload));
        let entry = self.questions.get_mut(&req.question_id).expect("looked up above");
        entry.question = sent;
        entry.delivered = delivered;
        if !delivered {
            self.undelivered.push_back(req.question_id);
        }
        Ok(self.frame(FrameType::QuestionDeliver, &payload))
    }

    /// Records the student's answer and forwards it to the instructor who
    /// created the question, or to every instructor if that one left.
    pub fn submit_answer(&mut self, req: AnswerSubmit) -> Result<(), ErrorPayload> {
        let entry = self
            .questions
            .get_mut(&req.question_id)
            .filter(|e| e.question.status != QuestionStatus::Draft)
            .ok_or_else(|| Self::unknown_question(&req.question_id))?;
        entry
            .question
            .record_answer(&req.answer)
            .map_err(|e| ErrorPayload::new(ErrorCode::IllegalTransition, e.to_string()))?;
        let origin = entry.origin;
        let payload = QuestionPayload {
            question: entry.question.clone(),
        };
        let f = self.frame(FrameType::AnswerDeliver, &payload);
        match self.instructors.get(&origin) {
            Some(tx) if tx.send(f.clone()).is_ok() => {}
            _ => self.broadcast(f),
        }
        Ok(())
    }

    pub fn question(&self, id: &str) -> Option<&Question> {
        self.questions.get(id).map(|e| &e.question)
    }
}
