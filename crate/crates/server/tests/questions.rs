mod common;

use std::sync::Arc;
use std::time::Duration;

use codetrail_core::question::{
    is_valid_multiple_choice, Generation, GenerationError, GenerationProvider, Question, QuestionStatus,
};
use codetrail_server::client::event_frame;
use codetrail_server::protocol::{HelloPayload, QuestionPayload, Role};
use codetrail_server::{ClientError, ErrorCode, FrameClient, FrameType, HubSettings};
use common::*;
use serde_json::json;

async fn student(addr: &str, log: &codetrail_core::session_log::SessionLog) -> FrameClient {
    let mut s = FrameClient::connect(addr, &log.session_id).await.unwrap();
    s.hello(&HelloPayload {
        role: Some(Role::Student),
        token: None,
        metadata: log.metadata.clone(),
        starter: log.starter.clone(),
    })
    .await
    .unwrap();
    s
}

fn create_request(t: u64) -> serde_json::Value {
    json!({
        "anchor": { "timestamp_ms": t, "region": { "kind": "lines", "start": 11, "end": 20 } },
        "mode": "multiple_choice",
        "constraints": "Ask about error handling.",
        "seed": 42
    })
}

/// Scripted student: streams the log, drops the connection, reconnects,
/// and answers the question that was queued meanwhile.
#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn create_send_answer_round_trip_with_reconnect() {
    let log = fixture("sample_session.json");
    let server = TestServer::start(HubSettings::default()).await;
    let mut s = student(&server.addr, &log).await;
    for ev in &log.events {
        let (ft, p) = event_frame(ev);
        s.send(ft, &p).await.unwrap();
    }
    s.bye().await.unwrap();

    let mut i = connect(&server.addr, &log.session_id, Role::Instructor).await;
    let t_end = log.events.last().unwrap().timestamp_ms();
    let created = query(&mut i, FrameType::QuestionCreate, create_request(t_end), FrameType::QuestionCreate).await;
    let q: Question = serde_json::from_value(created["question"].clone()).unwrap();
    assert_eq!(q.status, QuestionStatus::Draft);
    assert!(is_valid_multiple_choice(&Generation {
        question: q.generated_text.clone(),
        expected_answer: q.expected_answer.clone(),
    }));
    assert!(q.code_context.contains("[[AI_CODE source="));

    let sent = query(
        &mut i,
        FrameType::QuestionDeliver,
        json!({ "question_id": q.id, "edits": { "expected_answer": "B" } }),
        FrameType::QuestionDeliver,
    )
    .await;
    assert_eq!(sent["question"]["status"], "sent");

    let mut s = student(&server.addr, &log).await;
    let delivered = s.expect(FrameType::QuestionDeliver).await.unwrap();
    let p: QuestionPayload = delivered.payload_as().unwrap();
    assert_eq!(p.question.id, q.id);
    assert_eq!(p.question.expected_answer, "B");
    assert_eq!(p.question.generated_text, q.generated_text);
    // Exactly once: nothing else arrives, and a second reconnect gets nothing.
    assert!(s.recv_timeout(Duration::from_millis(300)).await.unwrap().is_none());
    s.bye().await.unwrap();
    let mut s = student(&server.addr, &log).await;
    assert!(s.recv_timeout(Duration::from_millis(300)).await.unwrap().is_none());

    s.send(FrameType::AnswerSubmit, &json!({ "question_id": q.id, "answer": "B" }))
        .await
        .unwrap();
    let answer = i.expect(FrameType::AnswerDeliver).await.unwrap();
    assert_eq!(answer.payload["question"]["id"], json!(q.id));
    assert_eq!(answer.payload["question"]["student_answer"], "B");
    assert_eq!(answer.payload["question"]["status"], "answered");

    s.send(FrameType::AnswerSubmit, &json!({ "question_id": "q404", "answer": "A" }))
        .await
        .unwrap();
    match s.expect(FrameType::Bye).await {
        Err(ClientError::ServerRejectedFrame(e)) => assert_eq!(e.code, ErrorCode::UnknownQuestion),
        other => panic!("expected UnknownQuestion, got {other:?}"),
    }
    s.send(FrameType::AnswerSubmit, &json!({ "question_id": q.id, "answer": "C" }))
        .await
        .unwrap();
    match s.expect(FrameType::Bye).await {
        Err(ClientError::ServerRejectedFrame(e)) => assert_eq!(e.code, ErrorCode::IllegalTransition),
        other => panic!("expected IllegalTransition, got {other:?}"),
    }
    let stored = server
        .hub
        .with_session(&log.session_id, |st| st.question(&q.id).cloned())
        .unwrap()
        .unwrap();
    assert_eq!(stored.student_answer.as_deref(), Some("B"));
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn live_student_receives_question_immediately() {
    let log = fixture("sample_session.json");
    let server = TestServer::start(HubSettings::default()).await;
    let mut s = student(&server.addr, &log).await;
    for ev in &log.events[..40] {
        let (ft, p) = event_frame(ev);
        s.send(ft, &p).await.unwrap();
    }
    let mut i = connect(&server.addr, &log.session_id, Role::Instructor).await;
    let t = log.events[39].timestamp_ms();
    let mut req = create_request(t);
    req["anchor"]["region"] = json!({ "kind": "lines", "start": 1, "end": 3 });
    req["mode"] = json!("open_ended");
    let created = query(&mut i, FrameType::QuestionCreate, req, FrameType::QuestionCreate).await;
    let id = created["question"]["id"].as_str().unwrap().to_string();
    query(
        &mut i,
        FrameType::QuestionDeliver,
        json!({ "question_id": id }),
        FrameType::QuestionDeliver,
    )
    .await;
    let got = s.expect(FrameType::QuestionDeliver).await.unwrap();
    assert_eq!(got.payload["question"]["mode"], "open_ended");
    let again = query(
        &mut i,
        FrameType::QuestionDeliver,
        json!({ "question_id": id }),
        FrameType::Error,
    )
    .await;
    assert_eq!(again["code"], "illegal_transition");
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn anchor_outside_snapshot_is_rejected() {
    let log = fixture("sample_session.json");
    let server = TestServer::start(HubSettings::default()).await;
    let s = student(&server.addr, &log).await;
    s.bye().await.unwrap();
    let mut i = connect(&server.addr, &log.session_id, Role::Instructor).await;
    let mut req = create_request(0);
    req["anchor"]["region"] = json!({ "kind": "lines", "start": 500, "end": 501 });
    let err = query(&mut i, FrameType::QuestionCreate, req, FrameType::Error).await;
    assert_eq!(err["code"], "anchor_out_of_range");
}

struct Offline;

impl GenerationProvider for Offline {
    fn name(&self) -> &str {
        "offline"
    }
    fn generate(&self, _: &str, _: u64) -> Result<Generation, GenerationError> {
        Err(GenerationError::ProviderUnavailable("no route to provider".into()))
    }
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn provider_failure_becomes_an_error_frame() {
    let log = fixture("sample_session.json");
    let server = TestServer::start_with(HubSettings::default(), Arc::new(Offline)).await;
    let mut s = student(&server.addr, &log).await;
    for ev in &log.events[..10] {
        let (ft, p) = event_frame(ev);
        s.send(ft, &p).await.unwrap();
    }
    s.bye().await.unwrap();
    let mut i = connect(&server.addr, &log.session_id, Role::Instructor).await;
    let mut req = create_request(0);
    req["anchor"]["region"] = json!({ "kind": "lines", "start": 1, "end": 2 });
    let err = query(&mut i, FrameType::QuestionCreate, req, FrameType::Error).await;
    assert_eq!(err["code"], "provider_unavailable");
    let undelivered = query(
        &mut i,
        FrameType::QuestionDeliver,
        json!({ "question_id": "q1" }),
        FrameType::Error,
    )
    .await;
    assert_eq!(undelivered["code"], "unknown_question");
}
