#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::Arc;

use codetrail_core::metrics::{compute_metrics, SegmentationRules, SessionMetrics};
use codetrail_core::provenance::{label_session, LabeledSession, ProvenanceConfig};
use codetrail_core::question::{GenerationProvider, StubProvider};
use codetrail_core::replay::DocumentSnapshot;
use codetrail_core::session_log::{parse_session, SessionLog};
use codetrail_core::timeline::{build_timeline, TimelineModel, ViewportHints};
use codetrail_server::protocol::{HelloPayload, Role};
use codetrail_server::{FrameClient, FrameType, Hub, HubSettings};
use serde_json::Value;
use tokio::net::TcpListener;
use tokio::task::JoinHandle;

pub fn fixture_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../core/tests/fixtures")
        .join(name)
}

pub fn fixture(name: &str) -> SessionLog {
    let bytes = std::fs::read(fixture_path(name)).expect("fixture exists");
    parse_session(&bytes).expect("fixture parses")
}

pub fn session_fixtures() -> Vec<SessionLog> {
    ["sample_session.json", "two_files.json"].iter().map(|n| fixture(n)).collect()
}

pub fn schema_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../schemas").join(name)
}

pub struct TestServer {
    pub addr: String,
    pub hub: Arc<Hub>,
    task: JoinHandle<()>,
}

impl TestServer {
    pub async fn start(settings: HubSettings) -> TestServer {
        Self::start_with(settings, Arc::new(StubProvider)).await
    }

    pub async fn start_with(settings: HubSettings, provider: Arc<dyn GenerationProvider>) -> TestServer {
        let hub = Arc::new(Hub::open(settings, provider).expect("hub opens"));
        let listener = TcpListener::bind("127.0.0.1:0").await.unwrap();
        let addr = listener.local_addr().unwrap().to_string();
        let h = hub.clone();
        let task = tokio::spawn(async move {
            codetrail_server::http::serve(listener, h, std::future::pending())
                .await
                .unwrap();
        });
        TestServer { addr, hub, task }
    }

    /// Stops accepting connections, as a crash would.
    pub fn kill(self) {
        self.task.abort();
    }
}

/// Everything the offline pipeline says about a log.
pub struct Offline {
    pub labeled: LabeledSession,
    pub metrics: SessionMetrics,
    pub timelines: BTreeMap<String, TimelineModel>,
    pub snapshots: BTreeMap<String, DocumentSnapshot>,
}

pub fn offline(log: &SessionLog) -> Offline {
    let labeled = label_session(log, &ProvenanceConfig::default()).expect("log replays");
    let metrics = compute_metrics(log, &labeled, &SegmentationRules::default());
    let mut timelines = BTreeMap::new();
    for f in log.file_paths() {
        let m = build_timeline(log, &labeled, Some(&f), &ViewportHints::default()).unwrap();
        timelines.insert(f, m);
    }
    let snapshots = labeled.documents.clone();
    Offline {
        labeled,
        metrics,
        timelines,
        snapshots,
    }
}

pub async fn connect(addr: &str, session_id: &str, role: Role) -> FrameClient {
    let mut c = FrameClient::connect(addr, session_id).await.expect("server reachable");
    c.hello(&HelloPayload {
        role: Some(role),
        ..HelloPayload::default()
    })
    .await
    .expect("hello accepted");
    c
}

/// Sends a query frame and returns the payload of the matching reply.
pub async fn query(c: &mut FrameClient, request: FrameType, payload: Value, reply: FrameType) -> Value {
    c.send(request, &payload).await.unwrap();
    c.expect(reply).await.unwrap().payload
}

pub fn json<T: serde::Serialize>(v: &T) -> Value {
    serde_json::to_value(v).unwrap()
}
