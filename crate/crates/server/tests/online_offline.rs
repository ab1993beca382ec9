mod common;

use std::time::{Duration, Instant};

use codetrail_core::forge::{forge_session, ForgeConfig};
use codetrail_core::provenance::Relabel;
use codetrail_core::session_log::{Event, SessionLog};
use codetrail_server::client::event_frame;
use codetrail_server::protocol::{EditPayload, HelloPayload, Role};
use codetrail_server::{replay_log, FrameClient, FrameType, HubSettings, ReplayOptions};
use common::*;
use serde_json::json;

async fn assert_server_matches_offline(addr: &str, log: &SessionLog) {
    let want = offline(log);
    let mut i = connect(addr, &log.session_id, Role::Instructor).await;
    for (file, snap) in &want.snapshots {
        let got = query(
            &mut i,
            FrameType::SnapshotRequest,
            json!({ "file_path": file }),
            FrameType::Snapshot,
        )
        .await;
        assert_eq!(got["text"], json(&snap.text), "{}: {file} text", log.session_id);
        assert_eq!(got["spans"], json(&snap.spans), "{}: {file} spans", log.session_id);
        let tl = query(
            &mut i,
            FrameType::TimelineRequest,
            json!({ "file_path": file }),
            FrameType::Timeline,
        )
        .await;
        assert_eq!(tl, json(&want.timelines[file]), "{}: {file} timeline", log.session_id);
    }
    let m = query(&mut i, FrameType::MetricsRequest, json!({}), FrameType::Metrics).await;
    assert_eq!(m, json(&want.metrics), "{}: metrics", log.session_id);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn fixtures_stream_to_offline_results() {
    let server = TestServer::start(HubSettings::default()).await;
    for log in session_fixtures() {
        replay_log(&server.addr, &log, &ReplayOptions::default()).await.unwrap();
        assert_server_matches_offline(&server.addr, &log).await;
    }
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn forged_sessions_stream_to_offline_results() {
    let server = TestServer::start(HubSettings::default()).await;
    for seed in 0..6 {
        let log = forge_session(&ForgeConfig::new(500 + seed, 300)).log;
        replay_log(&server.addr, &log, &ReplayOptions::default()).await.unwrap();
        assert_server_matches_offline(&server.addr, &log).await;
    }
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn longest_reported_session_streams_quickly() {
    let log = forge_session(&ForgeConfig::new(2610, 2610)).log;
    assert_eq!(log.edit_count(), 2610);
    let server = TestServer::start(HubSettings::default()).await;
    let t = Instant::now();
    let report = replay_log(&server.addr, &log, &ReplayOptions::default()).await.unwrap();
    let elapsed = t.elapsed();
    assert_eq!(report.events_sent, log.events.len());
    assert!(elapsed < Duration::from_secs(5), "took {elapsed:?}");
    assert_server_matches_offline(&server.addr, &log).await;
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn metrics_mid_stream_equal_prefix_metrics() {
    let log = fixture("sample_session.json");
    let server = TestServer::start(HubSettings::default()).await;
    let mut s = FrameClient::connect(&server.addr, &log.session_id).await.unwrap();
    s.hello(&HelloPayload {
        role: Some(Role::Student),
        token: None,
        metadata: log.metadata.clone(),
        starter: log.starter.clone(),
    })
    .await
    .unwrap();
    let checkpoints = [1, 17, 60, 61, 128, 200, log.events.len()];
    let mut sent = 0;
    for k in checkpoints {
        while sent < k {
            let (ft, p) = event_frame(&log.events[sent]);
            s.send(ft, &p).await.unwrap();
            sent += 1;
        }
        let prefix = log.prefix_records(k);
        let want = offline(&prefix);
        let got = query(&mut s, FrameType::MetricsRequest, json!({}), FrameType::Metrics).await;
        assert_eq!(got, json(&want.metrics), "prefix of {k} events");
        let snap = query(&mut s, FrameType::SnapshotRequest, json!({}), FrameType::Snapshot).await;
        let file = prefix.primary_file().unwrap();
        assert_eq!(snap["spans"], json(&want.snapshots[&file].spans), "prefix of {k} events");
    }
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn subscribers_see_identical_order_and_offline_relabels() {
    let log = forge_session(&ForgeConfig::new(77, 400)).log;
    let want = offline(&log);
    let server = TestServer::start(HubSettings::default()).await;
    let mut s = FrameClient::connect(&server.addr, &log.session_id).await.unwrap();
    s.hello(&HelloPayload {
        role: Some(Role::Student),
        token: None,
        metadata: log.metadata.clone(),
        starter: log.starter.clone(),
    })
    .await
    .unwrap();
    let mut a = connect(&server.addr, &log.session_id, Role::Instructor).await;
    let mut b = connect(&server.addr, &log.session_id, Role::Instructor).await;
    for ev in &log.events {
        let (ft, p) = event_frame(ev);
        s.send(ft, &p).await.unwrap();
    }
    s.bye().await.unwrap();
    let n_events = log.events.len();
    let mut streams = Vec::new();
    for c in [&mut a, &mut b] {
        let mut got = Vec::new();
        let mut data_frames = 0;
        while data_frames < n_events {
            let f = c.recv_timeout(Duration::from_secs(10)).await.unwrap().expect("frame");
            if matches!(f.frame_type, FrameType::Edit | FrameType::Chat | FrameType::TestRun) {
                data_frames += 1;
            }
            got.push(f);
        }
        streams.push(got);
    }
    let strip = |fs: &[codetrail_server::Frame]| -> Vec<(FrameType, serde_json::Value)> {
        fs.iter().map(|f| (f.frame_type, f.payload.clone())).collect()
    };
    assert_eq!(strip(&streams[0]), strip(&streams[1]));

    let edits: Vec<EditPayload> = streams[0]
        .iter()
        .filter(|f| f.frame_type == FrameType::Edit)
        .map(|f| f.payload_as().unwrap())
        .collect();
    let sent: Vec<_> = log
        .events
        .iter()
        .filter_map(|e| match e {
            Event::Edit(e) => Some(e.clone()),
            _ => None,
        })
        .collect();
    assert_eq!(edits.iter().map(|p| p.event.clone()).collect::<Vec<_>>(), sent);

    let live: Vec<Relabel> = streams[0]
        .iter()
        .filter(|f| f.frame_type == FrameType::Relabel)
        .map(|f| f.payload_as().unwrap())
        .collect();
    assert!(!live.is_empty());
    assert_eq!(live[..], want.labeled.relabels[..live.len()]);
    assert!(want.labeled.relabels.len() - live.len() <= 1);

    // Provisional labels plus live relabels converge on the offline labels.
    let mut view: std::collections::BTreeMap<u64, _> = edits
        .iter()
        .filter_map(|p| p.label.as_ref().map(|l| (p.event.seq, l.source)))
        .collect();
    for r in &want.labeled.relabels {
        for seq in r.start_seq..=r.end_seq {
            if let Some(src) = view.get_mut(&seq) {
                *src = r.source;
            }
        }
    }
    let offline_sources: std::collections::BTreeMap<u64, _> =
        want.labeled.labels.iter().map(|(s, l)| (*s, l.source)).collect();
    assert_eq!(view, offline_sources);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn rejected_frames_do_not_change_state() {
    let log = fixture("offset_overflow.json");
    let server = TestServer::start(HubSettings::default()).await;
    let err = replay_log(&server.addr, &log, &ReplayOptions::default()).await.unwrap_err();
    let codetrail_server::ClientError::ServerRejectedFrame(p) = err else {
        panic!("expected a rejection, got {err}");
    };
    assert_eq!(p.code, codetrail_server::ErrorCode::OffsetOutOfRange);
    assert_eq!(p.seq, Some(2));
    let accepted = log.prefix_records(1);
    assert_server_matches_offline(&server.addr, &accepted).await;
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn gap_in_seq_is_rejected_with_expected_seq() {
    let server = TestServer::start(HubSettings::default()).await;
    let mut s = FrameClient::connect(&server.addr, "gap").await.unwrap();
    s.hello(&HelloPayload {
        role: Some(Role::Student),
        starter: [("main.py".to_string(), String::new())].into(),
        ..HelloPayload::default()
    })
    .await
    .unwrap();
    for (seq, off) in [(1, 0), (3, 1)] {
        let e = codetrail_core::session_log::EditEvent::splice(
            "gap",
            seq,
            seq * 100,
            "main.py",
            off,
            "",
            "x",
            codetrail_core::session_log::InputHint::Keystroke,
        );
        s.send(FrameType::Edit, &json!({ "event": e })).await.unwrap();
    }
    let err = s.expect(FrameType::Bye).await.unwrap_err();
    let codetrail_server::ClientError::ServerRejectedFrame(p) = err else {
        panic!("expected a rejection, got {err}");
    };
    assert_eq!(p.code, codetrail_server::ErrorCode::SeqOrderViolation);
    assert_eq!(p.expected_seq, Some(2));
    assert_eq!(server.hub.list()[0].last_seq, 1);
}
