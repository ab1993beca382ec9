//! WebSocket client: a thin frame connection and the log replayer built on it.

use std::time::Duration;

use codetrail_core::session_log::{Event, SessionLog};
use futures_util::{SinkExt, StreamExt};
use serde::Serialize;
use thiserror::Error;
use tokio::net::TcpStream;
use tokio::sync::mpsc::{unbounded_channel, UnboundedReceiver};
use tokio::time::Instant;
use tokio_tungstenite::tungstenite::Message;
use tokio_tungstenite::{connect_async, MaybeTlsStream, WebSocketStream};

use crate::protocol::{
    ChatPayload, EditPayload, ErrorPayload, Frame, FrameType, HelloAck, HelloPayload, Role, TestRunPayload,
};

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("cannot connect to {addr}: {reason}")]
    ConnectionFailed { addr: String, reason: String },
    #[error("server rejected frame: {0}")]
    ServerRejectedFrame(ErrorPayload),
    #[error("connection lost: {0}")]
    ConnectionLost(String),
}

/// `host:port` becomes `ws://host:port/ws`; full URLs pass through.
pub fn ws_url(server: &str) -> String {
    if server.starts_with("ws://") || server.starts_with("wss://") {
        server.to_string()
    } else {
        format!("ws://{}/ws", server.trim_end_matches('/'))
    }
}

type Socket = WebSocketStream<MaybeTlsStream<TcpStream>>;

/// One client connection. Outbound frames are numbered here; inbound frames
/// are read by a background task so errors arrive while the caller is busy
/// sending.
pub struct FrameClient {
    sink: futures_util::stream::SplitSink<Socket, Message>,
    inbox: UnboundedReceiver<Result<Frame, String>>,
    session_id: String,
    next_seq: u64,
}

impl FrameClient {
    pub async fn connect(server: &str, session_id: &str) -> Result<FrameClient, ClientError> {
        let url = ws_url(server);
        let (socket, _) = connect_async(url.as_str())
            .await
            .map_err(|e| ClientError::ConnectionFailed {
                addr: url.clone(),
                reason: e.to_string(),
            })?;
        let (sink, mut stream) = socket.split();
        let (tx, inbox) = unbounded_channel();
        tokio::spawn(async move {
            while let Some(msg) = stream.next().await {
                let item = match msg {
                    Ok(Message::Text(t)) => serde_json::from_str::<Frame>(t.as_str()).map_err(|e| e.to_string()),
                    Ok(Message::Close(_)) => break,
                    Ok(_) => continue,
                    Err(e) => Err(e.to_string()),
                };
                let stop = item.is_err();
                if tx.send(item).is_err() || stop {
                    break;
                }
            }
        });
        Ok(FrameClient {
            sink,
            inbox,
            session_id: session_id.to_string(),
            next_seq: 1,
        })
    }

    pub fn session_id(&self) -> &str {
        &self.session_id
    }

    pub async fn send<P: Serialize>(&mut self, frame_type: FrameType, payload: &P) -> Result<(), ClientError> {
        let mut f = Frame::new(frame_type, &self.session_id, payload);
        f.frame_seq = self.next_seq;
        self.next_seq += 1;
        let text = serde_json::to_string(&f).expect("frames always serialize");
        self.sink
            .send(Message::Text(text.into()))
            .await
            .map_err(|e| ClientError::ConnectionLost(e.to_string()))
    }

    /// Next inbound frame; `None` once the server closed the stream.
    pub async fn recv(&mut self) -> Result<Option<Frame>, ClientError> {
        match self.inbox.recv().await {
            Some(Ok(f)) => Ok(Some(f)),
            Some(Err(e)) => Err(ClientError::ConnectionLost(e)),
            None => Ok(None),
        }
    }

    pub async fn recv_timeout(&mut self, limit: Duration) -> Result<Option<Frame>, ClientError> {
        match tokio::time::timeout(limit, self.recv()).await {
            Ok(r) => r,
            Err(_) => Ok(None),
        }
    }

    /// A frame that has already arrived, without waiting.
    pub fn try_recv(&mut self) -> Result<Option<Frame>, ClientError> {
        match self.inbox.try_recv() {
            Ok(Ok(f)) => Ok(Some(f)),
            Ok(Err(e)) => Err(ClientError::ConnectionLost(e)),
            Err(_) => Ok(None),
        }
    }

    /// Waits for a frame of type `wanted`, failing on error frames and
    /// skipping anything else.
    pub async fn expect(&mut self, wanted: FrameType) -> Result<Frame, ClientError> {
        loop {
            match self.recv().await? {
                Some(f) if f.frame_type == wanted => return Ok(f),
                Some(f) if f.frame_type == FrameType::Error => return Err(rejected(&f)),
                Some(_) => continue,
                None => return Err(ClientError::ConnectionLost("stream closed".into())),
            }
        }
    }

    pub async fn hello(&mut self, hello: &HelloPayload) -> Result<HelloAck, ClientError> {
        self.send(FrameType::Hello, hello).await?;
        let f = self.expect(FrameType::Hello).await?;
        serde_json::from_value(f.payload).map_err(|e| ClientError::ConnectionLost(e.to_string()))
    }

    /// Sends `bye` and waits for the server's `bye`, returning every frame
    /// received on the way.
    pub async fn bye(mut self) -> Result<Vec<Frame>, ClientError> {
        self.send(FrameType::Bye, &serde_json::Value::Null).await?;
        let mut seen = Vec::new();
        loop {
            match self.recv().await? {
                Some(f) if f.frame_type == FrameType::Bye => return Ok(seen),
                Some(f) => seen.push(f),
                None => return Err(ClientError::ConnectionLost("closed before bye".into())),
            }
        }
    }
}

fn rejected(f: &Frame) -> ClientError {
    match serde_json::from_value::<ErrorPayload>(f.payload.clone()) {
        Ok(e) => ClientError::ServerRejectedFrame(e),
        Err(e) => ClientError::ConnectionLost(format!("unreadable error frame: {e}")),
    }
}

#[derive(Debug, Clone, Default)]
pub struct ReplayOptions {
    /// Time compression factor; 0 sends as fast as possible.
    pub speed: f64,
    pub token: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReplayReport {
    pub events_sent: usize,
    pub last_seq: u64,
    pub elapsed: Duration,
}

pub fn event_frame(ev: &Event) -> (FrameType, serde_json::Value) {
    let (ft, v) = match ev {
        Event::Edit(e) => (
            FrameType::Edit,
            serde_json::to_value(EditPayload {
                event: e.clone(),
                label: None,
            }),
        ),
        Event::Chat(c) => (FrameType::Chat, serde_json::to_value(ChatPayload { event: c.clone() })),
        Event::TestRun(t) => (FrameType::TestRun, serde_json::to_value(TestRunPayload { event: t.clone() })),
    };
    (ft, v.expect("payloads always serialize"))
}

fn check_inbox(client: &mut FrameClient) -> Result<(), ClientError> {
    while let Some(f) = client.try_recv()? {
        if f.frame_type == FrameType::Error {
            return Err(rejected(&f));
        }
    }
    Ok(())
}

/// Streams `log` to the server as its student, keeping inter-event gaps
/// scaled by `1 / speed`, and waits until the server has processed
/// everything. The first error frame aborts the replay.
pub async fn replay_log(server: &str, log: &SessionLog, opts: &ReplayOptions) -> Result<ReplayReport, ClientError> {
    let mut client = FrameClient::connect(server, &log.session_id).await?;
    client
        .hello(&HelloPayload {
            role: Some(Role::Student),
            token: opts.token.clone(),
            metadata: log.metadata.clone(),
            starter: log.starter.clone(),
        })
        .await?;
    let start = Instant::now();
    let base = log.events.first().map_or(0, Event::timestamp_ms);
    let mut last_seq = 0;
    for ev in &log.events {
        if opts.speed > 0.0 {
            let offset_ms = (ev.timestamp_ms() - base) as f64 / opts.speed;
            tokio::time::sleep_until(start + Duration::from_secs_f64(offset_ms / 1000.0)).await;
        }
        let (ft, payload) = event_frame(ev);
        client.send(ft, &payload).await?;
        if let Event::Edit(e) = ev {
            last_seq = e.seq;
        }
        check_inbox(&mut client)?;
    }
    let trailing = client.bye().await?;
    if let Some(f) = trailing.iter().find(|f| f.frame_type == FrameType::Error) {
        return Err(rejected(f));
    }
    Ok(ReplayReport {
        events_sent: log.events.len(),
        last_seq,
        elapsed: start.elapsed(),
    })
}
