//! Live monitoring server, replay client and command line for codetrail.
//!
//! Students stream session-log events over a WebSocket; the server labels
//! them incrementally, journals them, fans them out to instructor
//! subscribers and answers snapshot, timeline and metrics queries computed
//! exactly as the offline pipeline would on the accepted prefix.

pub mod cli;
pub mod client;
pub mod config;
pub mod http;
pub mod hub;
pub mod journal;
pub mod protocol;
pub mod provider;
pub mod session;

pub use client::{replay_log, ClientError, FrameClient, ReplayOptions, ReplayReport};
pub use hub::{Hub, HubSettings};
pub use protocol::{ErrorCode, ErrorPayload, Frame, FrameType, Role};
