//! Publisher-side RTMP ingest.
//!
//! Covers the handshake, the chunk stream layer (all four header formats,
//! extended timestamps, Set Chunk Size), the AMF0 command choreography for
//! `connect` / `createStream` / `publish`, and FLV video tag extraction.
//! There is no play path; the server only ever answers a publisher.

pub mod amf0;
mod chunk;
mod flv;
mod handshake;
pub mod publisher;
mod server;
mod session;
mod slot;

pub use chunk::{read_message, ChunkContext, ChunkWriter, RtmpMessage, DEFAULT_CHUNK_SIZE};
pub use flv::{extract_video_frame, EncodedFrame, FrameType, VideoDemuxer};
pub use handshake::{client_handshake, perform_handshake, HandshakePhase, HandshakeState, HANDSHAKE_SIZE, RTMP_VERSION};
pub use server::{run_session, spawn_server, FrameHandoff, IngestHandler, RtmpServerConfig, ServerHandle, VecHandoff};
pub use session::{CommandOutcome, PublishRegistry, Session, SessionEvent, SessionPhase};
pub use publisher::TestPublisher;
pub use slot::{latest_slot, LatestReceiver, LatestSender};

use std::io;

/// Message type ids used by this server.
pub mod msg_type {
    pub const SET_CHUNK_SIZE: u8 = 1;
    pub const ABORT: u8 = 2;
    pub const ACKNOWLEDGEMENT: u8 = 3;
    pub const USER_CONTROL: u8 = 4;
    pub const WINDOW_ACK_SIZE: u8 = 5;
    pub const SET_PEER_BANDWIDTH: u8 = 6;
    pub const AUDIO: u8 = 8;
    pub const VIDEO: u8 = 9;
    pub const DATA_AMF3: u8 = 15;
    pub const COMMAND_AMF3: u8 = 17;
    pub const DATA_AMF0: u8 = 18;
    pub const COMMAND_AMF0: u8 = 20;
}

#[derive(Debug, thiserror::Error)]
pub enum RtmpError {
    #[error("unsupported RTMP version {0}")]
    UnsupportedVersion(u8),
    #[error("stream truncated")]
    Truncated,
    #[error("connection closed")]
    Closed,
    #[error("malformed chunk header: {0}")]
    MalformedHeader(String),
    #[error("chunk overrun on csid {csid}: declared {declared} bytes, {buffered} already buffered")]
    ChunkOverrun { csid: u32, declared: u32, buffered: usize },
    #[error("unknown command {0:?}")]
    UnknownCommand(String),
    #[error("bad session state: {0}")]
    BadState(String),
    #[error("empty video payload")]
    EmptyPayload,
    #[error("amf0: {0}")]
    Amf(String),
    #[error("publish rejected: {0}")]
    Rejected(String),
    #[error(transparent)]
    Io(io::Error),
}

impl From<io::Error> for RtmpError {
    fn from(e: io::Error) -> Self {
        if e.kind() == io::ErrorKind::UnexpectedEof {
            RtmpError::Truncated
        } else {
            RtmpError::Io(e)
        }
    }
}
