//! Message envelope and carriers between clients and the server.
//!
//! Two carriers share one interface: an in-process loopback built on
//! channels, and a TCP stream carrying length-prefixed `FVM1` frames. Both
//! pass every message through [`encode`]/[`decode`], so the bytes that reach
//! the federation logic are identical whichever carrier is used.

mod loopback;
mod socket;
mod wire;

use std::io;

use thiserror::Error;

pub use loopback::loopback_pair;
pub use socket::{socket_connect, socket_connect_retry, SocketListener};
pub use wire::{decode, encode, MessageType, Metrics, NamedTensor, RoundMessage, MAGIC, MAX_FRAME, SERVER_ID, VERSION};

#[derive(Debug, Error)]
pub enum TransportError {
    /// More bytes are needed; retry once they arrive.
    #[error("incomplete frame: have {have} bytes, need {needed} more")]
    Incomplete { have: usize, needed: usize },
    #[error("corrupt frame: {0}")]
    Corrupt(String),
    #[error("unsupported wire version {0}")]
    UnsupportedVersion(u8),
    #[error("unknown message type {0}")]
    UnknownType(u8),
    #[error("payload schema violation: {0}")]
    Schema(String),
    #[error("frame of {0} bytes exceeds the 2^31 byte limit")]
    TooLarge(usize),
    #[error("connection to {peer} closed")]
    Closed { peer: String },
    #[error("{peer}: {source}")]
    Io { peer: String, source: io::Error },
}

impl TransportError {
    /// Whether waiting for more input could resolve the error.
    pub fn is_retryable(&self) -> bool {
        matches!(self, TransportError::Incomplete { .. })
    }
}

/// Outbound half of a connection.
pub trait MessageSink: Send {
    fn send(&mut self, msg: &RoundMessage) -> Result<(), TransportError>;
}

/// Inbound half of a connection.
pub trait MessageSource: Send {
    fn recv(&mut self) -> Result<RoundMessage, TransportError>;
}

/// A bidirectional, ordered, reliable connection.
pub struct Endpoint {
    peer: String,
    sink: Box<dyn MessageSink>,
    source: Box<dyn MessageSource>,
}

impl std::fmt::Debug for Endpoint {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Endpoint").field("peer", &self.peer).finish_non_exhaustive()
    }
}

impl Endpoint {
    pub fn new(peer: impl Into<String>, sink: Box<dyn MessageSink>, source: Box<dyn MessageSource>) -> Self {
        Self { peer: peer.into(), sink, source }
    }

    pub fn peer(&self) -> &str {
        &self.peer
    }

    pub fn send(&mut self, msg: &RoundMessage) -> Result<(), TransportError> {
        self.sink.send(msg)
    }

    pub fn recv(&mut self) -> Result<RoundMessage, TransportError> {
        self.source.recv()
    }

    /// Separates the halves so reading and writing can happen on different threads.
    pub fn split(self) -> (Box<dyn MessageSink>, Box<dyn MessageSource>) {
        (self.sink, self.source)
    }
}
