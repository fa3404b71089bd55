use std::sync::mpsc::{channel, Receiver, Sender};

use super::{decode, encode, Endpoint, MessageSink, MessageSource, RoundMessage, TransportError};

struct ChannelSink {
    peer: String,
    tx: Sender<Vec<u8>>,
}

struct ChannelSource {
    peer: String,
    rx: Receiver<Vec<u8>>,
}

impl MessageSink for ChannelSink {
    fn send(&mut self, msg: &RoundMessage) -> Result<(), TransportError> {
        let frame = encode(msg)?;
        self.tx.send(frame).map_err(|_| TransportError::Closed { peer: self.peer.clone() })
    }
}

impl MessageSource for ChannelSource {
    fn recv(&mut self) -> Result<RoundMessage, TransportError> {
        let frame = self.rx.recv().map_err(|_| TransportError::Closed { peer: self.peer.clone() })?;
        decode(&frame)
    }
}

/// Connected in-process `(client, server)` endpoints. Messages travel as
/// encoded frames.
pub fn loopback_pair() -> (Endpoint, Endpoint) {
    let (to_server, from_client) = channel();
    let (to_client, from_server) = channel();
    let client = Endpoint::new(
        "loopback:server",
        Box::new(ChannelSink { peer: "loopback:server".into(), tx: to_server }),
        Box::new(ChannelSource { peer: "loopback:server".into(), rx: from_server }),
    );
    let server = Endpoint::new(
        "loopback:client",
        Box::new(ChannelSink { peer: "loopback:client".into(), tx: to_client }),
        Box::new(ChannelSource { peer: "loopback:client".into(), rx: from_client }),
    );
    (client, server)
}
