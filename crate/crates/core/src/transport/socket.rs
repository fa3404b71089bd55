//! TCP carrier. Each frame is written whole and flushed; reads pull the
//! 4-byte length prefix first, then exactly that many bytes.

use std::io::{self, BufReader, BufWriter, ErrorKind, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::thread;
use std::time::Duration;

use super::{encode, wire, Endpoint, MessageSink, MessageSource, RoundMessage, TransportError};

struct StreamSink {
    peer: String,
    writer: BufWriter<TcpStream>,
}

struct StreamSource {
    peer: String,
    reader: BufReader<TcpStream>,
}

impl MessageSink for StreamSink {
    fn send(&mut self, msg: &RoundMessage) -> Result<(), TransportError> {
        let frame = encode(msg)?;
        self.writer
            .write_all(&frame)
            .and_then(|_| self.writer.flush())
            .map_err(|source| io_error(&self.peer, source))
    }
}

fn io_error(peer: &str, source: io::Error) -> TransportError {
    match source.kind() {
        ErrorKind::UnexpectedEof | ErrorKind::ConnectionReset | ErrorKind::BrokenPipe | ErrorKind::ConnectionAborted => {
            TransportError::Closed { peer: peer.to_string() }
        }
        _ => TransportError::Io { peer: peer.to_string(), source },
    }
}

impl MessageSource for StreamSource {
    fn recv(&mut self) -> Result<RoundMessage, TransportError> {
        let mut prefix = [0u8; 4];
        self.reader.read_exact(&mut prefix).map_err(|e| io_error(&self.peer, e))?;
        let len = u32::from_le_bytes(prefix) as usize;
        if len + 4 > wire::MAX_FRAME {
            return Err(TransportError::TooLarge(len + 4));
        }
        let mut body = vec![0u8; len];
        self.reader.read_exact(&mut body).map_err(|e| io_error(&self.peer, e))?;
        wire::body(&body)
    }
}

fn endpoint(stream: TcpStream, peer: String) -> Result<Endpoint, TransportError> {
    stream.set_nodelay(true).map_err(|e| io_error(&peer, e))?;
    let read_half = stream.try_clone().map_err(|e| io_error(&peer, e))?;
    Ok(Endpoint::new(
        peer.clone(),
        Box::new(StreamSink { peer: peer.clone(), writer: BufWriter::new(stream) }),
        Box::new(StreamSource { peer, reader: BufReader::new(read_half) }),
    ))
}

/// Listening side of the TCP carrier.
pub struct SocketListener {
    listener: TcpListener,
}

impl SocketListener {
    /// Binds `addr`; port 0 picks a free port.
    pub fn bind(addr: impl ToSocketAddrs + std::fmt::Display) -> Result<Self, TransportError> {
        let name = addr.to_string();
        let listener = TcpListener::bind(addr).map_err(|e| TransportError::Io { peer: name, source: e })?;
        Ok(Self { listener })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.listener.local_addr().expect("bound listener has an address")
    }

    pub fn accept(&self) -> Result<Endpoint, TransportError> {
        let (stream, addr) = self
            .listener
            .accept()
            .map_err(|e| TransportError::Io { peer: self.local_addr().to_string(), source: e })?;
        endpoint(stream, format!("tcp:{addr}"))
    }
}

pub fn socket_connect(addr: impl ToSocketAddrs + std::fmt::Display) -> Result<Endpoint, TransportError> {
    let peer = format!("tcp:{addr}");
    let stream = TcpStream::connect(addr).map_err(|e| TransportError::Io { peer: peer.clone(), source: e })?;
    endpoint(stream, peer)
}

/// Connects, retrying refused connections while the server starts up.
pub fn socket_connect_retry(addr: &str, attempts: u32, delay: Duration) -> Result<Endpoint, TransportError> {
    let mut last = None;
    for _ in 0..attempts.max(1) {
        match socket_connect(addr) {
            Ok(ep) => return Ok(ep),
            Err(e) => {
                last = Some(e);
                thread::sleep(delay);
            }
        }
    }
    Err(last.expect("at least one attempt"))
}
