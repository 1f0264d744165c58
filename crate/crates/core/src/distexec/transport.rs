//! Byte-frame transports between the two nodes.

use std::collections::VecDeque;
use std::io::{ErrorKind, Read, Write};
use std::net::{Ipv4Addr, TcpListener, TcpStream};
use std::sync::mpsc::{channel, Receiver, Sender, TryRecvError};

use super::codec::frame_len;
use crate::error::{Error, Result};

/// One end of a bidirectional frame link.
pub trait Endpoint: Send {
    fn send(&mut self, frame: &[u8]) -> Result<()>;
    /// Next frame if one is available without waiting.
    fn try_recv(&mut self) -> Result<Option<Vec<u8>>>;
    fn recv(&mut self) -> Result<Vec<u8>>;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TransportKind {
    #[default]
    InProcess,
    /// TCP on 127.0.0.1; port 0 picks a free port.
    Loopback { port: u16 },
}

/// In-process channel endpoint.
pub struct ChannelEndpoint {
    tx: Sender<Vec<u8>>,
    rx: Receiver<Vec<u8>>,
}

pub fn channel_pair() -> (ChannelEndpoint, ChannelEndpoint) {
    let (ta, rb) = channel();
    let (tb, ra) = channel();
    (ChannelEndpoint { tx: ta, rx: ra }, ChannelEndpoint { tx: tb, rx: rb })
}

impl Endpoint for ChannelEndpoint {
    fn send(&mut self, frame: &[u8]) -> Result<()> {
        self.tx.send(frame.to_vec()).map_err(|_| Error::Protocol("peer hung up".into()))
    }

    fn try_recv(&mut self) -> Result<Option<Vec<u8>>> {
        match self.rx.try_recv() {
            Ok(f) => Ok(Some(f)),
            Err(TryRecvError::Empty) => Ok(None),
            Err(TryRecvError::Disconnected) => Err(Error::Protocol("peer hung up".into())),
        }
    }

    fn recv(&mut self) -> Result<Vec<u8>> {
        self.rx.recv().map_err(|_| Error::Protocol("peer hung up".into()))
    }
}

/// TCP endpoint splitting the byte stream into length-prefixed frames.
pub struct TcpEndpoint {
    stream: TcpStream,
    buf: Vec<u8>,
}

impl TcpEndpoint {
    fn new(stream: TcpStream) -> Result<Self> {
        stream.set_nodelay(true)?;
        Ok(Self { stream, buf: Vec::new() })
    }

    fn take_frame(&mut self) -> Option<Vec<u8>> {
        let n = frame_len(&self.buf)?;
        (self.buf.len() >= n).then(|| self.buf.drain(..n).collect())
    }

    fn fill(&mut self, blocking: bool) -> Result<bool> {
        self.stream.set_nonblocking(!blocking)?;
        let mut chunk = [0u8; 4096];
        match self.stream.read(&mut chunk) {
            Ok(0) => Err(Error::Protocol("peer closed the connection".into())),
            Ok(n) => {
                self.buf.extend_from_slice(&chunk[..n]);
                Ok(true)
            }
            Err(e) if e.kind() == ErrorKind::WouldBlock => Ok(false),
            Err(e) => Err(e.into()),
        }
    }
}

/// Connected loopback pair; the first endpoint is the listening side.
pub fn loopback_pair(port: u16) -> Result<(TcpEndpoint, TcpEndpoint)> {
    let listener = TcpListener::bind((Ipv4Addr::LOCALHOST, port))?;
    let addr = listener.local_addr()?;
    let client = TcpStream::connect(addr)?;
    let (server, _) = listener.accept()?;
    Ok((TcpEndpoint::new(server)?, TcpEndpoint::new(client)?))
}

impl Endpoint for TcpEndpoint {
    fn send(&mut self, frame: &[u8]) -> Result<()> {
        self.stream.set_nonblocking(false)?;
        self.stream.write_all(frame)?;
        Ok(())
    }

    fn try_recv(&mut self) -> Result<Option<Vec<u8>>> {
        loop {
            if let Some(f) = self.take_frame() {
                return Ok(Some(f));
            }
            if !self.fill(false)? {
                return Ok(None);
            }
        }
    }

    fn recv(&mut self) -> Result<Vec<u8>> {
        loop {
            if let Some(f) = self.take_frame() {
                return Ok(f);
            }
            self.fill(true)?;
        }
    }
}

/// Pre-recorded inbox; sent frames are collected for inspection.
#[derive(Default)]
pub struct ReplayEndpoint {
    pub inbox: VecDeque<Vec<u8>>,
    pub sent: Vec<Vec<u8>>,
}

impl Endpoint for ReplayEndpoint {
    fn send(&mut self, frame: &[u8]) -> Result<()> {
        self.sent.push(frame.to_vec());
        Ok(())
    }

    fn try_recv(&mut self) -> Result<Option<Vec<u8>>> {
        Ok(self.inbox.pop_front())
    }

    fn recv(&mut self) -> Result<Vec<u8>> {
        self.inbox.pop_front().ok_or_else(|| Error::Protocol("replay transcript exhausted".into()))
    }
}
