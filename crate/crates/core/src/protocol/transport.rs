//! Message transports. All of them move encoded frames, so byte counts are
//! identical whichever one carries a session.

use std::collections::VecDeque;
use std::io::{BufReader, BufWriter};
use std::net::{TcpStream, ToSocketAddrs};
use std::sync::mpsc::{self, Receiver, Sender};

use super::session::BobSession;
use super::wire::{decode_frame, encode_frame, read_frame, write_frame, ProtocolMessage};
use crate::error::{Error, Result};

/// Bytes and messages moved through one endpoint.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Traffic {
    pub bytes_sent: u64,
    pub bytes_received: u64,
    pub messages_sent: u64,
    pub messages_received: u64,
}

impl Traffic {
    fn sent(&mut self, frame: &[u8]) {
        self.bytes_sent += frame.len() as u64;
        self.messages_sent += 1;
    }

    fn received(&mut self, frame: &[u8]) {
        self.bytes_received += frame.len() as u64;
        self.messages_received += 1;
    }
}

pub trait Transport {
    fn send(&mut self, msg: &ProtocolMessage) -> Result<()>;
    fn recv(&mut self) -> Result<ProtocolMessage>;
    fn traffic(&self) -> Traffic;
}

/// One end of an in-process pair of frame queues.
pub struct ChannelTransport {
    tx: Sender<Vec<u8>>,
    rx: Receiver<Vec<u8>>,
    traffic: Traffic,
}

/// Two connected endpoints, typically one per thread.
pub fn channel_pair() -> (ChannelTransport, ChannelTransport) {
    let (a_tx, b_rx) = mpsc::channel();
    let (b_tx, a_rx) = mpsc::channel();
    (
        ChannelTransport {
            tx: a_tx,
            rx: a_rx,
            traffic: Traffic::default(),
        },
        ChannelTransport {
            tx: b_tx,
            rx: b_rx,
            traffic: Traffic::default(),
        },
    )
}

impl Transport for ChannelTransport {
    fn send(&mut self, msg: &ProtocolMessage) -> Result<()> {
        let frame = encode_frame(msg)?;
        self.traffic.sent(&frame);
        self.tx
            .send(frame)
            .map_err(|_| Error::Session("peer endpoint dropped".into()))
    }

    fn recv(&mut self) -> Result<ProtocolMessage> {
        let frame = self
            .rx
            .recv()
            .map_err(|_| Error::Session("peer endpoint dropped".into()))?;
        self.traffic.received(&frame);
        decode_frame(&frame)
    }

    fn traffic(&self) -> Traffic {
        self.traffic
    }
}

/// Length-prefixed frames over a TCP stream.
pub struct TcpTransport {
    reader: BufReader<TcpStream>,
    writer: BufWriter<TcpStream>,
    traffic: Traffic,
}

impl TcpTransport {
    pub fn connect<A: ToSocketAddrs>(addr: A) -> Result<Self> {
        Self::from_stream(TcpStream::connect(addr)?)
    }

    pub fn from_stream(stream: TcpStream) -> Result<Self> {
        stream.set_nodelay(true)?;
        let reader = BufReader::new(stream.try_clone()?);
        Ok(Self {
            reader,
            writer: BufWriter::new(stream),
            traffic: Traffic::default(),
        })
    }
}

impl Transport for TcpTransport {
    fn send(&mut self, msg: &ProtocolMessage) -> Result<()> {
        let frame = encode_frame(msg)?;
        self.traffic.sent(&frame);
        write_frame(&mut self.writer, &frame)
    }

    fn recv(&mut self) -> Result<ProtocolMessage> {
        let frame = read_frame(&mut self.reader)?;
        self.traffic.received(&frame);
        decode_frame(&frame)
    }

    fn traffic(&self) -> Traffic {
        self.traffic
    }
}

/// Synchronous in-process transport: Bob handles each frame as it is sent.
pub struct LoopbackTransport {
    bob: BobSession,
    pending: VecDeque<Vec<u8>>,
    traffic: Traffic,
}

impl LoopbackTransport {
    pub fn new(bob: BobSession) -> Self {
        Self {
            bob,
            pending: VecDeque::new(),
            traffic: Traffic::default(),
        }
    }

    pub fn bob(&self) -> &BobSession {
        &self.bob
    }

    pub fn into_bob(self) -> BobSession {
        self.bob
    }
}

impl Transport for LoopbackTransport {
    fn send(&mut self, msg: &ProtocolMessage) -> Result<()> {
        let frame = encode_frame(msg)?;
        self.traffic.sent(&frame);
        if let Some(reply) = self.bob.handle(decode_frame(&frame)?)? {
            self.pending.push_back(encode_frame(&reply)?);
        }
        Ok(())
    }

    fn recv(&mut self) -> Result<ProtocolMessage> {
        let frame = self
            .pending
            .pop_front()
            .ok_or_else(|| Error::Session("no reply pending from Bob".into()))?;
        self.traffic.received(&frame);
        decode_frame(&frame)
    }

    fn traffic(&self) -> Traffic {
        self.traffic
    }
}
