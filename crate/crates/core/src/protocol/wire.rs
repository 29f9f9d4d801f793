//! Binary wire format.
//!
//! Every message is framed as `[length: u32][tag: u8][body]`, where `length`
//! counts the tag and body. Integers are little-endian, reals are
//! little-endian IEEE-754 doubles.
//!
//! | tag  | message     | body |
//! |------|-------------|------|
//! | 0x01 | Hello       | version u16, n u32, f u32, method u8, epsilon f64, matrix_seed u64, fs_matrix_seed u64, rp_seed u64 |
//! | 0x02 | HelloAck    | bob_doc_count u32 |
//! | 0x03 | DfVector    | n u32, counts u32\[n\] |
//! | 0x10 | FilterQuery | query_id u32, index_count u32, indexes u32\[index_count\], z f64\[f\] |
//! | 0x11 | FilterReply | query_id u32, m u32, m × {s f64, norm_v2 f64, t f64\[⌈f/2⌉\]} |
//! | 0x20 | FullQuery   | query_id u32, survivor_count u32, survivor_ids u32\[..\], z f64\[n\] |
//! | 0x21 | FullReply   | query_id u32, k u32, k × {doc_id u32, s f64, t f64\[⌈n/2⌉\]} |
//! | 0xFF | Bye         | |
//!
//! Trailing vectors (`z`, `t`) carry no explicit length; it follows from the
//! frame length.

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::select::SelectionMethod;

pub const PROTOCOL_VERSION: u16 = 1;
/// Frames larger than this are rejected before allocation.
pub const MAX_FRAME_LEN: usize = 1 << 30;
pub const FRAME_HEADER_LEN: usize = 4;

pub const TAG_HELLO: u8 = 0x01;
pub const TAG_HELLO_ACK: u8 = 0x02;
pub const TAG_DF_VECTOR: u8 = 0x03;
pub const TAG_FILTER_QUERY: u8 = 0x10;
pub const TAG_FILTER_REPLY: u8 = 0x11;
pub const TAG_FULL_QUERY: u8 = 0x20;
pub const TAG_FULL_REPLY: u8 = 0x21;
pub const TAG_BYE: u8 = 0xFF;

#[derive(Debug, Clone, PartialEq)]
pub struct Hello {
    pub version: u16,
    pub n: u32,
    pub f: u32,
    pub method: SelectionMethod,
    pub epsilon: f64,
    pub matrix_seed: u64,
    pub fs_matrix_seed: u64,
    pub rp_seed: u64,
}

/// One document's answer in the filtering step.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterEntry {
    pub s: f64,
    pub norm_v2: f64,
    pub t: Vec<f64>,
}

/// One surviving document's answer in the refinement step.
#[derive(Debug, Clone, PartialEq)]
pub struct FullEntry {
    pub doc_id: u32,
    pub s: f64,
    pub t: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ProtocolMessage {
    Hello(Hello),
    HelloAck {
        bob_doc_count: u32,
    },
    DfVector {
        counts: Vec<u32>,
    },
    FilterQuery {
        query_id: u32,
        /// Empty when the index set is fixed for the session.
        indexes: Vec<u32>,
        z: Vec<f64>,
    },
    FilterReply {
        query_id: u32,
        entries: Vec<FilterEntry>,
    },
    FullQuery {
        query_id: u32,
        survivor_ids: Vec<u32>,
        z: Vec<f64>,
    },
    FullReply {
        query_id: u32,
        entries: Vec<FullEntry>,
    },
    Bye,
}

impl ProtocolMessage {
    pub fn tag(&self) -> u8 {
        match self {
            ProtocolMessage::Hello(_) => TAG_HELLO,
            ProtocolMessage::HelloAck { .. } => TAG_HELLO_ACK,
            ProtocolMessage::DfVector { .. } => TAG_DF_VECTOR,
            ProtocolMessage::FilterQuery { .. } => TAG_FILTER_QUERY,
            ProtocolMessage::FilterReply { .. } => TAG_FILTER_REPLY,
            ProtocolMessage::FullQuery { .. } => TAG_FULL_QUERY,
            ProtocolMessage::FullReply { .. } => TAG_FULL_REPLY,
            ProtocolMessage::Bye => TAG_BYE,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ProtocolMessage::Hello(_) => "Hello",
            ProtocolMessage::HelloAck { .. } => "HelloAck",
            ProtocolMessage::DfVector { .. } => "DfVector",
            ProtocolMessage::FilterQuery { .. } => "FilterQuery",
            ProtocolMessage::FilterReply { .. } => "FilterReply",
            ProtocolMessage::FullQuery { .. } => "FullQuery",
            ProtocolMessage::FullReply { .. } => "FullReply",
            ProtocolMessage::Bye => "Bye",
        }
    }
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, x: u8) {
        self.0.push(x);
    }
    fn u16(&mut self, x: u16) {
        self.0.extend_from_slice(&x.to_le_bytes());
    }
    fn u32(&mut self, x: u32) {
        self.0.extend_from_slice(&x.to_le_bytes());
    }
    fn u64(&mut self, x: u64) {
        self.0.extend_from_slice(&x.to_le_bytes());
    }
    fn f64(&mut self, x: f64) {
        self.0.extend_from_slice(&x.to_le_bytes());
    }
    fn len(&mut self, n: usize) -> Result<()> {
        let n = u32::try_from(n).map_err(|_| Error::Frame(format!("count {n} exceeds u32")))?;
        self.u32(n);
        Ok(())
    }
    fn u32s(&mut self, xs: &[u32]) {
        for &x in xs {
            self.u32(x);
        }
    }
    fn f64s(&mut self, xs: &[f64]) {
        for &x in xs {
            self.f64(x);
        }
    }
}

/// Serializes a message payload (tag and body, no length prefix).
pub fn encode_message(msg: &ProtocolMessage) -> Result<Vec<u8>> {
    let mut w = Writer(Vec::new());
    w.u8(msg.tag());
    match msg {
        ProtocolMessage::Hello(h) => {
            w.u16(h.version);
            w.u32(h.n);
            w.u32(h.f);
            w.u8(h.method.code());
            w.f64(h.epsilon);
            w.u64(h.matrix_seed);
            w.u64(h.fs_matrix_seed);
            w.u64(h.rp_seed);
        }
        ProtocolMessage::HelloAck { bob_doc_count } => w.u32(*bob_doc_count),
        ProtocolMessage::DfVector { counts } => {
            w.len(counts.len())?;
            w.u32s(counts);
        }
        ProtocolMessage::FilterQuery {
            query_id,
            indexes,
            z,
        } => {
            w.u32(*query_id);
            w.len(indexes.len())?;
            w.u32s(indexes);
            w.f64s(z);
        }
        ProtocolMessage::FilterReply { query_id, entries } => {
            uniform_width(entries.iter().map(|e| e.t.len()))?;
            w.u32(*query_id);
            w.len(entries.len())?;
            for e in entries {
                w.f64(e.s);
                w.f64(e.norm_v2);
                w.f64s(&e.t);
            }
        }
        ProtocolMessage::FullQuery {
            query_id,
            survivor_ids,
            z,
        } => {
            w.u32(*query_id);
            w.len(survivor_ids.len())?;
            w.u32s(survivor_ids);
            w.f64s(z);
        }
        ProtocolMessage::FullReply { query_id, entries } => {
            uniform_width(entries.iter().map(|e| e.t.len()))?;
            w.u32(*query_id);
            w.len(entries.len())?;
            for e in entries {
                w.u32(e.doc_id);
                w.f64(e.s);
                w.f64s(&e.t);
            }
        }
        ProtocolMessage::Bye => {}
    }
    Ok(w.0)
}

fn uniform_width(mut widths: impl Iterator<Item = usize>) -> Result<()> {
    if let Some(first) = widths.next() {
        if widths.any(|w| w != first) {
            return Err(Error::Frame("reply entries have unequal t lengths".into()));
        }
    }
    Ok(())
}

struct Reader<'a> {
    buf: &'a [u8],
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() < n {
            return Err(Error::Frame(format!(
                "truncated payload: need {n} bytes, have {}",
                self.buf.len()
            )));
        }
        let (head, rest) = self.buf.split_at(n);
        self.buf = rest;
        Ok(head)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn u32s(&mut self, n: usize) -> Result<Vec<u32>> {
        let bytes = self.take(
            n.checked_mul(4)
                .ok_or_else(|| Error::Frame("count overflow".into()))?,
        )?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(
            n.checked_mul(8)
                .ok_or_else(|| Error::Frame("count overflow".into()))?,
        )?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
    /// All remaining bytes as reals.
    fn rest_f64s(&mut self) -> Result<Vec<f64>> {
        if !self.buf.len().is_multiple_of(8) {
            return Err(Error::Frame(format!(
                "{} trailing bytes are not a whole number of reals",
                self.buf.len()
            )));
        }
        self.f64s(self.buf.len() / 8)
    }
    /// Width in reals of each of `count` entries sharing the remaining bytes.
    fn entry_width(&self, count: usize, fixed: usize) -> Result<usize> {
        let rest = self.buf.len();
        if count == 0 {
            return Ok(0);
        }
        if !rest.is_multiple_of(count)
            || rest / count < fixed
            || !(rest / count - fixed).is_multiple_of(8)
        {
            return Err(Error::Frame(format!(
                "{rest} bytes cannot hold {count} equal reply entries"
            )));
        }
        Ok((rest / count - fixed) / 8)
    }
    fn finish(&self) -> Result<()> {
        if self.buf.is_empty() {
            Ok(())
        } else {
            Err(Error::Frame(format!(
                "{} unexpected trailing bytes",
                self.buf.len()
            )))
        }
    }
}

/// Parses a payload produced by [`encode_message`].
pub fn decode_message(payload: &[u8]) -> Result<ProtocolMessage> {
    let mut r = Reader { buf: payload };
    let tag = r.u8()?;
    let msg = match tag {
        TAG_HELLO => {
            let version = r.u16()?;
            let n = r.u32()?;
            let f = r.u32()?;
            let code = r.u8()?;
            let method = SelectionMethod::from_code(code)
                .ok_or_else(|| Error::Protocol(format!("unknown method code {code}")))?;
            ProtocolMessage::Hello(Hello {
                version,
                n,
                f,
                method,
                epsilon: r.f64()?,
                matrix_seed: r.u64()?,
                fs_matrix_seed: r.u64()?,
                rp_seed: r.u64()?,
            })
        }
        TAG_HELLO_ACK => ProtocolMessage::HelloAck {
            bob_doc_count: r.u32()?,
        },
        TAG_DF_VECTOR => {
            let n = r.u32()? as usize;
            ProtocolMessage::DfVector { counts: r.u32s(n)? }
        }
        TAG_FILTER_QUERY => {
            let query_id = r.u32()?;
            let count = r.u32()? as usize;
            let indexes = r.u32s(count)?;
            ProtocolMessage::FilterQuery {
                query_id,
                indexes,
                z: r.rest_f64s()?,
            }
        }
        TAG_FILTER_REPLY => {
            let query_id = r.u32()?;
            let m = r.u32()? as usize;
            let width = r.entry_width(m, 16)?;
            let mut entries = Vec::with_capacity(m);
            for _ in 0..m {
                entries.push(FilterEntry {
                    s: r.f64()?,
                    norm_v2: r.f64()?,
                    t: r.f64s(width)?,
                });
            }
            ProtocolMessage::FilterReply { query_id, entries }
        }
        TAG_FULL_QUERY => {
            let query_id = r.u32()?;
            let count = r.u32()? as usize;
            let survivor_ids = r.u32s(count)?;
            ProtocolMessage::FullQuery {
                query_id,
                survivor_ids,
                z: r.rest_f64s()?,
            }
        }
        TAG_FULL_REPLY => {
            let query_id = r.u32()?;
            let k = r.u32()? as usize;
            let width = r.entry_width(k, 12)?;
            let mut entries = Vec::with_capacity(k);
            for _ in 0..k {
                entries.push(FullEntry {
                    doc_id: r.u32()?,
                    s: r.f64()?,
                    t: r.f64s(width)?,
                });
            }
            ProtocolMessage::FullReply { query_id, entries }
        }
        TAG_BYE => ProtocolMessage::Bye,
        other => return Err(Error::Protocol(format!("unknown message tag {other:#04x}"))),
    };
    r.finish()?;
    Ok(msg)
}

/// Payload with its length prefix.
pub fn encode_frame(msg: &ProtocolMessage) -> Result<Vec<u8>> {
    let payload = encode_message(msg)?;
    if payload.len() > MAX_FRAME_LEN {
        return Err(Error::Frame(format!(
            "frame of {} bytes too large",
            payload.len()
        )));
    }
    let mut frame = Vec::with_capacity(FRAME_HEADER_LEN + payload.len());
    frame.extend_from_slice(&(payload.len() as u32).to_le_bytes());
    frame.extend_from_slice(&payload);
    Ok(frame)
}

/// Decodes one complete frame; the prefix must match the byte count exactly.
pub fn decode_frame(frame: &[u8]) -> Result<ProtocolMessage> {
    if frame.len() < FRAME_HEADER_LEN {
        return Err(Error::Frame("frame shorter than its length prefix".into()));
    }
    let len = u32::from_le_bytes(frame[..4].try_into().unwrap()) as usize;
    if len != frame.len() - FRAME_HEADER_LEN {
        return Err(Error::Frame(format!(
            "length prefix says {len} bytes, frame carries {}",
            frame.len() - FRAME_HEADER_LEN
        )));
    }
    decode_message(&frame[FRAME_HEADER_LEN..])
}

/// Reads one frame (prefix included) from a byte stream.
pub fn read_frame<R: Read>(r: &mut R) -> Result<Vec<u8>> {
    let mut head = [0u8; FRAME_HEADER_LEN];
    r.read_exact(&mut head).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => Error::Session("peer closed the connection".into()),
        _ => Error::Io(e),
    })?;
    let len = u32::from_le_bytes(head) as usize;
    if len > MAX_FRAME_LEN {
        return Err(Error::Frame(format!(
            "announced frame of {len} bytes too large"
        )));
    }
    let mut frame = vec![0u8; FRAME_HEADER_LEN + len];
    frame[..FRAME_HEADER_LEN].copy_from_slice(&head);
    r.read_exact(&mut frame[FRAME_HEADER_LEN..])
        .map_err(|e| match e.kind() {
            std::io::ErrorKind::UnexpectedEof => Error::Frame("stream ended inside a frame".into()),
            _ => Error::Io(e),
        })?;
    Ok(frame)
}

pub fn write_frame<W: Write>(w: &mut W, frame: &[u8]) -> Result<()> {
    w.write_all(frame)?;
    w.flush()?;
    Ok(())
}
