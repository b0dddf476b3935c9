//! Chunk stream layer: splits messages into chunks and reassembles them.

use std::collections::HashMap;
use std::io::{self, Read, Write};

use super::{amf0, msg_type, RtmpError};

pub const DEFAULT_CHUNK_SIZE: usize = 128;
const MAX_CHUNK_SIZE: usize = 0x00FF_FFFF;
const TS_EXTENDED: u32 = 0x00FF_FFFF;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RtmpMessage {
    pub csid: u32,
    /// Absolute timestamp in milliseconds after delta accumulation.
    pub timestamp: u32,
    pub type_id: u8,
    pub stream_id: u32,
    pub payload: Vec<u8>,
}

impl RtmpMessage {
    /// Protocol control message on csid 2, stream 0.
    pub fn control(type_id: u8, payload: Vec<u8>) -> Self {
        Self {
            csid: 2,
            timestamp: 0,
            type_id,
            stream_id: 0,
            payload,
        }
    }

    pub fn command(csid: u32, stream_id: u32, values: &[amf0::Amf0Value]) -> Self {
        Self {
            csid,
            timestamp: 0,
            type_id: msg_type::COMMAND_AMF0,
            stream_id,
            payload: amf0::encode(values),
        }
    }

    pub fn set_chunk_size(size: u32) -> Self {
        Self::control(msg_type::SET_CHUNK_SIZE, size.to_be_bytes().to_vec())
    }
}

#[derive(Debug, Clone, Copy)]
struct Header {
    timestamp: u32,
    delta: u32,
    length: u32,
    type_id: u8,
    stream_id: u32,
    extended: bool,
}

#[derive(Debug, Default)]
struct CsidState {
    last: Option<Header>,
    partial: Option<Vec<u8>>,
}

/// Inbound chunk-stream state for one connection.
#[derive(Debug)]
pub struct ChunkContext {
    chunk_size: usize,
    streams: HashMap<u32, CsidState>,
}

impl Default for ChunkContext {
    fn default() -> Self {
        Self::with_chunk_size(DEFAULT_CHUNK_SIZE)
    }
}

impl ChunkContext {
    pub fn with_chunk_size(chunk_size: usize) -> Self {
        assert!(chunk_size >= 1);
        Self {
            chunk_size,
            streams: HashMap::new(),
        }
    }

    pub fn chunk_size(&self) -> usize {
        self.chunk_size
    }

    fn has_partials(&self) -> bool {
        self.streams.values().any(|s| s.partial.is_some())
    }

    fn apply_control(&mut self, msg: &RtmpMessage) -> Result<(), RtmpError> {
        match msg.type_id {
            msg_type::SET_CHUNK_SIZE => {
                let size = be_u32_prefix(&msg.payload)
                    .ok_or_else(|| RtmpError::MalformedHeader("short Set Chunk Size".into()))?
                    & 0x7FFF_FFFF;
                if size == 0 {
                    return Err(RtmpError::MalformedHeader("chunk size 0".into()));
                }
                self.chunk_size = (size as usize).min(MAX_CHUNK_SIZE);
            }
            msg_type::ABORT => {
                if let Some(csid) = be_u32_prefix(&msg.payload) {
                    if let Some(st) = self.streams.get_mut(&csid) {
                        st.partial = None;
                    }
                }
            }
            _ => {}
        }
        Ok(())
    }
}

fn be_u32_prefix(b: &[u8]) -> Option<u32> {
    b.get(..4).map(|s| u32::from_be_bytes(s.try_into().unwrap()))
}

fn be_u24(b: &[u8]) -> u32 {
    (b[0] as u32) << 16 | (b[1] as u32) << 8 | b[2] as u32
}

fn read_u32_be<R: Read>(r: &mut R) -> Result<u32, RtmpError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_be_bytes(b))
}

/// Reads chunks until one complete message is assembled.
///
/// Set Chunk Size and Abort messages are applied to `ctx` before being
/// returned to the caller.
pub fn read_message<R: Read>(r: &mut R, ctx: &mut ChunkContext) -> Result<RtmpMessage, RtmpError> {
    loop {
        let mut b0 = [0u8; 1];
        if let Err(e) = r.read_exact(&mut b0) {
            if e.kind() == io::ErrorKind::UnexpectedEof && !ctx.has_partials() {
                return Err(RtmpError::Closed);
            }
            return Err(e.into());
        }
        let fmt = b0[0] >> 6;
        let csid = match b0[0] & 0x3F {
            0 => {
                let mut b = [0u8; 1];
                r.read_exact(&mut b)?;
                64 + b[0] as u32
            }
            1 => {
                let mut b = [0u8; 2];
                r.read_exact(&mut b)?;
                64 + b[0] as u32 + 256 * b[1] as u32
            }
            n => n as u32,
        };

        let chunk_size = ctx.chunk_size;
        let st = ctx.streams.entry(csid).or_default();
        let in_progress = st.partial.is_some();
        let need_prev = || RtmpError::MalformedHeader(format!("fmt {fmt} without a prior header on csid {csid}"));

        let header = match fmt {
            0 => {
                let mut h = [0u8; 11];
                r.read_exact(&mut h)?;
                let ts24 = be_u24(&h[0..3]);
                let extended = ts24 == TS_EXTENDED;
                let timestamp = if extended { read_u32_be(r)? } else { ts24 };
                Header {
                    timestamp,
                    delta: 0,
                    length: be_u24(&h[3..6]),
                    type_id: h[6],
                    stream_id: u32::from_le_bytes(h[7..11].try_into().unwrap()),
                    extended,
                }
            }
            1 | 2 => {
                let prev = st.last.ok_or_else(need_prev)?;
                let mut h = [0u8; 7];
                let n = if fmt == 1 { 7 } else { 3 };
                r.read_exact(&mut h[..n])?;
                let d24 = be_u24(&h[0..3]);
                let extended = d24 == TS_EXTENDED;
                let delta = if extended { read_u32_be(r)? } else { d24 };
                let (length, type_id) = if fmt == 1 {
                    (be_u24(&h[3..6]), h[6])
                } else {
                    (prev.length, prev.type_id)
                };
                Header {
                    timestamp: prev.timestamp.wrapping_add(delta),
                    delta,
                    length,
                    type_id,
                    stream_id: prev.stream_id,
                    extended,
                }
            }
            _ => {
                let prev = st.last.ok_or_else(need_prev)?;
                if prev.extended {
                    let _ = read_u32_be(r)?;
                }
                if in_progress {
                    prev
                } else {
                    Header {
                        timestamp: prev.timestamp.wrapping_add(prev.delta),
                        ..prev
                    }
                }
            }
        };

        if in_progress && fmt != 3 {
            let buffered = st.partial.as_ref().map_or(0, Vec::len);
            if (header.length as usize) < buffered {
                return Err(RtmpError::ChunkOverrun {
                    csid,
                    declared: header.length,
                    buffered,
                });
            }
            return Err(RtmpError::MalformedHeader(format!(
                "fmt {fmt} header on csid {csid} interrupts a partial message"
            )));
        }

        st.last = Some(header);
        let buf = st
            .partial
            .get_or_insert_with(|| Vec::with_capacity(header.length as usize));
        let remaining = header.length as usize - buf.len();
        let take = remaining.min(chunk_size);
        let start = buf.len();
        buf.resize(start + take, 0);
        r.read_exact(&mut buf[start..])?;

        if buf.len() == header.length as usize {
            let payload = st.partial.take().unwrap_or_default();
            let msg = RtmpMessage {
                csid,
                timestamp: header.timestamp,
                type_id: header.type_id,
                stream_id: header.stream_id,
                payload,
            };
            ctx.apply_control(&msg)?;
            return Ok(msg);
        }
    }
}

/// Outbound chunker with per-csid header compression.
#[derive(Debug)]
pub struct ChunkWriter {
    chunk_size: usize,
    streams: HashMap<u32, Header>,
}

impl Default for ChunkWriter {
    fn default() -> Self {
        Self::with_chunk_size(DEFAULT_CHUNK_SIZE)
    }
}

fn write_basic_header(out: &mut Vec<u8>, fmt: u8, csid: u32) {
    let f = fmt << 6;
    match csid {
        2..=63 => out.push(f | csid as u8),
        64..=319 => out.extend_from_slice(&[f, (csid - 64) as u8]),
        320..=65599 => {
            let v = csid - 64;
            out.extend_from_slice(&[f | 1, (v & 0xFF) as u8, (v >> 8) as u8]);
        }
        _ => panic!("chunk stream id {csid} out of range"),
    }
}

fn push_u24(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_be_bytes()[1..]);
}

impl ChunkWriter {
    pub fn with_chunk_size(chunk_size: usize) -> Self {
        assert!(chunk_size >= 1);
        Self {
            chunk_size,
            streams: HashMap::new(),
        }
    }

    pub fn chunk_size(&self) -> usize {
        self.chunk_size
    }

    pub fn encode(&mut self, msg: &RtmpMessage) -> Vec<u8> {
        assert!(msg.payload.len() <= MAX_CHUNK_SIZE, "message too long for a 24-bit length");
        let length = msg.payload.len() as u32;
        let prev = self.streams.get(&msg.csid).copied();

        let (fmt, header) = match prev {
            Some(p) if p.stream_id == msg.stream_id && msg.timestamp >= p.timestamp => {
                let delta = msg.timestamp - p.timestamp;
                let same_shape = p.length == length && p.type_id == msg.type_id;
                if same_shape && delta == p.delta {
                    (3, Header { timestamp: msg.timestamp, ..p })
                } else {
                    let h = Header {
                        timestamp: msg.timestamp,
                        delta,
                        length,
                        type_id: msg.type_id,
                        stream_id: msg.stream_id,
                        extended: delta >= TS_EXTENDED,
                    };
                    (if same_shape { 2 } else { 1 }, h)
                }
            }
            _ => (
                0,
                Header {
                    timestamp: msg.timestamp,
                    delta: 0,
                    length,
                    type_id: msg.type_id,
                    stream_id: msg.stream_id,
                    extended: msg.timestamp >= TS_EXTENDED,
                },
            ),
        };

        let ext_value = if fmt == 0 { header.timestamp } else { header.delta };
        let mut out = Vec::with_capacity(msg.payload.len() + 18);
        write_basic_header(&mut out, fmt, msg.csid);
        let field = if header.extended { TS_EXTENDED } else { ext_value };
        match fmt {
            0 => {
                push_u24(&mut out, field);
                push_u24(&mut out, length);
                out.push(msg.type_id);
                out.extend_from_slice(&msg.stream_id.to_le_bytes());
            }
            1 => {
                push_u24(&mut out, field);
                push_u24(&mut out, length);
                out.push(msg.type_id);
            }
            2 => push_u24(&mut out, field),
            _ => {}
        }
        if header.extended {
            out.extend_from_slice(&ext_value.to_be_bytes());
        }

        let mut chunks = msg.payload.chunks(self.chunk_size);
        if let Some(first) = chunks.next() {
            out.extend_from_slice(first);
        }
        for chunk in chunks {
            write_basic_header(&mut out, 3, msg.csid);
            if header.extended {
                out.extend_from_slice(&ext_value.to_be_bytes());
            }
            out.extend_from_slice(chunk);
        }

        self.streams.insert(msg.csid, header);
        if msg.type_id == msg_type::SET_CHUNK_SIZE {
            if let Some(size) = be_u32_prefix(&msg.payload) {
                let size = (size & 0x7FFF_FFFF) as usize;
                if size >= 1 {
                    self.chunk_size = size.min(MAX_CHUNK_SIZE);
                }
            }
        }
        out
    }

    pub fn write_message<W: Write>(&mut self, w: &mut W, msg: &RtmpMessage) -> io::Result<()> {
        let bytes = self.encode(msg);
        w.write_all(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn read_all(bytes: &[u8], chunk_size: usize) -> Vec<RtmpMessage> {
        let mut ctx = ChunkContext::with_chunk_size(chunk_size);
        let mut r = bytes;
        let mut out = Vec::new();
        loop {
            match read_message(&mut r, &mut ctx) {
                Ok(m) => out.push(m),
                Err(RtmpError::Closed) => return out,
                Err(e) => panic!("{e}"),
            }
        }
    }

    #[test]
    fn one_byte_basic_header() {
        // fmt 0, csid 3, ts 5, len 2, type 20, stream 1
        let bytes = [0x03, 0, 0, 5, 0, 0, 2, 20, 1, 0, 0, 0, 0xAB, 0xCD];
        let msgs = read_all(&bytes, 128);
        assert_eq!(
            msgs,
            vec![RtmpMessage {
                csid: 3,
                timestamp: 5,
                type_id: 20,
                stream_id: 1,
                payload: vec![0xAB, 0xCD],
            }]
        );
    }

    #[test]
    fn two_byte_basic_header_after_fmt0() {
        // establish csid 106 with fmt 0 (two-byte form, second byte 42), then fmt 1
        let mut bytes = vec![0x00, 42, 0, 0, 10, 0, 0, 1, 9, 0, 0, 0, 0, 0x11];
        bytes.extend_from_slice(&[0x40, 0x2A, 0, 0, 3, 0, 0, 1, 9, 0x22]);
        let msgs = read_all(&bytes, 128);
        assert_eq!(msgs.len(), 2);
        assert_eq!(msgs[1].csid, 106);
        assert_eq!(msgs[1].timestamp, 13);
        assert_eq!(msgs[1].payload, vec![0x22]);
        assert_eq!(bytes[14] >> 6, 1);
    }

    #[test]
    fn extended_timestamp() {
        let mut bytes = vec![0x04, 0xFF, 0xFF, 0xFF, 0, 0, 1, 9, 1, 0, 0, 0];
        bytes.extend_from_slice(&0x0100_0000u32.to_be_bytes());
        bytes.push(0x55);
        let msgs = read_all(&bytes, 128);
        assert_eq!(msgs[0].timestamp, 16_777_216);
    }

    #[test]
    fn set_chunk_size_applies_to_following_chunks() {
        let mut w = ChunkWriter::default();
        let mut bytes = w.encode(&RtmpMessage::set_chunk_size(4));
        assert_eq!(w.chunk_size(), 4);
        bytes.extend(w.encode(&RtmpMessage {
            csid: 6,
            timestamp: 0,
            type_id: 9,
            stream_id: 1,
            payload: (0..10).collect(),
        }));
        let mut ctx = ChunkContext::default();
        let mut r = bytes.as_slice();
        read_message(&mut r, &mut ctx).unwrap();
        assert_eq!(ctx.chunk_size(), 4);
        let m = read_message(&mut r, &mut ctx).unwrap();
        assert_eq!(m.payload, (0..10).collect::<Vec<u8>>());
    }

    #[test]
    fn zero_chunk_size_rejected() {
        let bytes = ChunkWriter::default().encode(&RtmpMessage::set_chunk_size(0));
        let mut ctx = ChunkContext::default();
        assert!(matches!(
            read_message(&mut bytes.as_slice(), &mut ctx),
            Err(RtmpError::MalformedHeader(_))
        ));
    }

    #[test]
    fn interleaved_chunk_streams() {
        // chunk size 2: message A on csid 4, message B on csid 5, chunks interleaved
        let bytes = [
            0x04, 0, 0, 1, 0, 0, 4, 9, 1, 0, 0, 0, b'a', b'b', // A part 1
            0x05, 0, 0, 2, 0, 0, 2, 8, 1, 0, 0, 0, b'x', b'y', // B complete
            0xC4, b'c', b'd', // A part 2
        ];
        let msgs = read_all(&bytes, 2);
        assert_eq!(msgs[0].csid, 5);
        assert_eq!(msgs[0].payload, b"xy");
        assert_eq!(msgs[1].csid, 4);
        assert_eq!(msgs[1].payload, b"abcd");
    }

    #[test]
    fn fmt1_without_prior_header_is_malformed() {
        let bytes = [0x43, 0, 0, 1, 0, 0, 1, 9, 0];
        let mut ctx = ChunkContext::default();
        assert!(matches!(
            read_message(&mut &bytes[..], &mut ctx),
            Err(RtmpError::MalformedHeader(_))
        ));
    }

    #[test]
    fn shrinking_header_mid_message_is_overrun() {
        // chunk size 2, declares 4 bytes, then a fmt 1 header declaring 1 byte
        let bytes = [
            0x04, 0, 0, 0, 0, 0, 4, 9, 1, 0, 0, 0, 1, 2, //
            0x44, 0, 0, 0, 0, 0, 1, 9, 3,
        ];
        let mut ctx = ChunkContext::with_chunk_size(2);
        assert!(matches!(
            read_message(&mut &bytes[..], &mut ctx),
            Err(RtmpError::ChunkOverrun { csid: 4, declared: 1, buffered: 2 })
        ));
    }

    #[test]
    fn truncated_inside_message() {
        let bytes = [0x04, 0, 0, 0, 0, 0, 4, 9, 1, 0, 0, 0, 1, 2];
        let mut ctx = ChunkContext::default();
        assert!(matches!(read_message(&mut &bytes[..], &mut ctx), Err(RtmpError::Truncated)));
    }

    #[test]
    fn writer_compresses_headers() {
        let mut w = ChunkWriter::default();
        let msg = |ts, len| RtmpMessage {
            csid: 6,
            timestamp: ts,
            type_id: 9,
            stream_id: 1,
            payload: vec![0; len],
        };
        assert_eq!(w.encode(&msg(0, 4))[0] >> 6, 0);
        assert_eq!(w.encode(&msg(40, 5))[0] >> 6, 1);
        assert_eq!(w.encode(&msg(80, 5))[0] >> 6, 3);
        assert_eq!(w.encode(&msg(100, 5))[0] >> 6, 2);
    }

    fn arb_messages() -> impl Strategy<Value = Vec<RtmpMessage>> {
        let csid = prop_oneof![2u32..64, 64u32..320, 320u32..65600];
        let step = prop_oneof![0u32..100, Just(0x00FF_FFFF), 0x0100_0000u32..0x0200_0000];
        let one = (csid, step, prop::sample::select(vec![8u8, 9, 18, 20]), 0u32..3, prop::collection::vec(any::<u8>(), 0..300));
        prop::collection::vec(one, 1..40).prop_map(|items| {
            let mut clock: HashMap<u32, u32> = HashMap::new();
            items
                .into_iter()
                .map(|(csid, step, type_id, stream_id, payload)| {
                    let ts = clock.entry(csid).or_insert(0);
                    *ts = ts.saturating_add(step);
                    RtmpMessage {
                        csid,
                        timestamp: *ts,
                        type_id,
                        stream_id,
                        payload,
                    }
                })
                .collect()
        })
    }

    proptest! {
        #[test]
        fn writer_reader_round_trip(msgs in arb_messages(), chunk_size in prop::sample::select(vec![1usize, 128, 4096])) {
            let mut w = ChunkWriter::with_chunk_size(chunk_size);
            let mut bytes = Vec::new();
            for m in &msgs {
                w.write_message(&mut bytes, m).unwrap();
            }
            prop_assert_eq!(read_all(&bytes, chunk_size), msgs);
        }
    }
}
