//! Scripted RTMP publisher used by conformance tests and the `publish-test` tool.

use std::io::{BufReader, Write};
use std::net::{TcpStream, ToSocketAddrs};

use super::amf0::Amf0Value;
use super::{amf0, client_handshake, msg_type, read_message, ChunkContext, ChunkWriter, RtmpError, RtmpMessage};
use crate::frame::encode_test_codec;

const COMMAND_CSID: u32 = 3;
const VIDEO_CSID: u32 = 6;

pub struct TestPublisher {
    reader: BufReader<TcpStream>,
    writer: TcpStream,
    out: ChunkWriter,
    ctx: ChunkContext,
    next_txn: f64,
    stream_id: u32,
    /// Every message received from the server, in order.
    pub received: Vec<RtmpMessage>,
}

impl TestPublisher {
    pub fn connect<A: ToSocketAddrs>(addr: A) -> Result<Self, RtmpError> {
        let mut stream = TcpStream::connect(addr)?;
        stream.set_nodelay(true)?;
        client_handshake(&mut stream)?;
        Ok(Self {
            reader: BufReader::new(stream.try_clone()?),
            writer: stream,
            out: ChunkWriter::default(),
            ctx: ChunkContext::default(),
            next_txn: 1.0,
            stream_id: 0,
            received: Vec::new(),
        })
    }

    fn send(&mut self, msg: &RtmpMessage) -> Result<(), RtmpError> {
        self.out.write_message(&mut self.writer, msg)?;
        self.writer.flush()?;
        Ok(())
    }

    fn command(&mut self, stream_id: u32, name: &str, args: Vec<Amf0Value>) -> Result<f64, RtmpError> {
        let txn = self.next_txn;
        self.next_txn += 1.0;
        let mut values = vec![Amf0Value::str(name), Amf0Value::Number(txn)];
        values.extend(args);
        self.send(&RtmpMessage::command(COMMAND_CSID, stream_id, &values))?;
        Ok(txn)
    }

    /// Reads server messages until `done` matches one of them; returns it.
    fn read_until(&mut self, mut done: impl FnMut(&[Amf0Value]) -> bool) -> Result<RtmpMessage, RtmpError> {
        loop {
            let msg = read_message(&mut self.reader, &mut self.ctx)?;
            self.received.push(msg.clone());
            if msg.type_id == msg_type::COMMAND_AMF0 {
                let values = amf0::decode(&msg.payload)?;
                if done(&values) {
                    return Ok(msg);
                }
            }
        }
    }

    fn await_result(&mut self, txn: f64) -> Result<Vec<Amf0Value>, RtmpError> {
        let msg = self.read_until(|v| {
            matches!(v.first().and_then(Amf0Value::as_str), Some("_result" | "_error"))
                && v.get(1).and_then(Amf0Value::as_number) == Some(txn)
        })?;
        amf0::decode(&msg.payload)
    }

    pub fn connect_app(&mut self, app: &str) -> Result<Vec<Amf0Value>, RtmpError> {
        let txn = self.command(
            0,
            "connect",
            vec![Amf0Value::object([
                ("app", Amf0Value::str(app)),
                ("type", Amf0Value::str("nonprivate")),
                ("flashVer", Amf0Value::str("FMLE/3.0 (compatible; streamgate-test)")),
                ("tcUrl", Amf0Value::String(format!("rtmp://localhost/{app}"))),
            ])],
        )?;
        self.await_result(txn)
    }

    pub fn create_stream(&mut self) -> Result<u32, RtmpError> {
        let txn = self.command(0, "createStream", vec![Amf0Value::Null])?;
        let v = self.await_result(txn)?;
        let id = v
            .get(3)
            .and_then(Amf0Value::as_number)
            .ok_or_else(|| RtmpError::Amf("createStream result without stream id".into()))?;
        self.stream_id = id as u32;
        Ok(self.stream_id)
    }

    /// Sends `publish` and returns the `onStatus` info object.
    pub fn publish(&mut self, key: &str) -> Result<Amf0Value, RtmpError> {
        let stream_id = self.stream_id;
        self.command(stream_id, "publish", vec![Amf0Value::Null, Amf0Value::str(key), Amf0Value::str("live")])?;
        let msg = self.read_until(|v| v.first().and_then(Amf0Value::as_str) == Some("onStatus"))?;
        let v = amf0::decode(&msg.payload)?;
        v.get(3).cloned().ok_or_else(|| RtmpError::Amf("onStatus without info".into()))
    }

    pub fn set_chunk_size(&mut self, size: u32) -> Result<(), RtmpError> {
        self.send(&RtmpMessage::set_chunk_size(size))
    }

    /// Sends a raw FLV video tag body at `timestamp_ms`.
    pub fn send_video(&mut self, timestamp_ms: u32, tag: Vec<u8>) -> Result<(), RtmpError> {
        let msg = RtmpMessage {
            csid: VIDEO_CSID,
            timestamp: timestamp_ms,
            type_id: msg_type::VIDEO,
            stream_id: self.stream_id,
            payload: tag,
        };
        self.send(&msg)
    }

    /// Sends one RAWV test-codec frame wrapped in an AVC-style video tag.
    pub fn send_rawv_frame(&mut self, timestamp_ms: u32, width: u16, height: u16, pixels: &[u8], key: bool) -> Result<(), RtmpError> {
        let mut tag = vec![if key { 0x17 } else { 0x27 }, 0x01, 0, 0, 0];
        tag.extend(encode_test_codec(width, height, pixels));
        self.send_video(timestamp_ms, tag)
    }

    pub fn send_metadata(&mut self, width: f64, height: f64, fps: f64) -> Result<(), RtmpError> {
        let values = [
            Amf0Value::str("@setDataFrame"),
            Amf0Value::str("onMetaData"),
            Amf0Value::EcmaArray(vec![
                ("width".into(), Amf0Value::Number(width)),
                ("height".into(), Amf0Value::Number(height)),
                ("framerate".into(), Amf0Value::Number(fps)),
            ]),
        ];
        let msg = RtmpMessage {
            csid: 4,
            timestamp: 0,
            type_id: msg_type::DATA_AMF0,
            stream_id: self.stream_id,
            payload: amf0::encode(&values),
        };
        self.send(&msg)
    }

    /// Unpublishes and closes the connection.
    pub fn finish(mut self) -> Result<Vec<RtmpMessage>, RtmpError> {
        let stream_id = self.stream_id;
        self.command(stream_id, "FCUnpublish", vec![Amf0Value::Null])?;
        self.command(0, "deleteStream", vec![Amf0Value::Null, Amf0Value::Number(stream_id as f64)])?;
        self.writer.shutdown(std::net::Shutdown::Write)?;
        loop {
            match read_message(&mut self.reader, &mut self.ctx) {
                Ok(m) => self.received.push(m),
                Err(RtmpError::Closed) | Err(RtmpError::Truncated) => break,
                Err(RtmpError::Io(_)) => break,
                Err(e) => return Err(e),
            }
        }
        Ok(self.received)
    }
}
