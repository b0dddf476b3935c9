//! Length-prefixed request/response records exchanged with an external
//! detector over its stdin/stdout.
//!
//! request:  `u32 LE header_len | {"id","width","height"} | RGB8`
//! response: `u32 LE body_len | {"id","latency_ms","detections"}`

use std::io::{self, Read, Write};

use serde::{Deserialize, Serialize};

use super::{Detection, DetectorError};
use crate::frame::RawFrame;

/// Upper bound on a JSON header or body; anything larger is a framing error.
pub const MAX_RECORD: u32 = 16 << 20;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RequestHeader {
    pub id: u64,
    pub width: u32,
    pub height: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseBody {
    pub id: u64,
    pub latency_ms: f64,
    pub detections: Vec<Detection>,
}

pub fn write_request<W: Write>(w: &mut W, id: u64, frame: &RawFrame) -> io::Result<()> {
    let header = serde_json::to_vec(&RequestHeader {
        id,
        width: frame.width,
        height: frame.height,
    })?;
    w.write_all(&(header.len() as u32).to_le_bytes())?;
    w.write_all(&header)?;
    w.write_all(&frame.pixels)?;
    w.flush()
}

fn read_len<R: Read>(r: &mut R) -> Result<Option<u32>, DetectorError> {
    let mut len = [0u8; 4];
    let mut got = 0;
    while got < 4 {
        match r.read(&mut len[got..]) {
            Ok(0) if got == 0 => return Ok(None),
            Ok(0) => return Err(DetectorError::ProtocolViolation("truncated length prefix".into())),
            Ok(n) => got += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    let len = u32::from_le_bytes(len);
    if len > MAX_RECORD {
        return Err(DetectorError::ProtocolViolation(format!("record length {len} too large")));
    }
    Ok(Some(len))
}

fn read_exact_or_violation<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<(), DetectorError> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        io::ErrorKind::UnexpectedEof => DetectorError::ProtocolViolation("truncated record".into()),
        _ => e.into(),
    })
}

/// Reads one request. `Ok(None)` on clean end of stream.
pub fn read_request<R: Read>(r: &mut R) -> Result<Option<(RequestHeader, Vec<u8>)>, DetectorError> {
    let Some(len) = read_len(r)? else { return Ok(None) };
    let mut header = vec![0u8; len as usize];
    read_exact_or_violation(r, &mut header)?;
    let header: RequestHeader = serde_json::from_slice(&header)
        .map_err(|e| DetectorError::ProtocolViolation(format!("bad request header: {e}")))?;
    let mut pixels = vec![0u8; header.width as usize * header.height as usize * 3];
    read_exact_or_violation(r, &mut pixels)?;
    Ok(Some((header, pixels)))
}

pub fn write_response<W: Write>(w: &mut W, body: &ResponseBody) -> io::Result<()> {
    let body = serde_json::to_vec(body)?;
    w.write_all(&(body.len() as u32).to_le_bytes())?;
    w.write_all(&body)?;
    w.flush()
}

/// Reads one response. `Ok(None)` on clean end of stream.
pub fn read_response<R: Read>(r: &mut R) -> Result<Option<ResponseBody>, DetectorError> {
    let Some(len) = read_len(r)? else { return Ok(None) };
    let mut body = vec![0u8; len as usize];
    read_exact_or_violation(r, &mut body)?;
    let body: ResponseBody = serde_json::from_slice(&body)
        .map_err(|e| DetectorError::ProtocolViolation(format!("bad response body: {e}")))?;
    if body.latency_ms.is_nan() || body.latency_ms < 0.0 {
        return Err(DetectorError::ProtocolViolation(format!(
            "negative latency {}",
            body.latency_ms
        )));
    }
    Ok(Some(body))
}
