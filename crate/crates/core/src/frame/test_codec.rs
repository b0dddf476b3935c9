//! Uncompressed "RAWV" test codec carried inside FLV video tags.
//!
//! Layout: `b"RAWV" | width u16 BE | height u16 BE | RGB8 pixels`.

use super::{mono_micros, FrameError, RawFrame};
use crate::rtmp::EncodedFrame;

pub const RAWV_MAGIC: [u8; 4] = *b"RAWV";
const HEADER_LEN: usize = 8;

pub fn decode_test_codec(ef: &EncodedFrame) -> Result<RawFrame, FrameError> {
    let p = &ef.payload;
    if p.len() < 4 {
        return Err(FrameError::Truncated);
    }
    let magic: [u8; 4] = p[..4].try_into().unwrap();
    if magic != RAWV_MAGIC {
        return Err(FrameError::BadMagic(magic));
    }
    if p.len() < HEADER_LEN {
        return Err(FrameError::Truncated);
    }
    let width = u16::from_be_bytes([p[4], p[5]]) as u32;
    let height = u16::from_be_bytes([p[6], p[7]]) as u32;
    let expected = width as usize * height as usize * 3;
    let actual = p.len() - HEADER_LEN;
    if actual != expected {
        return Err(FrameError::LengthMismatch { expected, actual });
    }
    let mut frame = RawFrame::new(
        ef.seq,
        ef.pts_millis() * 1000,
        width,
        height,
        p[HEADER_LEN..].to_vec(),
    )?;
    frame.recv_mono_micros = mono_micros();
    Ok(frame)
}

/// Inverse of [`decode_test_codec`]: packs RGB8 pixels into a RAWV payload.
pub fn encode_test_codec(width: u16, height: u16, pixels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + pixels.len());
    out.extend_from_slice(&RAWV_MAGIC);
    out.extend_from_slice(&width.to_be_bytes());
    out.extend_from_slice(&height.to_be_bytes());
    out.extend_from_slice(pixels);
    out
}
