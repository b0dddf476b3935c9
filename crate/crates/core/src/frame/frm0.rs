//! FRM0 raw-frame records, the decoder pipe and `.frm0` file format.
//!
//! `b"FRM0" | width u32 LE | height u32 LE | pts_micros u64 LE | payload_len u32 LE | RGB8`

use std::io::{self, Read, Write};

use super::{mono_micros, Fps, FrameError, FrameSource, RawFrame};

pub const FRM0_MAGIC: [u8; 4] = *b"FRM0";
const HEADER_LEN: usize = 24;

pub fn write_frm0<W: Write>(w: &mut W, frame: &RawFrame) -> io::Result<()> {
    let mut header = [0u8; HEADER_LEN];
    header[..4].copy_from_slice(&FRM0_MAGIC);
    header[4..8].copy_from_slice(&frame.width.to_le_bytes());
    header[8..12].copy_from_slice(&frame.height.to_le_bytes());
    header[12..20].copy_from_slice(&frame.pts_micros.to_le_bytes());
    header[20..24].copy_from_slice(&(frame.pixels.len() as u32).to_le_bytes());
    w.write_all(&header)?;
    w.write_all(&frame.pixels)
}

/// Fills `buf` completely. Returns `Ok(false)` on a clean EOF before the
/// first byte, `Truncated` on EOF part-way through.
fn fill<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<bool, FrameError> {
    let mut read = 0;
    while read < buf.len() {
        match r.read(&mut buf[read..]) {
            Ok(0) if read == 0 => return Ok(false),
            Ok(0) => return Err(FrameError::Truncated),
            Ok(n) => read += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    Ok(true)
}

/// Reads one FRM0 record. `Ok(None)` means the stream ended on a record boundary.
pub fn read_piped_frame<R: Read>(r: &mut R, seq: u64) -> Result<Option<RawFrame>, FrameError> {
    let mut header = [0u8; HEADER_LEN];
    if !fill(r, &mut header)? {
        return Ok(None);
    }
    let magic: [u8; 4] = header[..4].try_into().unwrap();
    if magic != FRM0_MAGIC {
        return Err(FrameError::BadMagic(magic));
    }
    let width = u32::from_le_bytes(header[4..8].try_into().unwrap());
    let height = u32::from_le_bytes(header[8..12].try_into().unwrap());
    let pts_micros = u64::from_le_bytes(header[12..20].try_into().unwrap());
    let payload_len = u32::from_le_bytes(header[20..24].try_into().unwrap()) as usize;
    let expected = width as usize * height as usize * 3;
    if payload_len != expected {
        return Err(FrameError::LengthMismatch {
            expected,
            actual: payload_len,
        });
    }
    let mut pixels = vec![0u8; payload_len];
    if payload_len > 0 && !fill(r, &mut pixels)? {
        return Err(FrameError::Truncated);
    }
    let mut frame = RawFrame::new(seq, pts_micros, width, height, pixels)?;
    frame.recv_mono_micros = mono_micros();
    Ok(Some(frame))
}

/// Concatenated FRM0 records read as a [`FrameSource`]; seq numbers are
/// assigned from 0 in read order.
pub struct Frm0Reader<R> {
    inner: R,
    next_seq: u64,
    fps: Option<Fps>,
    total: Option<u64>,
    done: bool,
}

impl<R: Read> Frm0Reader<R> {
    pub fn new(inner: R) -> Self {
        Self {
            inner,
            next_seq: 0,
            fps: None,
            total: None,
            done: false,
        }
    }

    pub fn with_fps(mut self, fps: Fps) -> Self {
        self.fps = Some(fps);
        self
    }

    pub fn with_total(mut self, total: u64) -> Self {
        self.total = Some(total);
        self
    }
}

impl<R: Read + Send> FrameSource for Frm0Reader<R> {
    fn next_frame(&mut self) -> Result<Option<RawFrame>, FrameError> {
        if self.done {
            return Ok(None);
        }
        match read_piped_frame(&mut self.inner, self.next_seq) {
            Ok(Some(f)) => {
                self.next_seq += 1;
                Ok(Some(f))
            }
            Ok(None) => {
                self.done = true;
                Ok(None)
            }
            Err(e) => {
                self.done = true;
                Err(e)
            }
        }
    }

    fn declared_fps(&self) -> Option<Fps> {
        self.fps
    }

    fn total_frames(&self) -> Option<u64> {
        self.total
    }
}

/// Counts the records of an in-memory `.frm0` image and infers the frame
/// rate from the first two pts values.
pub fn scan_frm0(bytes: &[u8]) -> Result<(u64, Option<Fps>), FrameError> {
    let mut cursor = bytes;
    let mut count = 0u64;
    let mut first_pts = None;
    let mut second_pts = None;
    while let Some(f) = read_piped_frame(&mut cursor, count)? {
        match count {
            0 => first_pts = Some(f.pts_micros),
            1 => second_pts = Some(f.pts_micros),
            _ => {}
        }
        count += 1;
    }
    let fps = match (first_pts, second_pts) {
        (Some(a), Some(b)) if b > a => {
            let period = b - a;
            Some(if 1_000_000 % period == 0 {
                Fps::integer((1_000_000 / period) as u32)
            } else {
                Fps::new(1_000_000, period as u32)
            })
        }
        _ => None,
    };
    Ok((count, fps))
}
