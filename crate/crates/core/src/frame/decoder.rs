//! External decoder boundary for real codecs.
//!
//! The decoder process reads an FLV byte stream (header plus video tags) on
//! stdin and writes FRM0 records on stdout. Nothing codec-specific is linked.

use std::io::{self, BufReader, Write};
use std::process::{Child, ChildStdout, Command, Stdio};
use std::thread::JoinHandle;

use tracing::{debug, warn};

use super::{decode_test_codec, Fps, FrameError, FrameSource, Frm0Reader, RawFrame};
use crate::rtmp::EncodedFrame;

pub fn write_flv_header<W: Write>(w: &mut W) -> io::Result<()> {
    // signature, version 1, video-only flag, header size 9, PreviousTagSize0
    w.write_all(&[b'F', b'L', b'V', 1, 0x01, 0, 0, 0, 9, 0, 0, 0, 0])
}

pub fn write_flv_video_tag<W: Write>(w: &mut W, ef: &EncodedFrame) -> io::Result<()> {
    let mut data = Vec::with_capacity(ef.payload.len() + 5);
    data.push((ef.frame_type.nibble() << 4) | (ef.codec_id & 0x0F));
    if let Some(kind) = ef.avc_packet_type {
        data.push(kind);
        let cto = ef.composition_offset.unwrap_or(0);
        data.extend_from_slice(&cto.to_be_bytes()[1..]);
    }
    data.extend_from_slice(&ef.payload);

    let size = data.len() as u32;
    let mut tag = Vec::with_capacity(11 + data.len() + 4);
    tag.push(9);
    tag.extend_from_slice(&size.to_be_bytes()[1..]);
    tag.extend_from_slice(&ef.dts.to_be_bytes()[1..]);
    tag.push((ef.dts >> 24) as u8);
    tag.extend_from_slice(&[0, 0, 0]);
    tag.extend_from_slice(&data);
    tag.extend_from_slice(&(11 + size).to_be_bytes());
    w.write_all(&tag)
}

/// An operator-configured decoder process, run through `sh -c`.
pub struct ExternalDecoder {
    child: Child,
    output: Frm0Reader<BufReader<ChildStdout>>,
    feeder: Option<JoinHandle<()>>,
}

impl ExternalDecoder {
    /// Spawns `command` and starts feeding it `input` on a background thread.
    pub fn spawn<I>(command: &str, input: I) -> io::Result<Self>
    where
        I: Iterator<Item = EncodedFrame> + Send + 'static,
    {
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(command)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()?;
        let mut stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        let feeder = std::thread::Builder::new()
            .name("decoder-feed".into())
            .spawn(move || {
                if let Err(e) = write_flv_header(&mut stdin) {
                    warn!(error = %e, "decoder rejected FLV header");
                    return;
                }
                for ef in input {
                    if let Err(e) = write_flv_video_tag(&mut stdin, &ef).and_then(|_| stdin.flush()) {
                        warn!(error = %e, "decoder input closed");
                        return;
                    }
                }
                debug!("decoder input exhausted");
            })?;
        Ok(Self {
            child,
            output: Frm0Reader::new(BufReader::new(stdout)),
            feeder: Some(feeder),
        })
    }
}

impl FrameSource for ExternalDecoder {
    fn next_frame(&mut self) -> Result<Option<RawFrame>, FrameError> {
        self.output.next_frame()
    }
}

impl Drop for ExternalDecoder {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
        if let Some(h) = self.feeder.take() {
            let _ = h.join();
        }
    }
}

/// Decodes RAWV test-codec frames from an encoded-frame iterator. Frames
/// that are not RAWV (codec configuration records, say) are skipped.
pub struct TestCodecSource<I> {
    input: I,
    fps: Option<Fps>,
    done: bool,
}

impl<I> TestCodecSource<I> {
    pub fn new(input: I, fps: Option<Fps>) -> Self {
        Self {
            input,
            fps,
            done: false,
        }
    }
}

impl<I: Iterator<Item = EncodedFrame> + Send> FrameSource for TestCodecSource<I> {
    fn next_frame(&mut self) -> Result<Option<RawFrame>, FrameError> {
        while !self.done {
            match self.input.next() {
                None => self.done = true,
                Some(ef) => match decode_test_codec(&ef) {
                    Ok(f) => return Ok(Some(f)),
                    Err(FrameError::BadMagic(_)) | Err(FrameError::Truncated) => {
                        debug!(seq = ef.seq, "skipping non-RAWV video message");
                    }
                    Err(e) => return Err(e),
                },
            }
        }
        Ok(None)
    }

    fn declared_fps(&self) -> Option<Fps> {
        self.fps
    }
}
