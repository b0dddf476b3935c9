//! Decoded RGB frames and the sources that produce them.
//!
//! Every input (RTMP test codec, external decoder pipe, `.frm0` files,
//! synthetic generator) ends up as a [`FrameSource`] yielding [`RawFrame`]s.

mod decoder;
mod frm0;
mod synthetic;
mod test_codec;

use std::fmt;
use std::sync::OnceLock;
use std::time::Instant;

pub use decoder::{write_flv_header, write_flv_video_tag, ExternalDecoder, TestCodecSource};
pub use frm0::{read_piped_frame, scan_frm0, write_frm0, Frm0Reader, FRM0_MAGIC};
pub use synthetic::{generate_synthetic_stream, SyntheticStream};
pub use test_codec::{decode_test_codec, encode_test_codec, RAWV_MAGIC};

#[derive(Debug, thiserror::Error)]
pub enum FrameError {
    #[error("bad magic {0:?}")]
    BadMagic([u8; 4]),
    #[error("payload length mismatch: expected {expected} bytes, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("stream truncated")]
    Truncated,
    #[error("invalid frame dimensions {width}x{height}")]
    BadDimensions { width: u32, height: u32 },
    #[error("decoder: {0}")]
    Decoder(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Microseconds on a process-wide monotonic clock, used for `recv_mono_micros`.
pub fn mono_micros() -> u64 {
    static ANCHOR: OnceLock<Instant> = OnceLock::new();
    ANCHOR.get_or_init(Instant::now).elapsed().as_micros() as u64
}

/// A decoded RGB8 image travelling through the pipeline.
#[derive(Clone, PartialEq, Eq)]
pub struct RawFrame {
    pub seq: u64,
    pub pts_micros: u64,
    pub recv_mono_micros: u64,
    pub width: u32,
    pub height: u32,
    /// RGB8 interleaved, row-major, `width * height * 3` bytes.
    pub pixels: Vec<u8>,
}

impl RawFrame {
    pub fn new(
        seq: u64,
        pts_micros: u64,
        width: u32,
        height: u32,
        pixels: Vec<u8>,
    ) -> Result<Self, FrameError> {
        if width == 0 || height == 0 {
            return Err(FrameError::BadDimensions { width, height });
        }
        let expected = width as usize * height as usize * 3;
        if pixels.len() != expected {
            return Err(FrameError::LengthMismatch {
                expected,
                actual: pixels.len(),
            });
        }
        Ok(Self {
            seq,
            pts_micros,
            recv_mono_micros: mono_micros(),
            width,
            height,
            pixels,
        })
    }

    /// A frame filled with a single color.
    pub fn solid(seq: u64, pts_micros: u64, width: u32, height: u32, rgb: [u8; 3]) -> Self {
        let pixels = rgb
            .iter()
            .copied()
            .cycle()
            .take(width as usize * height as usize * 3)
            .collect();
        Self::new(seq, pts_micros, width, height, pixels).expect("solid frame dimensions")
    }

    #[inline]
    pub fn pixel(&self, x: u32, y: u32) -> [u8; 3] {
        let i = (y as usize * self.width as usize + x as usize) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }
}

impl fmt::Debug for RawFrame {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("RawFrame")
            .field("seq", &self.seq)
            .field("pts_micros", &self.pts_micros)
            .field("width", &self.width)
            .field("height", &self.height)
            .field("pixels", &format_args!("[{} bytes]", self.pixels.len()))
            .finish()
    }
}

/// A frame rate as an exact ratio, e.g. 30000/1001.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct Fps {
    pub num: u32,
    pub den: u32,
}

impl Fps {
    pub const fn new(num: u32, den: u32) -> Self {
        Self { num, den }
    }

    pub const fn integer(fps: u32) -> Self {
        Self { num: fps, den: 1 }
    }

    pub fn as_f64(&self) -> f64 {
        self.num as f64 / self.den as f64
    }

    /// Presentation time of frame `index` in microseconds.
    pub fn pts_micros(&self, index: u64) -> u64 {
        (index as u128 * 1_000_000 * self.den as u128 / self.num as u128) as u64
    }
}

impl fmt::Display for Fps {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.den == 1 {
            write!(f, "{}", self.num)
        } else {
            write!(f, "{}/{}", self.num, self.den)
        }
    }
}

impl std::str::FromStr for Fps {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (num, den) = match s.split_once('/') {
            Some((n, d)) => (n.trim(), d.trim()),
            None => (s.trim(), "1"),
        };
        let num: u32 = num.parse().map_err(|_| format!("bad fps {s:?}"))?;
        let den: u32 = den.parse().map_err(|_| format!("bad fps {s:?}"))?;
        if num == 0 || den == 0 {
            return Err(format!("fps must be positive, got {s:?}"));
        }
        Ok(Self { num, den })
    }
}

/// Single-consumer stream of decoded frames.
///
/// Once `next_frame` returns `Ok(None)` the source is exhausted and keeps
/// returning `Ok(None)`.
pub trait FrameSource: Send {
    fn next_frame(&mut self) -> Result<Option<RawFrame>, FrameError>;

    fn declared_fps(&self) -> Option<Fps> {
        None
    }

    fn total_frames(&self) -> Option<u64> {
        None
    }
}

impl<S: FrameSource + ?Sized> FrameSource for Box<S> {
    fn next_frame(&mut self) -> Result<Option<RawFrame>, FrameError> {
        (**self).next_frame()
    }

    fn declared_fps(&self) -> Option<Fps> {
        (**self).declared_fps()
    }

    fn total_frames(&self) -> Option<u64> {
        (**self).total_frames()
    }
}

/// In-memory frame list, mostly for tests and uploaded jobs.
pub struct VecSource {
    frames: std::vec::IntoIter<RawFrame>,
    fps: Option<Fps>,
    total: u64,
}

impl VecSource {
    pub fn new(frames: Vec<RawFrame>, fps: Option<Fps>) -> Self {
        let total = frames.len() as u64;
        Self {
            frames: frames.into_iter(),
            fps,
            total,
        }
    }
}

impl FrameSource for VecSource {
    fn next_frame(&mut self) -> Result<Option<RawFrame>, FrameError> {
        Ok(self.frames.next())
    }

    fn declared_fps(&self) -> Option<Fps> {
        self.fps
    }

    fn total_frames(&self) -> Option<u64> {
        Some(self.total)
    }
}
