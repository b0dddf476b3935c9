use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{mono_micros, Fps, FrameError, FrameSource, RawFrame};

/// Deterministic pseudo-random frames at a fixed rate.
pub struct SyntheticStream {
    n: u64,
    next: u64,
    width: u32,
    height: u32,
    fps: Fps,
    rng: ChaCha8Rng,
}

pub fn generate_synthetic_stream(n: u64, width: u32, height: u32, fps: Fps, seed: u64) -> SyntheticStream {
    assert!(width > 0 && height > 0, "synthetic frames need non-zero dimensions");
    assert!(fps.num > 0 && fps.den > 0, "fps must be positive");
    SyntheticStream {
        n,
        next: 0,
        width,
        height,
        fps,
        rng: ChaCha8Rng::seed_from_u64(seed),
    }
}

impl FrameSource for SyntheticStream {
    fn next_frame(&mut self) -> Result<Option<RawFrame>, FrameError> {
        if self.next >= self.n {
            return Ok(None);
        }
        let i = self.next;
        self.next += 1;
        let mut pixels = vec![0u8; self.width as usize * self.height as usize * 3];
        self.rng.fill_bytes(&mut pixels);
        Ok(Some(RawFrame {
            seq: i,
            pts_micros: self.fps.pts_micros(i),
            recv_mono_micros: mono_micros(),
            width: self.width,
            height: self.height,
            pixels,
        }))
    }

    fn declared_fps(&self) -> Option<Fps> {
        Some(self.fps)
    }

    fn total_frames(&self) -> Option<u64> {
        Some(self.n)
    }
}
