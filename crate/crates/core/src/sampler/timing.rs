//! Source adapters that model read cost and live pacing on a clock.

use std::sync::Arc;
use std::time::Duration;

use super::Clock;
use crate::frame::{Fps, FrameError, FrameSource, RawFrame};

/// Clock time spent reading one frame.
#[derive(Debug, Clone)]
pub enum ReadCost {
    Zero,
    Fixed(Duration),
    /// Per-frame costs; frames beyond the list cost nothing.
    PerFrame(Vec<Duration>),
}

impl ReadCost {
    fn of(&self, index: u64) -> Duration {
        match self {
            ReadCost::Zero => Duration::ZERO,
            ReadCost::Fixed(d) => *d,
            ReadCost::PerFrame(v) => v.get(index as usize).copied().unwrap_or_default(),
        }
    }
}

/// Charges `read_cost` to the clock on every read. With pacing enabled a
/// frame is not available before its pts (relative to the first read), the
/// way a live stream delivers it.
pub struct TimedSource<S> {
    inner: S,
    clock: Arc<dyn Clock>,
    read_cost: ReadCost,
    paced: bool,
    origin: Option<Duration>,
    first_pts: u64,
    index: u64,
}

impl<S: FrameSource> TimedSource<S> {
    pub fn new(inner: S, clock: Arc<dyn Clock>, read_cost: ReadCost) -> Self {
        Self {
            inner,
            clock,
            read_cost,
            paced: false,
            origin: None,
            first_pts: 0,
            index: 0,
        }
    }

    pub fn paced(mut self) -> Self {
        self.paced = true;
        self
    }
}

impl<S: FrameSource> FrameSource for TimedSource<S> {
    fn next_frame(&mut self) -> Result<Option<RawFrame>, FrameError> {
        let frame = self.inner.next_frame()?;
        if let Some(f) = &frame {
            if self.paced {
                let origin = *self.origin.get_or_insert_with(|| {
                    self.first_pts = f.pts_micros;
                    self.clock.now()
                });
                let due = origin + Duration::from_micros(f.pts_micros.saturating_sub(self.first_pts));
                self.clock.wait_until(due);
            }
            self.clock.charge(self.read_cost.of(self.index));
            self.index += 1;
        }
        Ok(frame)
    }

    fn declared_fps(&self) -> Option<Fps> {
        self.inner.declared_fps()
    }

    fn total_frames(&self) -> Option<u64> {
        self.inner.total_frames()
    }
}
