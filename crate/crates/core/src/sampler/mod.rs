//! Time-gated frame sampling.
//!
//! A frame is sent to the detector only when more than `dc_seconds` of
//! clock time has passed since the previous submission. Every frame still
//! flows to the sink, so playback speed is unaffected by how many frames
//! are inferenced.

mod clock;
mod run;
mod timing;

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use tracing::{info, warn};

pub use clock::{Clock, MonotonicClock, VirtualClock};
pub use run::{run_loop, FrameSink, LoopControls, NullSink, RunReport};
pub use timing::{ReadCost, TimedSource};

/// Operating range seen in practice; values outside are legal but logged.
pub const DC_RANGE: (f64, f64) = (0.0001, 1.0);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplerMode {
    /// Inference runs inline; the loop stalls for the detector's latency.
    OfflineBlocking,
    /// Inference runs beside the loop with at most one frame in flight.
    LiveLatestWins,
}

impl std::str::FromStr for SamplerMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "offline" | "offline_blocking" => Ok(SamplerMode::OfflineBlocking),
            "live" | "live_latest_wins" => Ok(SamplerMode::LiveLatestWins),
            _ => Err(format!("unknown sampler mode {s:?} (expected offline or live)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub dc_seconds: f64,
    pub mode: SamplerMode,
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum SamplerError {
    #[error("dc must be a non-negative number of seconds, got {0}")]
    NegativeDc(f64),
}

fn check_dc(dc: f64) -> Result<f64, SamplerError> {
    if !dc.is_finite() || dc < 0.0 {
        return Err(SamplerError::NegativeDc(dc));
    }
    if dc < DC_RANGE.0 || dc > DC_RANGE.1 {
        warn!(dc, "dc outside the usual [0.0001, 1] range");
    }
    Ok(dc)
}

impl SamplerConfig {
    pub fn new(dc_seconds: f64, mode: SamplerMode) -> Result<Self, SamplerError> {
        Ok(Self {
            dc_seconds: check_dc(dc_seconds)?,
            mode,
        })
    }
}

/// A recorded runtime change of the sampling interval.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DcChange {
    pub at_seconds: f64,
    pub from: f64,
    pub to: f64,
}

#[derive(Debug, Clone)]
pub struct SamplerState {
    pub start_time: Duration,
    pub config: SamplerConfig,
    pub frames_seen: u64,
    pub frames_inferenced: u64,
    pub dc_changes: Vec<DcChange>,
}

impl SamplerState {
    pub fn new(config: SamplerConfig) -> Self {
        Self {
            start_time: Duration::ZERO,
            config,
            frames_seen: 0,
            frames_inferenced: 0,
            dc_changes: Vec::new(),
        }
    }

    pub fn dc(&self) -> f64 {
        self.config.dc_seconds
    }

    /// The sampling decision for one frame at time `now`. Fires when the
    /// elapsed time strictly exceeds dc, and restarts the interval at `now`.
    pub fn gate(&mut self, now: Duration) -> bool {
        self.frames_seen += 1;
        let elapsed = now.saturating_sub(self.start_time).as_secs_f64();
        if elapsed > self.config.dc_seconds {
            self.start_time = now;
            self.frames_inferenced += 1;
            true
        } else {
            false
        }
    }

    /// Counts a frame that was not offered to the gate (detector busy).
    pub fn skip(&mut self) {
        self.frames_seen += 1;
    }

    pub fn set_dc(&mut self, dc: f64, now: Duration) -> Result<(), SamplerError> {
        let dc = check_dc(dc)?;
        let change = DcChange {
            at_seconds: now.as_secs_f64(),
            from: self.config.dc_seconds,
            to: dc,
        };
        info!(from = change.from, to = change.to, at = change.at_seconds, "dc changed");
        self.dc_changes.push(change);
        self.config.dc_seconds = dc;
        Ok(())
    }
}

/// Thread-safe mailbox carrying dc updates into the pipeline loop.
#[derive(Debug, Clone)]
pub struct DcMailbox {
    inner: Arc<MailboxInner>,
}

#[derive(Debug)]
struct MailboxInner {
    bits: AtomicU64,
    generation: AtomicU64,
}

impl DcMailbox {
    pub fn new(initial: f64) -> Self {
        Self {
            inner: Arc::new(MailboxInner {
                bits: AtomicU64::new(initial.to_bits()),
                generation: AtomicU64::new(0),
            }),
        }
    }

    /// Validates and posts a new value; the loop picks it up before its next gate.
    pub fn post(&self, dc: f64) -> Result<f64, SamplerError> {
        let dc = check_dc(dc)?;
        self.inner.bits.store(dc.to_bits(), Ordering::SeqCst);
        self.inner.generation.fetch_add(1, Ordering::SeqCst);
        Ok(dc)
    }

    pub fn latest(&self) -> f64 {
        f64::from_bits(self.inner.bits.load(Ordering::SeqCst))
    }

    /// Returns the posted value if it was posted after `seen`, updating `seen`.
    pub fn take_newer(&self, seen: &mut u64) -> Option<f64> {
        let generation = self.inner.generation.load(Ordering::SeqCst);
        if generation == *seen {
            return None;
        }
        *seen = generation;
        Some(self.latest())
    }
}
