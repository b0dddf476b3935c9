use std::sync::atomic::{AtomicU64, Ordering};
use std::time::{Duration, Instant};

/// Monotonic time source for the sampling loop.
pub trait Clock: Send + Sync {
    /// Time since the clock's origin. Never decreases.
    fn now(&self) -> Duration;

    /// Accounts for `d` of work that just happened. Only a virtual clock
    /// moves; on a real clock the time has already elapsed.
    fn charge(&self, d: Duration);

    /// Blocks (or jumps, for a virtual clock) until `now() >= t`.
    fn wait_until(&self, t: Duration);

    fn is_virtual(&self) -> bool;
}

#[derive(Debug, Clone)]
pub struct MonotonicClock {
    origin: Instant,
}

impl MonotonicClock {
    pub fn new() -> Self {
        Self { origin: Instant::now() }
    }
}

impl Default for MonotonicClock {
    fn default() -> Self {
        Self::new()
    }
}

impl Clock for MonotonicClock {
    fn now(&self) -> Duration {
        self.origin.elapsed()
    }

    fn charge(&self, _d: Duration) {}

    fn wait_until(&self, t: Duration) {
        let now = self.now();
        if t > now {
            std::thread::sleep(t - now);
        }
    }

    fn is_virtual(&self) -> bool {
        false
    }
}

/// Deterministic clock advanced only by the code under test.
#[derive(Debug, Default)]
pub struct VirtualClock {
    nanos: AtomicU64,
}

impl VirtualClock {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn advance(&self, d: Duration) {
        self.nanos.fetch_add(d.as_nanos() as u64, Ordering::SeqCst);
    }
}

impl Clock for VirtualClock {
    fn now(&self) -> Duration {
        Duration::from_nanos(self.nanos.load(Ordering::SeqCst))
    }

    fn charge(&self, d: Duration) {
        self.advance(d);
    }

    fn wait_until(&self, t: Duration) {
        self.nanos.fetch_max(t.as_nanos() as u64, Ordering::SeqCst);
    }

    fn is_virtual(&self) -> bool {
        true
    }
}
