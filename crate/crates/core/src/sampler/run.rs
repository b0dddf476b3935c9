//! The sampling loop.

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc;
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use tracing::warn;

use super::{Clock, DcChange, DcMailbox, SamplerMode, SamplerState};
use crate::detector::{DetectionResult, Detector, DetectorError};
use crate::frame::{Fps, FrameSource, RawFrame};
use crate::metrics::{self, MetricsState};

/// Receives every source frame, in order, plus detection results as they
/// complete.
pub trait FrameSink {
    /// Called before the frame that follows the result's completion.
    fn on_result(&mut self, result: &DetectionResult, dc: f64);

    fn on_frame(&mut self, frame: RawFrame);
}

impl<K: FrameSink + ?Sized> FrameSink for &mut K {
    fn on_result(&mut self, result: &DetectionResult, dc: f64) {
        (**self).on_result(result, dc)
    }

    fn on_frame(&mut self, frame: RawFrame) {
        (**self).on_frame(frame)
    }
}

/// Counts and discards.
#[derive(Debug, Default)]
pub struct NullSink {
    pub frames: u64,
    pub results: u64,
}

impl FrameSink for NullSink {
    fn on_result(&mut self, _result: &DetectionResult, _dc: f64) {
        self.results += 1;
    }

    fn on_frame(&mut self, _frame: RawFrame) {
        self.frames += 1;
    }
}

/// Hooks shared with the outside world while a loop runs.
#[derive(Clone)]
pub struct LoopControls {
    pub mailbox: Option<DcMailbox>,
    pub metrics: Option<Arc<MetricsState>>,
    pub stop: Option<Arc<AtomicBool>>,
    /// Keep every submission time in the report. Off for unbounded live runs.
    pub record_submissions: bool,
}

impl Default for LoopControls {
    fn default() -> Self {
        Self {
            mailbox: None,
            metrics: None,
            stop: None,
            record_submissions: true,
        }
    }
}

/// Counters and timing of one finished loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub total_frames: u64,
    pub tvfa: u64,
    pub runtime_seconds: f64,
    pub total_video_time_seconds: f64,
    pub declared_fps: Option<Fps>,
    /// dc in effect when the run started.
    pub dc: f64,
    #[serde(default)]
    pub dc_changes: Vec<DcChangeRecord>,
    #[serde(default)]
    pub detector_failures: u64,
    #[serde(default)]
    pub source_error: Option<String>,
    /// Clock time (seconds since run start) of each inference submission.
    #[serde(default)]
    pub submission_times: Vec<f64>,
    #[serde(default)]
    pub max_in_flight: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DcChangeRecord {
    pub at_seconds: f64,
    pub from: f64,
    pub to: f64,
}

impl From<&DcChange> for DcChangeRecord {
    fn from(c: &DcChange) -> Self {
        Self {
            at_seconds: c.at_seconds,
            from: c.from,
            to: c.to,
        }
    }
}

impl RunReport {
    pub fn pfa_percent(&self) -> Option<f64> {
        metrics::pfa_percent(self.tvfa, self.total_frames)
    }

    pub fn pfps(&self) -> Option<f64> {
        metrics::pfps(self.total_frames, self.runtime_seconds)
    }

    /// Completed inferences per second of runtime.
    pub fn inference_rate(&self) -> Option<f64> {
        (self.runtime_seconds > 0.0).then(|| self.tvfa as f64 / self.runtime_seconds)
    }
}

type Outcome = Result<DetectionResult, DetectorError>;

/// Where live-mode inference happens.
trait Lane {
    fn busy(&self) -> bool;
    fn submit(&mut self, frame: &RawFrame, now: Duration);
    /// A completion that is ready at `now`, without blocking.
    fn poll(&mut self, now: Duration) -> Option<Outcome>;
    /// Waits for the in-flight inference, if any.
    fn drain(&mut self) -> Option<Outcome>;
}

/// Inference beside a virtual clock: the detector is called at submission
/// and its result is released once the clock passes submission + latency.
struct VirtualLane<'a, D: ?Sized> {
    detector: &'a mut D,
    clock: &'a dyn Clock,
    pending: Option<(Duration, Outcome)>,
}

impl<D: Detector + ?Sized> Lane for VirtualLane<'_, D> {
    fn busy(&self) -> bool {
        self.pending.is_some()
    }

    fn submit(&mut self, frame: &RawFrame, now: Duration) {
        let outcome = self.detector.detect(frame);
        let latency = outcome
            .as_ref()
            .map(|r| Duration::from_micros(r.latency_micros))
            .unwrap_or_default();
        self.pending = Some((now + latency, outcome));
    }

    fn poll(&mut self, now: Duration) -> Option<Outcome> {
        match &self.pending {
            Some((ready, _)) if *ready <= now => self.pending.take().map(|(_, o)| o),
            _ => None,
        }
    }

    fn drain(&mut self) -> Option<Outcome> {
        let (ready, outcome) = self.pending.take()?;
        self.clock.wait_until(ready);
        Some(outcome)
    }
}

/// Inference on a worker thread, for real clocks.
struct ThreadLane {
    requests: Option<mpsc::SyncSender<RawFrame>>,
    results: mpsc::Receiver<Outcome>,
    in_flight: bool,
}

impl Lane for ThreadLane {
    fn busy(&self) -> bool {
        self.in_flight
    }

    fn submit(&mut self, frame: &RawFrame, _now: Duration) {
        if let Some(tx) = &self.requests {
            if tx.send(frame.clone()).is_ok() {
                self.in_flight = true;
            }
        }
    }

    fn poll(&mut self, _now: Duration) -> Option<Outcome> {
        if !self.in_flight {
            return None;
        }
        let r = match self.results.try_recv() {
            Ok(o) => Some(o),
            Err(mpsc::TryRecvError::Empty) => return None,
            Err(mpsc::TryRecvError::Disconnected) => Some(Err(DetectorError::ProcessDead)),
        };
        self.in_flight = false;
        r
    }

    fn drain(&mut self) -> Option<Outcome> {
        self.requests.take();
        if !self.in_flight {
            return None;
        }
        self.in_flight = false;
        Some(self.results.recv().unwrap_or(Err(DetectorError::ProcessDead)))
    }
}

struct Loop<'a, S: ?Sized, K: ?Sized> {
    src: &'a mut S,
    state: &'a mut SamplerState,
    sink: &'a mut K,
    clock: &'a dyn Clock,
    controls: &'a LoopControls,
    run_start: Duration,
    mailbox_seen: u64,
    total: u64,
    tvfa: u64,
    failures: u64,
    in_flight: u32,
    max_in_flight: u32,
    submissions: Vec<f64>,
    source_error: Option<String>,
}

impl<S: FrameSource + ?Sized, K: FrameSink + ?Sized> Loop<'_, S, K> {
    fn stopped(&self) -> bool {
        self.controls
            .stop
            .as_ref()
            .is_some_and(|s| s.load(Ordering::Relaxed))
    }

    fn poll_mailbox(&mut self) {
        let Some(mb) = &self.controls.mailbox else { return };
        if let Some(dc) = mb.take_newer(&mut self.mailbox_seen) {
            // the mailbox validated it already
            let _ = self.state.set_dc(dc, self.clock.now().saturating_sub(self.run_start));
            if let Some(m) = &self.controls.metrics {
                m.set_dc(dc);
            }
        }
    }

    fn read(&mut self) -> Option<RawFrame> {
        match self.src.next_frame() {
            Ok(Some(f)) => {
                self.total += 1;
                if let Some(m) = &self.controls.metrics {
                    m.record_frame(f.pts_micros);
                }
                Some(f)
            }
            Ok(None) => None,
            Err(e) => {
                warn!(error = %e, "frame source failed, ending run");
                self.source_error = Some(e.to_string());
                None
            }
        }
    }

    fn submitted(&mut self, now: Duration) {
        self.in_flight += 1;
        self.max_in_flight = self.max_in_flight.max(self.in_flight);
        if self.controls.record_submissions {
            self.submissions
                .push(now.saturating_sub(self.run_start).as_secs_f64());
        }
    }

    fn complete(&mut self, outcome: Outcome) {
        self.in_flight -= 1;
        match outcome {
            Ok(r) => {
                self.tvfa += 1;
                if let Some(m) = &self.controls.metrics {
                    m.record_inference(r.latency_micros);
                }
                self.sink.on_result(&r, self.state.dc());
            }
            Err(e) => {
                warn!(error = %e, "detector failed, frame skipped");
                self.failures += 1;
                self.state.frames_inferenced -= 1;
                if let Some(m) = &self.controls.metrics {
                    m.record_failure();
                }
            }
        }
    }

    fn offline<D: Detector + ?Sized>(&mut self, detector: &mut D) {
        while !self.stopped() {
            self.poll_mailbox();
            let Some(frame) = self.read() else { break };
            let now = self.clock.now();
            if self.state.gate(now) {
                self.submitted(now);
                let outcome = detector.detect(&frame);
                if let Ok(r) = &outcome {
                    self.clock.charge(Duration::from_micros(r.latency_micros));
                }
                self.complete(outcome);
            }
            self.sink.on_frame(frame);
        }
    }

    fn live(&mut self, lane: &mut dyn Lane) {
        while !self.stopped() {
            self.poll_mailbox();
            let Some(frame) = self.read() else { break };
            let now = self.clock.now();
            if let Some(outcome) = lane.poll(now) {
                self.complete(outcome);
            }
            if lane.busy() {
                self.state.skip();
            } else if self.state.gate(now) {
                self.submitted(now);
                lane.submit(&frame, now);
            }
            self.sink.on_frame(frame);
        }
        if let Some(outcome) = lane.drain() {
            self.complete(outcome);
        }
    }
}

/// Runs the sampling loop until the source is exhausted, fails, or the
/// stop flag is raised.
///
/// Offline mode calls the detector inline and charges its latency to the
/// clock. Live mode keeps at most one inference in flight; frames that
/// pass the gate while it is busy are skipped without moving the gate.
/// Each frame is forwarded to the sink after any result it makes visible.
pub fn run_loop<S, D, K>(
    src: &mut S,
    state: &mut SamplerState,
    detector: &mut D,
    sink: &mut K,
    clock: &dyn Clock,
    controls: &LoopControls,
) -> RunReport
where
    S: FrameSource + ?Sized,
    D: Detector + ?Sized,
    K: FrameSink + ?Sized,
{
    let run_start = clock.now();
    state.start_time = run_start;
    let declared_fps = src.declared_fps();
    let dc = state.dc();
    let changes_before = state.dc_changes.len();
    if let Some(m) = &controls.metrics {
        m.begin_run(run_start, declared_fps, dc);
    }
    let mode = state.config.mode;
    let mut lp = Loop {
        src,
        state,
        sink,
        clock,
        controls,
        run_start,
        mailbox_seen: 0,
        total: 0,
        tvfa: 0,
        failures: 0,
        in_flight: 0,
        max_in_flight: 0,
        submissions: Vec::new(),
        source_error: None,
    };
    if let Some(mb) = &controls.mailbox {
        // only updates posted after the run starts are news
        mb.take_newer(&mut lp.mailbox_seen);
    }

    match mode {
        SamplerMode::OfflineBlocking => lp.offline(detector),
        SamplerMode::LiveLatestWins if clock.is_virtual() => {
            let mut lane = VirtualLane {
                detector,
                clock,
                pending: None,
            };
            lp.live(&mut lane);
        }
        SamplerMode::LiveLatestWins => std::thread::scope(|scope| {
            let (req_tx, req_rx) = mpsc::sync_channel::<RawFrame>(1);
            let (res_tx, res_rx) = mpsc::channel();
            scope.spawn(move || {
                for frame in req_rx {
                    if res_tx.send(detector.detect(&frame)).is_err() {
                        break;
                    }
                }
            });
            let mut lane = ThreadLane {
                requests: Some(req_tx),
                results: res_rx,
                in_flight: false,
            };
            lp.live(&mut lane);
        }),
    }

    let end = clock.now();
    if let Some(m) = &controls.metrics {
        m.end_run(end);
    }
    let total = lp.total;
    let total_video_time_seconds = declared_fps
        .map(|f| total as f64 / f.as_f64())
        .unwrap_or(0.0);
    RunReport {
        total_frames: total,
        tvfa: lp.tvfa,
        runtime_seconds: end.saturating_sub(run_start).as_secs_f64(),
        total_video_time_seconds,
        declared_fps,
        dc,
        dc_changes: lp.state.dc_changes[changes_before..].iter().map(Into::into).collect(),
        detector_failures: lp.failures,
        source_error: lp.source_error,
        submission_times: lp.submissions,
        max_in_flight: lp.max_in_flight,
    }
}
