use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use tracing::{info, warn};

use super::{SessionStatus, Shared};
use crate::detector::{DetectionResult, Detector, DetectorError, DetectorHealth};
use crate::frame::{ExternalDecoder, FrameSource, RawFrame, TestCodecSource};
use crate::overlay::{EventLog, OverlayConfig, OverlaySink};
use crate::rtmp::{latest_slot, EncodedFrame, FrameHandoff, IngestHandler, LatestReceiver};
use crate::sampler::{run_loop, SamplerConfig, SamplerState};

pub(super) struct Ingest {
    shared: Arc<Shared>,
}

impl Ingest {
    pub(super) fn new(shared: Arc<Shared>) -> Self {
        Self { shared }
    }
}

impl IngestHandler for Ingest {
    fn publish_started(&self, stream_key: &str) -> Box<dyn FrameHandoff> {
        let (tx, rx) = latest_slot::<EncodedFrame>();
        *self.shared.session.lock().unwrap() = SessionStatus::Publishing {
            stream_key: stream_key.to_string(),
        };
        let shared = self.shared.clone();
        let key = stream_key.to_string();
        let spawned = std::thread::Builder::new()
            .name("live-pipeline".into())
            .spawn(move || run_live(shared, rx, key));
        match spawned {
            Ok(h) => self.shared.live_threads.lock().unwrap().push(h),
            Err(e) => warn!(error = %e, "cannot start live pipeline"),
        }
        Box::new(tx)
    }

    fn publish_stopped(&self, stream_key: &str) {
        let mut s = self.shared.session.lock().unwrap();
        if matches!(&*s, SessionStatus::Publishing { stream_key: k } if k == stream_key) {
            *s = SessionStatus::Idle;
        }
    }
}

/// Ends when the publisher goes away or the gateway stops.
struct Frames {
    rx: LatestReceiver<EncodedFrame>,
    stop: Arc<AtomicBool>,
}

impl Iterator for Frames {
    type Item = EncodedFrame;

    fn next(&mut self) -> Option<EncodedFrame> {
        loop {
            if self.stop.load(Ordering::Relaxed) {
                return None;
            }
            if let Some(f) = self.rx.recv_timeout(Duration::from_millis(200)) {
                return Some(f);
            }
            if self.rx.is_closed() {
                return None;
            }
        }
    }
}

/// Mirrors the backend's health into the shared status.
struct Monitored<'a> {
    inner: &'a mut dyn Detector,
    health: Arc<Mutex<DetectorHealth>>,
}

impl Detector for Monitored<'_> {
    fn id(&self) -> &str {
        self.inner.id()
    }

    fn detect(&mut self, frame: &RawFrame) -> Result<DetectionResult, DetectorError> {
        let r = self.inner.detect(frame);
        *self.health.lock().unwrap() = self.inner.health();
        r
    }

    fn health(&self) -> DetectorHealth {
        self.inner.health()
    }
}

fn run_live(shared: Arc<Shared>, rx: LatestReceiver<EncodedFrame>, key: String) {
    let cfg = &shared.config;
    let frames = Frames {
        rx,
        stop: shared.stop.clone(),
    };
    let mut src: Box<dyn FrameSource> = match &cfg.decoder {
        Some(cmd) => match ExternalDecoder::spawn(cmd, frames) {
            Ok(d) => Box::new(d),
            Err(e) => {
                warn!(command = %cmd, error = %e, "cannot start decoder");
                return;
            }
        },
        None => Box::new(TestCodecSource::new(frames, None)),
    };

    let taken = shared.live_detector.lock().unwrap().take();
    let mut detector = match taken {
        Some(d) => d,
        // a second concurrent session gets its own backend
        None => match cfg.build_detector(true) {
            Ok(d) => d,
            Err(e) => {
                warn!(error = %e, "cannot start detector for session");
                return;
            }
        },
    };

    let mut sink = OverlaySink::new(OverlayConfig {
        display_threshold: cfg.display_threshold,
        expiry: Duration::from_secs_f64(cfg.overlay_expiry_seconds),
        draw_labels: true,
    })
    .with_metrics(shared.metrics.clone())
    .with_events(shared.events_tx.clone())
    .with_preview(shared.preview_tx.clone(), cfg.jpeg_quality);
    if let Some(path) = &cfg.event_log {
        sink = sink.with_event_log(EventLog::new(path));
    }

    let mut state = match SamplerConfig::new(shared.mailbox.latest(), cfg.sampler_mode) {
        Ok(c) => SamplerState::new(c),
        Err(e) => {
            warn!(error = %e, "bad dc in mailbox");
            return;
        }
    };
    info!(key = %key, dc = state.dc(), mode = ?cfg.sampler_mode, "live pipeline started");
    let controls = shared.loop_controls();
    let report = {
        let mut monitored = Monitored {
            inner: detector.as_mut(),
            health: shared.health.clone(),
        };
        run_loop(&mut src, &mut state, &mut monitored, &mut sink, shared.clock.as_ref(), &controls)
    };
    info!(
        key = %key,
        frames = report.total_frames,
        tvfa = report.tvfa,
        runtime = report.runtime_seconds,
        "live pipeline finished"
    );
    *shared.last_live_report.lock().unwrap() = Some(report);
    let mut slot = shared.live_detector.lock().unwrap();
    if slot.is_none() {
        *slot = Some(detector);
    }
}
