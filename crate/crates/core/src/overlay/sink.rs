use std::sync::Arc;

use bytes::Bytes;
use tokio::sync::broadcast;
use tracing::warn;

use super::{compose_frame, encode_preview, events_for, now_rfc3339, update_overlay};
use super::{DetectionEvent, EventLog, OverlayConfig, OverlayState, DEFAULT_JPEG_QUALITY};
use crate::detector::DetectionResult;
use crate::frame::RawFrame;
use crate::metrics::MetricsState;
use crate::sampler::FrameSink;

/// Per-frame overlay bookkeeping, kept when tracing is enabled.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrameTrace {
    pub seq: u64,
    pub overlay_from_seq: Option<u64>,
    pub lag_frames: u64,
    pub result_age_frames: Option<u64>,
}

/// Pipeline sink that keeps the overlay, writes the event log, and fans
/// annotated JPEGs and events out to monitors. Sends never wait for
/// receivers; a lagging monitor loses its oldest items.
pub struct OverlaySink {
    state: OverlayState,
    config: OverlayConfig,
    jpeg_quality: u8,
    event_log: Option<EventLog>,
    metrics: Option<Arc<MetricsState>>,
    events_tx: Option<broadcast::Sender<DetectionEvent>>,
    preview_tx: Option<broadcast::Sender<Bytes>>,
    trace: Option<Vec<FrameTrace>>,
    frames_out: u64,
    log_failed: bool,
}

impl OverlaySink {
    pub fn new(config: OverlayConfig) -> Self {
        Self {
            state: OverlayState::default(),
            config,
            jpeg_quality: DEFAULT_JPEG_QUALITY,
            event_log: None,
            metrics: None,
            events_tx: None,
            preview_tx: None,
            trace: None,
            frames_out: 0,
            log_failed: false,
        }
    }

    pub fn with_event_log(mut self, log: EventLog) -> Self {
        self.event_log = Some(log);
        self
    }

    pub fn with_metrics(mut self, metrics: Arc<MetricsState>) -> Self {
        self.metrics = Some(metrics);
        self
    }

    pub fn with_events(mut self, tx: broadcast::Sender<DetectionEvent>) -> Self {
        self.events_tx = Some(tx);
        self
    }

    pub fn with_preview(mut self, tx: broadcast::Sender<Bytes>, quality: u8) -> Self {
        self.preview_tx = Some(tx);
        self.jpeg_quality = quality;
        self
    }

    pub fn with_trace(mut self) -> Self {
        self.trace = Some(Vec::new());
        self
    }

    pub fn trace(&self) -> &[FrameTrace] {
        self.trace.as_deref().unwrap_or_default()
    }

    pub fn frames_out(&self) -> u64 {
        self.frames_out
    }

    pub fn state(&self) -> &OverlayState {
        &self.state
    }
}

impl FrameSink for OverlaySink {
    fn on_result(&mut self, result: &DetectionResult, dc: f64) {
        let ts = now_rfc3339();
        for event in events_for(result, dc, &ts) {
            if let Some(log) = &mut self.event_log {
                match log.append(&event) {
                    Ok(()) => self.log_failed = false,
                    Err(e) => {
                        if !self.log_failed {
                            warn!(path = %log.path().display(), error = %e, "event log write failed");
                        }
                        self.log_failed = true;
                        if let Some(m) = &self.metrics {
                            m.record_event_log_error();
                        }
                    }
                }
            }
            if let Some(tx) = &self.events_tx {
                let _ = tx.send(event);
            }
        }
        if !update_overlay(&mut self.state, result.clone()) {
            if let Some(m) = &self.metrics {
                m.record_dropped_result();
            }
        }
    }

    fn on_frame(&mut self, frame: RawFrame) {
        let af = compose_frame(frame, &mut self.state, &self.config);
        self.frames_out += 1;
        if let Some(trace) = &mut self.trace {
            trace.push(FrameTrace {
                seq: af.frame.seq,
                overlay_from_seq: af.overlay_from_seq,
                lag_frames: af.lag_frames,
                result_age_frames: af.result_age_frames,
            });
        }
        if let Some(tx) = &self.preview_tx {
            if tx.receiver_count() > 0 {
                match encode_preview(&af, self.jpeg_quality) {
                    Ok(jpg) => {
                        let _ = tx.send(Bytes::from(jpg));
                    }
                    Err(e) => warn!(error = %e, "preview encoding failed"),
                }
            }
        }
    }
}
