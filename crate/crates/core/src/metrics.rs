//! Processing metrics and the benchmark table format.
//!
//! PFA is `tvfa * 100 / total_frames`, PFPS is `total_frames / runtime`.
//! Values are kept at full precision; only rendering cuts them to two
//! decimals, by truncation.

use std::sync::Mutex;
use std::time::Duration;

use serde::Serialize;

use crate::frame::Fps;
use crate::sampler::RunReport;

pub fn pfa_percent(tvfa: u64, total_frames: u64) -> Option<f64> {
    (total_frames > 0).then(|| tvfa as f64 * 100.0 / total_frames as f64)
}

pub fn pfps(total_frames: u64, runtime_seconds: f64) -> Option<f64> {
    (runtime_seconds > 0.0).then(|| total_frames as f64 / runtime_seconds)
}

/// Two-decimal display value, truncated toward zero. The epsilon keeps
/// exact decimals such as 0.29 from printing as 0.28.
pub fn truncate_2dp(x: f64) -> f64 {
    let t = (x.abs() * 100.0 + 1e-9).floor() / 100.0;
    t.copysign(x)
}

pub fn format_2dp(x: Option<f64>) -> String {
    match x {
        Some(v) if v.is_finite() => format!("{:.2}", truncate_2dp(v)),
        _ => "NA".to_string(),
    }
}

/// Point-in-time metrics. Derived fields are `None` (JSON `null`) when
/// their denominator is zero.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsSnapshot {
    pub dc: f64,
    pub video_frame_rate: Option<f64>,
    pub total_video_frames: u64,
    pub tvfa: u64,
    pub pfa_percent: Option<f64>,
    pub runtime_seconds: f64,
    pub total_video_time_seconds: Option<f64>,
    pub pfps: Option<f64>,
}

/// Counters outside the published snapshot.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Counters {
    pub dropped_results: u64,
    pub detector_failures: u64,
    pub event_log_errors: u64,
    pub latency_min_ms: Option<f64>,
    pub latency_mean_ms: Option<f64>,
    pub latency_max_ms: Option<f64>,
}

#[derive(Debug, Default)]
struct Inner {
    dc: f64,
    total_frames: u64,
    tvfa: u64,
    dropped_results: u64,
    detector_failures: u64,
    event_log_errors: u64,
    run_start: Option<Duration>,
    run_end: Option<Duration>,
    declared_fps: Option<Fps>,
    first_pts: Option<u64>,
    last_pts: u64,
    latency_count: u64,
    latency_sum_us: u64,
    latency_min_us: u64,
    latency_max_us: u64,
}

impl Inner {
    fn frame_rate(&self) -> Option<f64> {
        if let Some(fps) = self.declared_fps {
            return Some(fps.as_f64());
        }
        let first = self.first_pts?;
        let span = self.last_pts.checked_sub(first)?;
        (self.total_frames > 1 && span > 0)
            .then(|| (self.total_frames - 1) as f64 * 1e6 / span as f64)
    }
}

/// Shared live counters. One pipeline writes; any thread may snapshot.
#[derive(Debug, Default)]
pub struct MetricsState {
    inner: Mutex<Inner>,
}

impl MetricsState {
    pub fn new(dc: f64) -> Self {
        Self {
            inner: Mutex::new(Inner {
                dc,
                ..Inner::default()
            }),
        }
    }

    fn with<T>(&self, f: impl FnOnce(&mut Inner) -> T) -> T {
        f(&mut self.inner.lock().unwrap_or_else(|e| e.into_inner()))
    }

    /// Starts a new run, clearing the per-run counters.
    pub fn begin_run(&self, now: Duration, declared_fps: Option<Fps>, dc: f64) {
        self.with(|m| {
            *m = Inner {
                dc,
                declared_fps,
                run_start: Some(now),
                ..Inner::default()
            }
        });
    }

    pub fn end_run(&self, now: Duration) {
        self.with(|m| m.run_end = Some(now));
    }

    pub fn record_frame(&self, pts_micros: u64) {
        self.with(|m| {
            m.total_frames += 1;
            m.first_pts.get_or_insert(pts_micros);
            m.last_pts = pts_micros;
        });
    }

    pub fn record_inference(&self, latency_micros: u64) {
        self.with(|m| {
            m.tvfa += 1;
            if m.latency_count == 0 {
                m.latency_min_us = latency_micros;
                m.latency_max_us = latency_micros;
            }
            m.latency_count += 1;
            m.latency_sum_us += latency_micros;
            m.latency_min_us = m.latency_min_us.min(latency_micros);
            m.latency_max_us = m.latency_max_us.max(latency_micros);
        });
    }

    pub fn record_failure(&self) {
        self.with(|m| m.detector_failures += 1);
    }

    pub fn record_dropped_result(&self) {
        self.with(|m| m.dropped_results += 1);
    }

    pub fn record_event_log_error(&self) {
        self.with(|m| m.event_log_errors += 1);
    }

    pub fn set_dc(&self, dc: f64) {
        self.with(|m| m.dc = dc);
    }

    pub fn dc(&self) -> f64 {
        self.with(|m| m.dc)
    }

    pub fn snapshot(&self, now: Duration) -> MetricsSnapshot {
        self.with(|m| {
            let runtime_seconds = match (m.run_start, m.run_end) {
                (Some(s), Some(e)) => e.saturating_sub(s).as_secs_f64(),
                (Some(s), None) => now.saturating_sub(s).as_secs_f64(),
                _ => 0.0,
            };
            let video_frame_rate = m.frame_rate();
            MetricsSnapshot {
                dc: m.dc,
                video_frame_rate,
                total_video_frames: m.total_frames,
                tvfa: m.tvfa,
                pfa_percent: pfa_percent(m.tvfa, m.total_frames),
                runtime_seconds,
                total_video_time_seconds: video_frame_rate
                    .filter(|r| *r > 0.0)
                    .map(|r| m.total_frames as f64 / r),
                pfps: pfps(m.total_frames, runtime_seconds),
            }
        })
    }

    pub fn counters(&self) -> Counters {
        self.with(|m| {
            let ms = |us: u64| us as f64 / 1000.0;
            let any = m.latency_count > 0;
            Counters {
                dropped_results: m.dropped_results,
                detector_failures: m.detector_failures,
                event_log_errors: m.event_log_errors,
                latency_min_ms: any.then(|| ms(m.latency_min_us)),
                latency_mean_ms: any.then(|| m.latency_sum_us as f64 / m.latency_count as f64 / 1000.0),
                latency_max_ms: any.then(|| ms(m.latency_max_us)),
            }
        })
    }
}

pub const TABLE_HEADER: &str = "DC,PFA_percent,Runtime_s,PFPS,TVFA";

/// Benchmark rows as CSV, ordered by descending DC.
pub fn render_table(rows: &[RunReport]) -> String {
    let mut rows: Vec<&RunReport> = rows.iter().collect();
    rows.sort_by(|a, b| b.dc.total_cmp(&a.dc));
    let mut out = String::from(TABLE_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.dc,
            format_2dp(r.pfa_percent()),
            format_2dp(Some(r.runtime_seconds)),
            format_2dp(r.pfps()),
            r.tvfa
        ));
    }
    out
}
