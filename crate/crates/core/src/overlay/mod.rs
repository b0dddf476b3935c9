//! Last-known detections drawn on every outgoing frame.

mod events;
mod font;
mod sink;

use std::time::Duration;

use image::codecs::jpeg::JpegEncoder;
use image::ExtendedColorType;

use crate::detector::{BoundingBox, DetectionResult};
use crate::frame::RawFrame;

pub use events::{events_for, now_rfc3339, DetectionEvent, EventLog};
pub use sink::{FrameTrace, OverlaySink};

pub const DEFAULT_JPEG_QUALITY: u8 = 80;
pub const BORDER_PX: u32 = 3;
const TEXT_SCALE: u32 = 2;

pub const PALETTE: [[u8; 3]; 8] = [
    [230, 25, 75],
    [60, 180, 75],
    [255, 225, 25],
    [0, 130, 200],
    [245, 130, 48],
    [145, 30, 180],
    [70, 240, 240],
    [240, 50, 230],
];

#[derive(Debug, thiserror::Error)]
pub enum OverlayError {
    #[error("jpeg quality must be in 1..=100, got {0}")]
    InvalidQuality(u8),
    #[error("jpeg encoding failed: {0}")]
    EncodeFailure(String),
}

#[derive(Debug, Clone)]
pub struct OverlayConfig {
    /// Detections scoring below this are logged but not drawn.
    pub display_threshold: f64,
    /// Boxes disappear once the stream has moved this far past the result.
    pub expiry: Duration,
    pub draw_labels: bool,
}

impl Default for OverlayConfig {
    fn default() -> Self {
        Self {
            display_threshold: 0.5,
            expiry: Duration::from_secs(5),
            draw_labels: true,
        }
    }
}

/// FNV-1a, so colors stay fixed across builds.
pub fn class_color(label: &str) -> [u8; 3] {
    let mut h: u32 = 0x811c_9dc5;
    for b in label.bytes() {
        h ^= b as u32;
        h = h.wrapping_mul(0x0100_0193);
    }
    PALETTE[(h % PALETTE.len() as u32) as usize]
}

#[derive(Debug, Clone, Default)]
pub struct OverlayState {
    pub current: Option<DetectionResult>,
    /// Seq of the first frame the current result was drawn on.
    pub applied_since_seq: u64,
    /// pts of that frame, set when it is composed.
    pub applied_pts: Option<u64>,
    /// Frames composed since the current result arrived.
    pub staleness_frames: u64,
    last_frame_seq: Option<u64>,
}

/// Replaces the current result unless `r` is older than it. Returns false
/// when the result was dropped.
pub fn update_overlay(st: &mut OverlayState, r: DetectionResult) -> bool {
    if st.current.as_ref().is_some_and(|c| r.frame_seq < c.frame_seq) {
        return false;
    }
    st.current = Some(r);
    st.applied_since_seq = st.last_frame_seq.map_or(0, |s| s + 1);
    st.applied_pts = None;
    st.staleness_frames = 0;
    true
}

#[derive(Debug, Clone)]
pub struct AnnotatedFrame {
    pub frame: RawFrame,
    /// First frame carrying the drawn overlay, if one is drawn.
    pub overlay_from_seq: Option<u64>,
    /// `frame.seq - overlay_from_seq`, or 0 without an overlay.
    pub lag_frames: u64,
    /// Frames between the inferenced frame and this one.
    pub result_age_frames: Option<u64>,
}

/// Inclusive pixel rectangle after clipping, or None when nothing is visible.
fn clip(b: &BoundingBox, w: u32, h: u32) -> Option<(u32, u32, u32, u32)> {
    let (wmax, hmax) = ((w - 1) as f64, (h - 1) as f64);
    if !b.is_valid() || b.x_max < 0.0 || b.y_max < 0.0 || b.x_min > wmax || b.y_min > hmax {
        return None;
    }
    let x0 = b.x_min.max(0.0).floor() as u32;
    let y0 = b.y_min.max(0.0).floor() as u32;
    let x1 = b.x_max.min(wmax).floor() as u32;
    let y1 = b.y_max.min(hmax).floor() as u32;
    Some((x0, y0, x1, y1))
}

fn put(frame: &mut RawFrame, x: u32, y: u32, rgb: [u8; 3]) {
    let i = (y as usize * frame.width as usize + x as usize) * 3;
    frame.pixels[i..i + 3].copy_from_slice(&rgb);
}

/// A 3-px border lying inside the (clipped) box, inclusive of its corners.
fn draw_rect(frame: &mut RawFrame, (x0, y0, x1, y1): (u32, u32, u32, u32), rgb: [u8; 3]) {
    for y in y0..=y1 {
        for x in x0..=x1 {
            let edge = x < x0 + BORDER_PX || x + BORDER_PX > x1 || y < y0 + BORDER_PX || y + BORDER_PX > y1;
            if edge {
                put(frame, x, y, rgb);
            }
        }
    }
}

/// Draws `text` with its top-left corner at (x, y), clipped to x1/y1 inclusive.
fn draw_string(frame: &mut RawFrame, text: &str, (x, y): (u32, u32), (x1, y1): (u32, u32), rgb: [u8; 3]) {
    let advance = (font::GLYPH_W + 1) * TEXT_SCALE;
    for (i, c) in text.chars().enumerate() {
        let gx = x + i as u32 * advance;
        if gx > x1 {
            break;
        }
        for (row, bits) in font::glyph(c).iter().enumerate() {
            for col in 0..font::GLYPH_W {
                if bits & (1 << (font::GLYPH_W - 1 - col)) == 0 {
                    continue;
                }
                for dy in 0..TEXT_SCALE {
                    for dx in 0..TEXT_SCALE {
                        let px = gx + col * TEXT_SCALE + dx;
                        let py = y + row as u32 * TEXT_SCALE + dy;
                        if px <= x1 && py <= y1 {
                            put(frame, px, py, rgb);
                        }
                    }
                }
            }
        }
    }
}

/// Text drawn inside the border, clipped to the box interior.
fn draw_label(frame: &mut RawFrame, text: &str, (x0, y0, x1, y1): (u32, u32, u32, u32), rgb: [u8; 3]) {
    if x1 < BORDER_PX || y1 < BORDER_PX {
        return;
    }
    let origin = (x0 + BORDER_PX + 1, y0 + BORDER_PX + 1);
    draw_string(frame, text, origin, (x1 - BORDER_PX, y1 - BORDER_PX), rgb);
}

/// A dark frame with centered text, shown to monitors while no stream is live.
pub fn placeholder_frame(width: u32, height: u32, text: &str) -> RawFrame {
    let mut f = RawFrame::solid(0, 0, width, height, [24, 24, 24]);
    let text_w = text.chars().count() as u32 * (font::GLYPH_W + 1) * TEXT_SCALE;
    let x = width.saturating_sub(text_w) / 2;
    let y = height.saturating_sub(7 * TEXT_SCALE) / 2;
    draw_string(&mut f, text, (x, y), (width - 1, height - 1), [200, 200, 200]);
    f
}

/// Draws the current overlay on `f`. Pixels outside every drawn box are
/// left untouched.
pub fn compose_frame(mut f: RawFrame, st: &mut OverlayState, cfg: &OverlayConfig) -> AnnotatedFrame {
    st.last_frame_seq = Some(f.seq);
    let mut out = AnnotatedFrame {
        overlay_from_seq: None,
        lag_frames: 0,
        result_age_frames: None,
        frame: RawFrame::solid(0, 0, 1, 1, [0; 3]),
    };
    if let Some(r) = &st.current {
        if st.applied_pts.is_some() {
            st.staleness_frames += 1;
        }
        let applied_pts = *st.applied_pts.get_or_insert(f.pts_micros);
        let expired = f.pts_micros.saturating_sub(applied_pts) > cfg.expiry.as_micros() as u64;
        if !expired {
            for d in r.detections.iter().filter(|d| d.score >= cfg.display_threshold) {
                let Some(rect) = clip(&d.bbox, f.width, f.height) else { continue };
                let color = class_color(&d.label);
                draw_rect(&mut f, rect, color);
                if cfg.draw_labels {
                    draw_label(&mut f, &format!("{} {:.2}", d.label, d.score), rect, color);
                }
            }
            out.overlay_from_seq = Some(st.applied_since_seq);
            out.lag_frames = f.seq.saturating_sub(st.applied_since_seq);
            out.result_age_frames = Some(f.seq.saturating_sub(r.frame_seq));
        }
    }
    out.frame = f;
    out
}

/// Baseline JPEG of the annotated frame.
pub fn encode_preview(af: &AnnotatedFrame, quality: u8) -> Result<Vec<u8>, OverlayError> {
    encode_jpeg(&af.frame, quality)
}

pub fn encode_jpeg(frame: &RawFrame, quality: u8) -> Result<Vec<u8>, OverlayError> {
    if !(1..=100).contains(&quality) {
        return Err(OverlayError::InvalidQuality(quality));
    }
    let mut buf = Vec::new();
    JpegEncoder::new_with_quality(&mut buf, quality)
        .encode(&frame.pixels, frame.width, frame.height, ExtendedColorType::Rgb8)
        .map_err(|e| OverlayError::EncodeFailure(e.to_string()))?;
    Ok(buf)
}
