//! Detector backends: a scripted mock and an external-process adapter.

mod external;
mod mock;
pub mod protocol;

use serde::{Deserialize, Serialize};

use crate::frame::RawFrame;

pub use external::{ExternalDetector, DEFAULT_TIMEOUT};
pub use mock::{LatencyModel, MockDetector, MockRule, MockScript};

/// Axis-aligned box in absolute pixels of the inferenced frame. Stored
/// unclipped; serialized as `[x_min, y_min, x_max, y_max]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 4]", into = "[f64; 4]")]
pub struct BoundingBox {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl BoundingBox {
    pub const fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Self {
        Self { x_min, y_min, x_max, y_max }
    }

    pub fn is_valid(&self) -> bool {
        self.x_min <= self.x_max && self.y_min <= self.y_max
    }

    pub fn area(&self) -> f64 {
        (self.x_max - self.x_min).max(0.0) * (self.y_max - self.y_min).max(0.0)
    }
}

impl From<[f64; 4]> for BoundingBox {
    fn from(v: [f64; 4]) -> Self {
        Self::new(v[0], v[1], v[2], v[3])
    }
}

impl From<BoundingBox> for [f64; 4] {
    fn from(b: BoundingBox) -> Self {
        [b.x_min, b.y_min, b.x_max, b.y_max]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub label: String,
    pub score: f64,
    #[serde(rename = "box")]
    pub bbox: BoundingBox,
}

impl Detection {
    pub fn new(label: impl Into<String>, score: f64, bbox: BoundingBox) -> Self {
        Self {
            label: label.into(),
            score,
            bbox,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionResult {
    pub frame_seq: u64,
    pub detections: Vec<Detection>,
    pub latency_micros: u64,
    pub detector_id: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DetectorHealth {
    Healthy,
    /// The backend was restarted once after a failure.
    Restarted,
    /// Restart budget exhausted; every call fails fast.
    Degraded,
}

#[derive(Debug, thiserror::Error)]
pub enum DetectorError {
    #[error("detector failure: {0}")]
    Failure(String),
    #[error("protocol violation: {0}")]
    ProtocolViolation(String),
    #[error("no response within {0:?}")]
    Timeout(std::time::Duration),
    #[error("detector process is not running")]
    ProcessDead,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A model behind a uniform interface. Calls are serialized by the caller.
pub trait Detector: Send {
    fn id(&self) -> &str;

    /// Detections in the frame's pixel space. `latency_micros` is the time
    /// the backend reports for this inference.
    fn detect(&mut self, frame: &RawFrame) -> Result<DetectionResult, DetectorError>;

    fn health(&self) -> DetectorHealth {
        DetectorHealth::Healthy
    }
}

impl<D: Detector + ?Sized> Detector for Box<D> {
    fn id(&self) -> &str {
        (**self).id()
    }

    fn detect(&mut self, frame: &RawFrame) -> Result<DetectionResult, DetectorError> {
        (**self).detect(frame)
    }

    fn health(&self) -> DetectorHealth {
        (**self).health()
    }
}
