use std::fs::{File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use chrono::{SecondsFormat, Utc};
use serde::{Deserialize, Serialize};

use crate::detector::{BoundingBox, DetectionResult};

/// One logged detection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionEvent {
    pub wall_ts: String,
    pub frame_seq: u64,
    pub label: String,
    pub score: f64,
    #[serde(rename = "box")]
    pub bbox: BoundingBox,
    pub latency_ms: f64,
    pub dc_at_inference: f64,
}

pub fn now_rfc3339() -> String {
    Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true)
}

/// One event per detection, below-threshold scores included.
pub fn events_for(result: &DetectionResult, dc: f64, wall_ts: &str) -> Vec<DetectionEvent> {
    result
        .detections
        .iter()
        .map(|d| DetectionEvent {
            wall_ts: wall_ts.to_string(),
            frame_seq: result.frame_seq,
            label: d.label.clone(),
            score: d.score,
            bbox: d.bbox,
            latency_ms: result.latency_micros as f64 / 1000.0,
            dc_at_inference: dc,
        })
        .collect()
}

/// Newline-delimited JSON log, flushed after every event. The file is
/// opened on first use and reopened after a failure.
#[derive(Debug)]
pub struct EventLog {
    path: PathBuf,
    file: Option<File>,
}

impl EventLog {
    pub fn new(path: impl Into<PathBuf>) -> Self {
        Self {
            path: path.into(),
            file: None,
        }
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn append(&mut self, event: &DetectionEvent) -> io::Result<()> {
        let mut line = serde_json::to_vec(event)?;
        line.push(b'\n');
        let file = match &mut self.file {
            Some(f) => f,
            None => self
                .file
                .insert(OpenOptions::new().create(true).append(true).open(&self.path)?),
        };
        let res = file.write_all(&line).and_then(|_| file.flush());
        if res.is_err() {
            self.file = None;
        }
        res
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detector::Detection;

    fn event(seq: u64) -> DetectionEvent {
        DetectionEvent {
            wall_ts: now_rfc3339(),
            frame_seq: seq,
            label: "rhino".into(),
            score: 0.9,
            bbox: BoundingBox::new(1.0, 2.0, 3.0, 4.0),
            latency_ms: 437.0,
            dc_at_inference: 0.05,
        }
    }

    #[test]
    fn appends_lines_in_order() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("events.ndjson");
        let mut log = EventLog::new(&path);
        log.append(&event(0)).unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap().lines().count(), 1);
        for i in 1..100 {
            log.append(&event(i)).unwrap();
        }
        let text = std::fs::read_to_string(&path).unwrap();
        let seqs: Vec<u64> = text
            .lines()
            .map(|l| serde_json::from_str::<DetectionEvent>(l).unwrap().frame_seq)
            .collect();
        assert_eq!(seqs, (0..100).collect::<Vec<_>>());
    }

    #[test]
    fn unwritable_path_errors() {
        let dir = tempfile::tempdir().unwrap();
        let mut log = EventLog::new(dir.path().join("missing/dir/events.ndjson"));
        assert!(log.append(&event(0)).is_err());
    }

    #[test]
    fn one_event_per_detection() {
        let r = DetectionResult {
            frame_seq: 9,
            detections: vec![
                Detection::new("rhino", 0.9, BoundingBox::new(0.0, 0.0, 1.0, 1.0)),
                Detection::new("car", 0.2, BoundingBox::new(0.0, 0.0, 1.0, 1.0)),
            ],
            latency_micros: 1500,
            detector_id: "mock".into(),
        };
        let ev = events_for(&r, 0.1, "t");
        assert_eq!(ev.len(), 2);
        assert_eq!(ev[1].latency_ms, 1.5);
        assert_eq!(ev[1].dc_at_inference, 0.1);
        assert!(chrono::DateTime::parse_from_rfc3339(&now_rfc3339()).is_ok());
    }
}
