use std::ops::Range;
use std::path::Path;
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Detection, DetectionResult, Detector, DetectorError};
use crate::frame::RawFrame;

/// Detections returned for frames with `from <= seq < to`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MockRule {
    pub from: u64,
    pub to: u64,
    pub detections: Vec<Detection>,
}

impl MockRule {
    pub fn new(seqs: Range<u64>, detections: Vec<Detection>) -> Self {
        Self {
            from: seqs.start,
            to: seqs.end,
            detections,
        }
    }
}

/// Per-call inference latency in seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LatencyModel {
    Fixed(f64),
    Uniform { lo: f64, hi: f64, seed: u64 },
}

impl Default for LatencyModel {
    fn default() -> Self {
        LatencyModel::Fixed(0.0)
    }
}

impl std::str::FromStr for LatencyModel {
    type Err = String;

    /// `fixed:0.4`, `uniform:0.2,0.6,7` or a bare number of seconds.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        let secs = |v: &str| -> Result<f64, String> {
            let x: f64 = v.trim().parse().map_err(|_| format!("bad latency {v:?}"))?;
            if !x.is_finite() || x < 0.0 {
                return Err(format!("latency must be a non-negative number, got {v:?}"));
            }
            Ok(x)
        };
        match s.split_once(':') {
            None => Ok(LatencyModel::Fixed(secs(s)?)),
            Some(("fixed", v)) => Ok(LatencyModel::Fixed(secs(v)?)),
            Some(("uniform", v)) => {
                let parts: Vec<&str> = v.split(',').collect();
                let [lo, hi, seed] = parts[..] else {
                    return Err(format!("expected uniform:lo,hi,seed, got {s:?}"));
                };
                let (lo, hi) = (secs(lo)?, secs(hi)?);
                if lo > hi {
                    return Err(format!("uniform latency has lo > hi in {s:?}"));
                }
                let seed = seed.trim().parse().map_err(|_| format!("bad seed {seed:?}"))?;
                Ok(LatencyModel::Uniform { lo, hi, seed })
            }
            Some((kind, _)) => Err(format!("unknown latency model {kind:?}")),
        }
    }
}

fn micros(secs: f64) -> Duration {
    Duration::from_micros((secs.max(0.0) * 1e6).round() as u64)
}

/// Stateful draw sequence for a latency model.
#[derive(Debug, Clone)]
pub struct LatencyStream {
    model: LatencyModel,
    rng: ChaCha8Rng,
}

impl LatencyStream {
    pub fn next(&mut self) -> Duration {
        match self.model {
            LatencyModel::Fixed(s) => micros(s),
            LatencyModel::Uniform { lo, hi, .. } if hi > lo => micros(self.rng.random_range(lo..hi)),
            LatencyModel::Uniform { lo, .. } => micros(lo),
        }
    }
}

impl LatencyModel {
    pub fn stream(&self) -> LatencyStream {
        let seed = match self {
            LatencyModel::Uniform { seed, .. } => *seed,
            LatencyModel::Fixed(_) => 0,
        };
        LatencyStream {
            model: self.clone(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// The latencies of the first `n` calls, rounded to microseconds.
    pub fn schedule(&self, n: usize) -> Vec<Duration> {
        let mut s = self.stream();
        (0..n).map(|_| s.next()).collect()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MockScript {
    #[serde(default)]
    pub rules: Vec<MockRule>,
    #[serde(default)]
    pub latency: LatencyModel,
    /// Frame seqs on which `detect` fails.
    #[serde(default)]
    pub failures: Vec<u64>,
}

impl MockScript {
    pub fn fixed_latency(secs: f64) -> Self {
        Self {
            latency: LatencyModel::Fixed(secs),
            ..Self::default()
        }
    }

    pub fn load(path: &Path) -> Result<Self, DetectorError> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text)
            .map_err(|e| DetectorError::Failure(format!("mock script {}: {e}", path.display())))
    }

    /// First matching rule wins.
    pub fn detections_for(&self, seq: u64) -> Vec<Detection> {
        self.rules
            .iter()
            .find(|r| (r.from..r.to).contains(&seq))
            .map(|r| r.detections.clone())
            .unwrap_or_default()
    }
}

/// Deterministic scripted detector. Latency is reported, not slept, unless
/// `realtime` is set.
pub struct MockDetector {
    script: MockScript,
    latency: LatencyStream,
    realtime: bool,
}

impl MockDetector {
    pub fn new(script: MockScript) -> Self {
        let latency = script.latency.stream();
        Self {
            script,
            latency,
            realtime: false,
        }
    }

    /// Sleep for the modeled latency on each call, for real-clock runs.
    pub fn realtime(mut self, on: bool) -> Self {
        self.realtime = on;
        self
    }
}

impl Detector for MockDetector {
    fn id(&self) -> &str {
        "mock"
    }

    fn detect(&mut self, frame: &RawFrame) -> Result<DetectionResult, DetectorError> {
        let latency = self.latency.next();
        if self.realtime {
            std::thread::sleep(latency);
        }
        if self.script.failures.contains(&frame.seq) {
            return Err(DetectorError::Failure(format!("scripted failure on frame {}", frame.seq)));
        }
        Ok(DetectionResult {
            frame_seq: frame.seq,
            detections: self.script.detections_for(frame.seq),
            latency_micros: latency.as_micros() as u64,
            detector_id: self.id().to_string(),
        })
    }
}
