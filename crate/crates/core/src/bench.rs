//! Benchmark sweeps: one offline run per dc value over the same input.

use std::io::Cursor;
use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use tracing::warn;

use crate::detector::{LatencyModel, MockDetector, MockScript};
use crate::frame::{generate_synthetic_stream, scan_frm0, Fps, FrameError, FrameSource, Frm0Reader};
use crate::sampler::{
    run_loop, Clock, LoopControls, MonotonicClock, NullSink, ReadCost, RunReport, SamplerConfig, SamplerError,
    SamplerMode, SamplerState, TimedSource, VirtualClock,
};

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error("bad input file: {0}")]
    Input(#[from] FrameError),
    #[error(transparent)]
    Sampler(#[from] SamplerError),
    #[error("dc list is empty")]
    NoDc,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Parameters of a generated input.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SyntheticSpec {
    pub n: u64,
    pub width: u32,
    pub height: u32,
    pub fps: Fps,
    pub seed: u64,
}

impl std::str::FromStr for SyntheticSpec {
    type Err = String;

    /// `n,w,h,fps,seed`, where fps may be a ratio like `30000/1001`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<&str> = s.split(',').map(str::trim).collect();
        let [n, w, h, fps, seed] = parts[..] else {
            return Err(format!("expected n,w,h,fps,seed, got {s:?}"));
        };
        let num = |v: &str, what: &str| v.parse::<u64>().map_err(|_| format!("bad {what} {v:?}"));
        let (width, height) = (num(w, "width")? as u32, num(h, "height")? as u32);
        if width == 0 || height == 0 {
            return Err("width and height must be at least 1".into());
        }
        Ok(Self {
            n: num(n, "frame count")?,
            width,
            height,
            fps: fps.parse()?,
            seed: num(seed, "seed")?,
        })
    }
}

#[derive(Debug, Clone)]
pub enum BenchInput {
    Synthetic(SyntheticSpec),
    /// Contents of a `.frm0` file, validated and with its frame rate.
    Frm0 { bytes: Arc<Vec<u8>>, total: u64, fps: Option<Fps> },
}

impl BenchInput {
    pub fn load_frm0(path: &Path) -> Result<Self, BenchError> {
        let bytes = std::fs::read(path)?;
        let (total, fps) = scan_frm0(&bytes)?;
        Ok(Self::Frm0 {
            bytes: Arc::new(bytes),
            total,
            fps,
        })
    }

    fn open(&self) -> Box<dyn FrameSource> {
        match self {
            BenchInput::Synthetic(s) => Box::new(generate_synthetic_stream(s.n, s.width, s.height, s.fps, s.seed)),
            BenchInput::Frm0 { bytes, total, fps } => {
                let mut r = Frm0Reader::new(Cursor::new(BytesRef(bytes.clone()))).with_total(*total);
                if let Some(f) = fps {
                    r = r.with_fps(*f);
                }
                Box::new(r)
            }
        }
    }
}

struct BytesRef(Arc<Vec<u8>>);

impl AsRef<[u8]> for BytesRef {
    fn as_ref(&self) -> &[u8] {
        &self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClockKind {
    Virtual,
    Real,
}

impl std::str::FromStr for ClockKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "virtual" => Ok(ClockKind::Virtual),
            "real" => Ok(ClockKind::Real),
            _ => Err(format!("unknown clock {s:?} (expected virtual or real)")),
        }
    }
}

/// How the runs of a sweep are scheduled.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Strategy {
    Sequential,
    /// One run per rayon task. Falls back to sequential without the
    /// `parallel` feature, and always for real-clock sweeps.
    Parallel,
}

impl Default for Strategy {
    fn default() -> Self {
        if cfg!(feature = "parallel") {
            Strategy::Parallel
        } else {
            Strategy::Sequential
        }
    }
}

#[derive(Debug, Clone)]
pub struct BenchConfig {
    pub input: BenchInput,
    pub dc_list: Vec<f64>,
    pub latency: LatencyModel,
    pub read_cost: Duration,
    pub clock: ClockKind,
    pub strategy: Strategy,
}

/// One offline run at `dc` with a fresh clock, detector and source.
pub fn run_one(cfg: &BenchConfig, dc: f64) -> Result<RunReport, BenchError> {
    let mut state = SamplerState::new(SamplerConfig::new(dc, SamplerMode::OfflineBlocking)?);
    let script = MockScript {
        latency: cfg.latency.clone(),
        ..MockScript::default()
    };
    let clock: Arc<dyn Clock> = match cfg.clock {
        ClockKind::Virtual => Arc::new(VirtualClock::new()),
        ClockKind::Real => Arc::new(MonotonicClock::new()),
    };
    let mut detector = MockDetector::new(script).realtime(cfg.clock == ClockKind::Real);
    let mut src = TimedSource::new(cfg.input.open(), clock.clone(), ReadCost::Fixed(cfg.read_cost));
    let report = run_loop(
        &mut src,
        &mut state,
        &mut detector,
        &mut NullSink::default(),
        clock.as_ref(),
        &LoopControls::default(),
    );
    match report.source_error {
        Some(e) => Err(BenchError::Input(FrameError::Decoder(e))),
        None => Ok(report),
    }
}

/// Runs every dc in `cfg.dc_list`; reports come back in list order.
pub fn sweep(cfg: &BenchConfig) -> Result<Vec<RunReport>, BenchError> {
    if cfg.dc_list.is_empty() {
        return Err(BenchError::NoDc);
    }
    let strategy = match (cfg.strategy, cfg.clock) {
        (Strategy::Parallel, ClockKind::Real) => {
            warn!("real-clock sweeps run sequentially so runs do not share the CPU");
            Strategy::Sequential
        }
        (s, _) => s,
    };
    match strategy {
        Strategy::Sequential => cfg.dc_list.iter().map(|&dc| run_one(cfg, dc)).collect(),
        Strategy::Parallel => par_sweep(cfg),
    }
}

#[cfg(feature = "parallel")]
fn par_sweep(cfg: &BenchConfig) -> Result<Vec<RunReport>, BenchError> {
    use rayon::prelude::*;
    cfg.dc_list.par_iter().map(|&dc| run_one(cfg, dc)).collect()
}

#[cfg(not(feature = "parallel"))]
fn par_sweep(cfg: &BenchConfig) -> Result<Vec<RunReport>, BenchError> {
    cfg.dc_list.iter().map(|&dc| run_one(cfg, dc)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(strategy: Strategy) -> BenchConfig {
        BenchConfig {
            input: BenchInput::Synthetic("200,4,4,25,1".parse().unwrap()),
            dc_list: vec![1.0, 0.1, 0.05, 0.0001],
            latency: LatencyModel::Fixed(0.1),
            read_cost: Duration::from_millis(1),
            clock: ClockKind::Virtual,
            strategy,
        }
    }

    #[test]
    fn strategies_agree() {
        let seq = sweep(&cfg(Strategy::Sequential)).unwrap();
        let par = sweep(&cfg(Strategy::Parallel)).unwrap();
        assert_eq!(seq, par);
        assert_eq!(seq.iter().map(|r| r.dc).collect::<Vec<_>>(), [1.0, 0.1, 0.05, 0.0001]);
        assert!(seq.iter().all(|r| r.total_frames == 200));
    }

    #[test]
    fn spec_parsing() {
        let s: SyntheticSpec = "925,64,36,25,1".parse().unwrap();
        assert_eq!((s.n, s.width, s.height, s.fps, s.seed), (925, 64, 36, Fps::integer(25), 1));
        assert!("925,64,36,25".parse::<SyntheticSpec>().is_err());
        assert!("925,0,36,25,1".parse::<SyntheticSpec>().is_err());
        assert!(matches!(
            sweep(&BenchConfig { dc_list: vec![], ..cfg(Strategy::Sequential) }),
            Err(BenchError::NoDc)
        ));
    }

    #[test]
    fn frm0_input() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("in.frm0");
        let mut buf = Vec::new();
        let mut src = generate_synthetic_stream(10, 2, 2, Fps::integer(25), 0);
        while let Some(f) = src.next_frame().unwrap() {
            crate::frame::write_frm0(&mut buf, &f).unwrap();
        }
        std::fs::write(&path, &buf).unwrap();
        let input = BenchInput::load_frm0(&path).unwrap();
        let r = run_one(&BenchConfig { input, ..cfg(Strategy::Sequential) }, 0.05).unwrap();
        assert_eq!(r.total_frames, 10);
        assert_eq!(r.declared_fps, Some(Fps::integer(25)));

        std::fs::write(&path, b"XXXX").unwrap();
        assert!(BenchInput::load_frm0(&path).is_err());
    }
}
