//! Gateway configuration file.

use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::detector::{Detector, DetectorError, ExternalDetector, MockDetector, MockScript};
use crate::sampler::SamplerMode;

/// Environment variable naming the config file when `--config` is absent.
pub const CONFIG_ENV: &str = "STREAMGATE_CONFIG";

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("invalid config {path}: {source}")]
    Parse { path: PathBuf, source: serde_json::Error },
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("detector executable not found: {0}")]
    DetectorNotFound(String),
    #[error("mock script: {0}")]
    MockScript(#[source] DetectorError),
    #[error("cannot start detector: {0}")]
    DetectorSpawn(#[source] DetectorError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DetectorSpec {
    Mock {
        #[serde(default)]
        script: Option<PathBuf>,
    },
    /// Command line run through `sh -c`, speaking the detector pipe protocol.
    External { command: String },
}

impl Default for DetectorSpec {
    fn default() -> Self {
        DetectorSpec::Mock { script: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobClock {
    Real,
    Virtual,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GatewayConfig {
    pub bind_address: String,
    pub rtmp_port: u16,
    pub http_port: u16,
    /// Accepted stream keys; empty accepts any key.
    pub stream_keys: Vec<String>,
    pub dc_default: f64,
    pub sampler_mode: SamplerMode,
    pub detector: DetectorSpec,
    pub detector_timeout_seconds: f64,
    /// External decoder fed FLV on stdin, emitting FRM0 on stdout. Without
    /// one, only the RAWV test codec is understood.
    pub decoder: Option<String>,
    pub event_log: Option<PathBuf>,
    pub jpeg_quality: u8,
    pub display_threshold: f64,
    pub overlay_expiry_seconds: f64,
    /// Where uploaded job inputs are stored; a temp dir when unset.
    pub jobs_dir: Option<PathBuf>,
    pub job_clock: JobClock,
    /// Seconds charged per frame read when `job_clock` is virtual.
    pub job_read_cost_seconds: f64,
    pub max_upload_bytes: usize,
    /// Static files served at `/`.
    pub console_dir: Option<PathBuf>,
    pub sse_keepalive_seconds: f64,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        Self {
            bind_address: "0.0.0.0".into(),
            rtmp_port: 1935,
            http_port: 8080,
            stream_keys: Vec::new(),
            dc_default: 0.05,
            sampler_mode: SamplerMode::LiveLatestWins,
            detector: DetectorSpec::default(),
            detector_timeout_seconds: 10.0,
            decoder: None,
            event_log: Some(PathBuf::from("events.ndjson")),
            jpeg_quality: crate::overlay::DEFAULT_JPEG_QUALITY,
            display_threshold: 0.5,
            overlay_expiry_seconds: 5.0,
            jobs_dir: None,
            job_clock: JobClock::Real,
            job_read_cost_seconds: 0.001,
            max_upload_bytes: 1 << 30,
            console_dir: None,
            sse_keepalive_seconds: 15.0,
        }
    }
}

fn on_path(program: &str) -> bool {
    if program.contains('/') {
        return Path::new(program).is_file();
    }
    std::env::var_os("PATH")
        .map(|p| std::env::split_paths(&p).any(|d| d.join(program).is_file()))
        .unwrap_or(false)
}

impl GatewayConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        let cfg: Self = serde_json::from_str(&text).map_err(|source| ConfigError::Parse {
            path: path.to_path_buf(),
            source,
        })?;
        Ok(cfg)
    }

    /// The explicit path, else `$STREAMGATE_CONFIG`, else defaults.
    pub fn resolve(explicit: Option<&Path>) -> Result<Self, ConfigError> {
        let from_env = std::env::var_os(CONFIG_ENV).map(PathBuf::from);
        match explicit.map(Path::to_path_buf).or(from_env) {
            Some(p) => Self::load(&p),
            None => Ok(Self::default()),
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if !self.dc_default.is_finite() || self.dc_default < 0.0 {
            return bad(format!("dc_default must be >= 0, got {}", self.dc_default));
        }
        if !(1..=100).contains(&self.jpeg_quality) {
            return bad(format!("jpeg_quality must be in 1..=100, got {}", self.jpeg_quality));
        }
        if self.rtmp_port != 0 && self.rtmp_port == self.http_port {
            return bad(format!("rtmp_port and http_port are both {}", self.rtmp_port));
        }
        if self.detector_timeout_seconds.is_nan() || self.detector_timeout_seconds <= 0.0 {
            return bad("detector_timeout_seconds must be positive".into());
        }
        if !self.job_read_cost_seconds.is_finite() || self.job_read_cost_seconds < 0.0 {
            return bad("job_read_cost_seconds must be a non-negative number".into());
        }
        if self.sse_keepalive_seconds.is_nan() || self.sse_keepalive_seconds <= 0.0 {
            return bad("sse_keepalive_seconds must be positive".into());
        }
        if self.overlay_expiry_seconds.is_nan() || self.overlay_expiry_seconds < 0.0 {
            return bad("overlay_expiry_seconds must be >= 0".into());
        }
        if let DetectorSpec::External { command } = &self.detector {
            let program = command.split_whitespace().next().unwrap_or("");
            if !on_path(program) {
                return Err(ConfigError::DetectorNotFound(program.to_string()));
            }
        }
        if let DetectorSpec::Mock { script: Some(p) } = &self.detector {
            if !p.is_file() {
                return Err(ConfigError::DetectorNotFound(p.display().to_string()));
            }
        }
        Ok(())
    }

    pub fn detector_timeout(&self) -> Duration {
        Duration::from_secs_f64(self.detector_timeout_seconds)
    }

    /// Instantiates the configured backend. `realtime` makes the mock sleep
    /// for its modeled latency.
    pub fn build_detector(&self, realtime: bool) -> Result<Box<dyn Detector>, ConfigError> {
        match &self.detector {
            DetectorSpec::Mock { script } => {
                let script = match script {
                    Some(p) => MockScript::load(p).map_err(ConfigError::MockScript)?,
                    None => MockScript::default(),
                };
                Ok(Box::new(MockDetector::new(script).realtime(realtime)))
            }
            DetectorSpec::External { command } => {
                let program = command.split_whitespace().next().unwrap_or("");
                if !on_path(program) {
                    return Err(ConfigError::DetectorNotFound(program.to_string()));
                }
                ExternalDetector::spawn(command, self.detector_timeout())
                    .map(|d| Box::new(d) as Box<dyn Detector>)
                    .map_err(ConfigError::DetectorSpawn)
            }
        }
    }
}
