//! HTTP control and monitoring surface, plus the wiring that connects RTMP
//! ingest to the live pipeline.

mod jobs;
mod live;
mod routes;

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{mpsc, Arc, Mutex};
use std::time::{Duration, Instant};

use bytes::Bytes;
use serde::Serialize;
use tokio::sync::{broadcast, watch};
use tracing::info;

use crate::config::{ConfigError, GatewayConfig};
use crate::detector::{Detector, DetectorHealth};
use crate::metrics::MetricsState;
use crate::overlay::{encode_jpeg, placeholder_frame, DetectionEvent};
use crate::rtmp::{spawn_server, RtmpServerConfig, ServerHandle};
use crate::sampler::{Clock, DcMailbox, LoopControls, MonotonicClock, RunReport};

pub use jobs::{JobRecord, JobState};
pub use routes::router;

/// Monitors that fall this far behind lose their oldest frames.
pub const MONITOR_QUEUE: usize = 4;
const EVENT_QUEUE: usize = 256;

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("cannot bind {what} on {addr}: {source}")]
    Bind {
        what: &'static str,
        addr: String,
        source: std::io::Error,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "session", rename_all = "snake_case")]
pub enum SessionStatus {
    Idle,
    Publishing { stream_key: String },
}

/// State shared by HTTP handlers, the ingest callbacks and the pipeline.
pub struct Shared {
    pub config: GatewayConfig,
    pub clock: Arc<dyn Clock>,
    pub metrics: Arc<MetricsState>,
    pub mailbox: DcMailbox,
    pub preview_tx: broadcast::Sender<Bytes>,
    pub events_tx: broadcast::Sender<DetectionEvent>,
    started: Instant,
    session: Mutex<SessionStatus>,
    health: Arc<Mutex<DetectorHealth>>,
    live_detector: Mutex<Option<Box<dyn Detector>>>,
    last_live_report: Mutex<Option<RunReport>>,
    stop: Arc<AtomicBool>,
    shutdown_rx: watch::Receiver<bool>,
    shutdown_tx: watch::Sender<bool>,
    placeholder: Bytes,
    jobs: Mutex<std::collections::BTreeMap<String, JobRecord>>,
    job_seq: AtomicU64,
    job_tx: Mutex<Option<mpsc::Sender<String>>>,
    jobs_dir: PathBuf,
    live_threads: Mutex<Vec<std::thread::JoinHandle<()>>>,
}

impl Shared {
    /// Builds the shared state. The live detector is created here so a bad
    /// detector setting fails at startup.
    pub fn new(config: GatewayConfig, clock: Arc<dyn Clock>) -> Result<Arc<Self>, ServiceError> {
        config.validate()?;
        let detector = config.build_detector(!clock.is_virtual())?;
        let jobs_dir = config
            .jobs_dir
            .clone()
            .unwrap_or_else(|| std::env::temp_dir().join(format!("streamgate-jobs-{}", std::process::id())));
        std::fs::create_dir_all(&jobs_dir)?;
        let placeholder = encode_jpeg(&placeholder_frame(320, 180, "NO SIGNAL"), config.jpeg_quality)
            .map(Bytes::from)
            .expect("placeholder frame encodes");
        let (shutdown_tx, shutdown_rx) = watch::channel(false);
        let shared = Arc::new(Self {
            metrics: Arc::new(MetricsState::new(config.dc_default)),
            mailbox: DcMailbox::new(config.dc_default),
            preview_tx: broadcast::channel(MONITOR_QUEUE).0,
            events_tx: broadcast::channel(EVENT_QUEUE).0,
            started: Instant::now(),
            session: Mutex::new(SessionStatus::Idle),
            health: Arc::new(Mutex::new(DetectorHealth::Healthy)),
            live_detector: Mutex::new(Some(detector)),
            last_live_report: Mutex::new(None),
            stop: Arc::new(AtomicBool::new(false)),
            shutdown_rx,
            shutdown_tx,
            placeholder,
            jobs: Mutex::new(Default::default()),
            job_seq: AtomicU64::new(1),
            job_tx: Mutex::new(None),
            jobs_dir,
            live_threads: Mutex::new(Vec::new()),
            config,
            clock,
        });
        let tx = jobs::spawn_worker(Arc::downgrade(&shared));
        *shared.job_tx.lock().unwrap() = Some(tx);
        Ok(shared)
    }

    pub fn session(&self) -> SessionStatus {
        self.session.lock().unwrap().clone()
    }

    pub fn is_publishing(&self) -> bool {
        matches!(self.session(), SessionStatus::Publishing { .. })
    }

    pub fn detector_health(&self) -> DetectorHealth {
        *self.health.lock().unwrap()
    }

    pub fn uptime(&self) -> Duration {
        self.started.elapsed()
    }

    pub fn last_live_report(&self) -> Option<RunReport> {
        self.last_live_report.lock().unwrap().clone()
    }

    /// Controls a pipeline loop uses to pick up dc changes and feed metrics.
    pub fn loop_controls(&self) -> LoopControls {
        LoopControls {
            mailbox: Some(self.mailbox.clone()),
            metrics: Some(self.metrics.clone()),
            stop: Some(self.stop.clone()),
            record_submissions: false,
        }
    }

    /// Validates and posts a dc change. While no pipeline runs, the
    /// published metrics take the value at once.
    pub fn set_dc(&self, dc: f64) -> Result<f64, crate::sampler::SamplerError> {
        let dc = self.mailbox.post(dc)?;
        info!(dc, "sampling interval updated");
        if !self.is_publishing() {
            self.metrics.set_dc(dc);
        }
        Ok(dc)
    }

    pub fn job(&self, id: &str) -> Option<JobRecord> {
        self.jobs.lock().unwrap().get(id).cloned()
    }

    fn shutting_down(&self) -> watch::Receiver<bool> {
        self.shutdown_rx.clone()
    }

    /// Stops pipelines and ends streaming responses.
    pub fn begin_shutdown(&self) {
        self.stop.store(true, Ordering::SeqCst);
        let _ = self.shutdown_tx.send(true);
        self.job_tx.lock().unwrap().take();
    }
}

/// A running gateway: RTMP listener, live pipeline and HTTP server.
pub struct Gateway {
    pub http_addr: SocketAddr,
    pub rtmp_addr: SocketAddr,
    shared: Arc<Shared>,
    rtmp: Option<ServerHandle>,
    http: tokio::task::JoinHandle<std::io::Result<()>>,
}

impl Gateway {
    /// Binds both listeners. Must run inside a tokio runtime.
    pub async fn start(config: GatewayConfig) -> Result<Self, ServiceError> {
        let shared = Shared::new(config, Arc::new(MonotonicClock::new()))?;
        let cfg = &shared.config;
        let http_bind = format!("{}:{}", cfg.bind_address, cfg.http_port);
        let listener = tokio::net::TcpListener::bind(&http_bind)
            .await
            .map_err(|source| ServiceError::Bind { what: "http", addr: http_bind.clone(), source })?;
        let http_addr = listener.local_addr()?;

        let rtmp_bind = format!("{}:{}", cfg.bind_address, cfg.rtmp_port);
        let bind: SocketAddr = tokio::net::lookup_host(&rtmp_bind)
            .await
            .ok()
            .and_then(|mut a| a.next())
            .ok_or_else(|| ServiceError::Bind {
                what: "rtmp",
                addr: rtmp_bind.clone(),
                source: std::io::Error::new(std::io::ErrorKind::InvalidInput, "unresolvable address"),
            })?;
        let rtmp = spawn_server(
            RtmpServerConfig {
                bind,
                allow_list: cfg.stream_keys.clone(),
            },
            Arc::new(live::Ingest::new(shared.clone())),
        )
        .map_err(|source| ServiceError::Bind { what: "rtmp", addr: rtmp_bind, source })?;
        let rtmp_addr = rtmp.local_addr;

        let app = router(shared.clone());
        let mut down = shared.shutting_down();
        let http = tokio::spawn(async move {
            axum::serve(listener, app)
                .with_graceful_shutdown(async move {
                    let _ = down.wait_for(|v| *v).await;
                })
                .await
        });
        info!(%http_addr, %rtmp_addr, "gateway up");
        Ok(Self {
            http_addr,
            rtmp_addr,
            shared,
            rtmp: Some(rtmp),
            http,
        })
    }

    pub fn shared(&self) -> &Arc<Shared> {
        &self.shared
    }

    /// Stops accepting, ends live pipelines and waits for them to finish.
    pub async fn shutdown(mut self) {
        self.shared.begin_shutdown();
        if let Some(r) = self.rtmp.take() {
            let _ = tokio::task::spawn_blocking(move || r.shutdown()).await;
        }
        let threads = std::mem::take(&mut *self.shared.live_threads.lock().unwrap());
        let _ = tokio::task::spawn_blocking(move || {
            for t in threads {
                let _ = t.join();
            }
        })
        .await;
        let _ = (&mut self.http).await;
        info!("gateway stopped");
    }
}
