//! Offline video jobs: uploaded `.frm0` files run through the blocking loop.

use std::path::PathBuf;
use std::sync::atomic::Ordering;
use std::sync::{mpsc, Arc, Weak};
use std::time::Duration;

use serde::Serialize;
use tracing::{info, warn};

use super::Shared;
use crate::config::JobClock;
use crate::frame::{scan_frm0, Frm0Reader};
use crate::sampler::{
    run_loop, Clock, LoopControls, MonotonicClock, NullSink, ReadCost, RunReport, SamplerConfig, SamplerMode,
    SamplerState, TimedSource, VirtualClock,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum JobState {
    Queued,
    Running,
    Done,
    Failed,
}

#[derive(Debug, Clone, Serialize)]
pub struct JobRecord {
    pub id: String,
    pub input_path: PathBuf,
    pub dc: f64,
    pub state: JobState,
    pub result: Option<RunReport>,
    pub error: Option<String>,
}

impl Shared {
    /// Stores the upload and queues it. The caller has validated `bytes`.
    pub(super) fn enqueue_job(&self, bytes: &[u8], dc: f64) -> std::io::Result<JobRecord> {
        let id = format!("job-{}", self.job_seq.fetch_add(1, Ordering::SeqCst));
        let input_path = self.jobs_dir.join(format!("{id}.frm0"));
        std::fs::write(&input_path, bytes)?;
        let rec = JobRecord {
            id: id.clone(),
            input_path,
            dc,
            state: JobState::Queued,
            result: None,
            error: None,
        };
        self.jobs.lock().unwrap().insert(id.clone(), rec.clone());
        let queued = self
            .job_tx
            .lock()
            .unwrap()
            .as_ref()
            .map(|tx| tx.send(id.clone()).is_ok())
            .unwrap_or(false);
        if !queued {
            self.update_job(&id, |j| {
                j.state = JobState::Failed;
                j.error = Some("gateway is shutting down".into());
            });
        }
        Ok(self.job(&id).unwrap_or(rec))
    }

    fn update_job(&self, id: &str, f: impl FnOnce(&mut JobRecord)) {
        if let Some(j) = self.jobs.lock().unwrap().get_mut(id) {
            f(j);
        }
    }
}

/// One worker runs jobs in submission order.
pub(super) fn spawn_worker(shared: Weak<Shared>) -> mpsc::Sender<String> {
    let (tx, rx) = mpsc::channel::<String>();
    std::thread::Builder::new()
        .name("job-worker".into())
        .spawn(move || {
            for id in rx {
                let Some(shared) = shared.upgrade() else { break };
                run_job(&shared, &id);
            }
        })
        .expect("spawn job worker");
    tx
}

fn run_job(shared: &Arc<Shared>, id: &str) {
    let Some(job) = shared.job(id) else { return };
    shared.update_job(id, |j| j.state = JobState::Running);
    info!(id, dc = job.dc, "job started");
    let outcome = execute(shared, &job);
    shared.update_job(id, |j| match outcome {
        Ok(report) => {
            j.state = JobState::Done;
            j.result = Some(report);
        }
        Err((msg, report)) => {
            warn!(id, error = %msg, "job failed");
            j.state = JobState::Failed;
            j.error = Some(msg);
            j.result = report.map(|r| *r);
        }
    });
}

fn execute(shared: &Arc<Shared>, job: &JobRecord) -> Result<RunReport, (String, Option<Box<RunReport>>)> {
    let cfg = &shared.config;
    let bytes = std::fs::read(&job.input_path).map_err(|e| (format!("source error: {e}"), None))?;
    if bytes.is_empty() {
        return Err(("source error: input contains no frames".into(), None));
    }
    let (total, fps) = scan_frm0(&bytes).map_err(|e| (format!("source error: {e}"), None))?;
    let mut reader = Frm0Reader::new(std::io::Cursor::new(bytes)).with_total(total);
    if let Some(f) = fps {
        reader = reader.with_fps(f);
    }
    let clock: Arc<dyn Clock> = match cfg.job_clock {
        JobClock::Real => Arc::new(MonotonicClock::new()),
        JobClock::Virtual => Arc::new(VirtualClock::new()),
    };
    let mut detector = cfg
        .build_detector(cfg.job_clock == JobClock::Real)
        .map_err(|e| (format!("detector error: {e}"), None))?;
    let mut state = SamplerState::new(
        SamplerConfig::new(job.dc, SamplerMode::OfflineBlocking).map_err(|e| (e.to_string(), None))?,
    );
    let read_cost = match cfg.job_clock {
        JobClock::Real => Duration::ZERO,
        JobClock::Virtual => Duration::from_secs_f64(cfg.job_read_cost_seconds),
    };
    let mut src = TimedSource::new(reader, clock.clone(), ReadCost::Fixed(read_cost));
    // the dashboard follows a job only while no live session owns it
    let metrics = (!shared.is_publishing()).then(|| shared.metrics.clone());
    let controls = LoopControls {
        metrics,
        stop: Some(shared.stop.clone()),
        ..LoopControls::default()
    };
    let report = run_loop(&mut src, &mut state, &mut detector, &mut NullSink::default(), clock.as_ref(), &controls);
    if let Some(m) = &controls.metrics {
        m.set_dc(shared.mailbox.latest());
    }
    match &report.source_error {
        Some(e) => Err((format!("source error: {e}"), Some(Box::new(report)))),
        None if report.total_frames == 0 => Err(("source error: input contains no frames".into(), Some(Box::new(report)))),
        None => Ok(report),
    }
}
