use std::io::{BufReader, BufWriter};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::time::Duration;

use tracing::{info, warn};

use super::protocol::{read_response, write_request, ResponseBody};
use super::{DetectionResult, Detector, DetectorError, DetectorHealth};
use crate::frame::RawFrame;

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(10);

struct Proc {
    child: Child,
    stdin: BufWriter<ChildStdin>,
    responses: Receiver<Result<ResponseBody, DetectorError>>,
}

impl Proc {
    fn spawn(command: &str) -> Result<Self, DetectorError> {
        // exec so that killing the child kills the detector, not just the shell
        let script = if command.contains([';', '&', '|', '\n']) {
            command.to_string()
        } else {
            format!("exec {command}")
        };
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(script)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()?;
        let stdin = BufWriter::new(child.stdin.take().expect("piped stdin"));
        let stdout = child.stdout.take().expect("piped stdout");
        let (tx, responses) = mpsc::channel();
        std::thread::Builder::new()
            .name("detector-reader".into())
            .spawn(move || {
                let mut r = BufReader::new(stdout);
                loop {
                    match read_response(&mut r) {
                        Ok(Some(body)) => {
                            if tx.send(Ok(body)).is_err() {
                                break;
                            }
                        }
                        Ok(None) => break,
                        Err(e) => {
                            let _ = tx.send(Err(e));
                            break;
                        }
                    }
                }
            })?;
        Ok(Self { child, stdin, responses })
    }

    fn kill(mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

/// Model served by an external process speaking the detector pipe protocol.
///
/// A timeout or a dead process costs the current frame; the process is
/// restarted once, and a second failure leaves the backend degraded.
pub struct ExternalDetector {
    command: String,
    timeout: Duration,
    proc: Option<Proc>,
    restarts: u32,
    health: DetectorHealth,
}

impl ExternalDetector {
    pub fn spawn(command: &str, timeout: Duration) -> Result<Self, DetectorError> {
        let proc = Proc::spawn(command)?;
        Ok(Self {
            command: command.to_string(),
            timeout,
            proc: Some(proc),
            restarts: 0,
            health: DetectorHealth::Healthy,
        })
    }

    fn fail(&mut self, err: DetectorError) -> DetectorError {
        if let Some(p) = self.proc.take() {
            p.kill();
        }
        if self.restarts == 0 {
            self.restarts = 1;
            match Proc::spawn(&self.command) {
                Ok(p) => {
                    info!(command = %self.command, "detector restarted");
                    self.proc = Some(p);
                    self.health = DetectorHealth::Restarted;
                }
                Err(e) => {
                    warn!(error = %e, "detector restart failed");
                    self.health = DetectorHealth::Degraded;
                }
            }
        } else {
            warn!(error = %err, "detector failed again after restart, marking degraded");
            self.health = DetectorHealth::Degraded;
        }
        err
    }
}

impl Detector for ExternalDetector {
    fn id(&self) -> &str {
        &self.command
    }

    fn detect(&mut self, frame: &RawFrame) -> Result<DetectionResult, DetectorError> {
        let Some(proc) = self.proc.as_mut() else {
            return Err(DetectorError::ProcessDead);
        };
        // request ids are frame seqs, so a script can key rules on them
        let id = frame.seq;
        if write_request(&mut proc.stdin, id, frame).is_err() {
            return Err(self.fail(DetectorError::ProcessDead));
        }
        let body = match proc.responses.recv_timeout(self.timeout) {
            Ok(Ok(body)) => body,
            Ok(Err(e)) => return Err(self.fail(e)),
            Err(RecvTimeoutError::Timeout) => return Err(self.fail(DetectorError::Timeout(self.timeout))),
            Err(RecvTimeoutError::Disconnected) => return Err(self.fail(DetectorError::ProcessDead)),
        };
        if body.id != id {
            return Err(DetectorError::ProtocolViolation(format!(
                "response id {} to request id {id}",
                body.id
            )));
        }
        Ok(DetectionResult {
            frame_seq: frame.seq,
            detections: body.detections,
            latency_micros: (body.latency_ms * 1000.0).round() as u64,
            detector_id: self.command.clone(),
        })
    }

    fn health(&self) -> DetectorHealth {
        self.health
    }
}

impl Drop for ExternalDetector {
    fn drop(&mut self) {
        if let Some(p) = self.proc.take() {
            drop(p.stdin);
            let mut child = p.child;
            let _ = child.kill();
            let _ = child.wait();
        }
    }
}
