//! TCP listener and per-connection session handler.

use std::io::{self, BufReader, BufWriter, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;

use tracing::{debug, info, warn};

use super::session::WINDOW_ACK_SIZE;
use super::{
    msg_type, perform_handshake, read_message, ChunkContext, ChunkWriter, EncodedFrame, LatestSender, PublishRegistry,
    RtmpError, RtmpMessage, Session, SessionEvent, VideoDemuxer,
};

/// Receives the encoded frames of one publish session.
pub trait FrameHandoff: Send {
    fn push(&mut self, frame: EncodedFrame);
}

impl FrameHandoff for LatestSender<EncodedFrame> {
    fn push(&mut self, frame: EncodedFrame) {
        if self.put(frame) {
            debug!("ingest overwrote an unconsumed frame");
        }
    }
}

/// Collects every frame; for tests and offline capture.
#[derive(Clone, Default)]
pub struct VecHandoff(pub Arc<Mutex<Vec<EncodedFrame>>>);

impl FrameHandoff for VecHandoff {
    fn push(&mut self, frame: EncodedFrame) {
        self.0.lock().unwrap().push(frame);
    }
}

/// Callbacks from sessions into the rest of the gateway.
pub trait IngestHandler: Send + Sync {
    fn publish_started(&self, stream_key: &str) -> Box<dyn FrameHandoff>;
    fn publish_stopped(&self, _stream_key: &str) {}
}

#[derive(Debug, Clone)]
pub struct RtmpServerConfig {
    pub bind: SocketAddr,
    pub allow_list: Vec<String>,
}

#[derive(Debug, Default, Clone)]
pub struct SessionSummary {
    pub stream_key: Option<String>,
    pub video_frames: u64,
    pub bytes_read: u64,
}

struct Counting<R> {
    inner: R,
    count: u64,
}

impl<R: Read> Read for Counting<R> {
    fn read(&mut self, buf: &mut [u8]) -> io::Result<usize> {
        let n = self.inner.read(buf)?;
        self.count += n as u64;
        Ok(n)
    }
}

struct Duplex<'a, R, W> {
    r: &'a mut R,
    w: &'a mut W,
}

impl<R: Read, W> Read for Duplex<'_, R, W> {
    fn read(&mut self, buf: &mut [u8]) -> io::Result<usize> {
        self.r.read(buf)
    }
}

impl<R, W: Write> Write for Duplex<'_, R, W> {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        self.w.write(buf)
    }
    fn flush(&mut self) -> io::Result<()> {
        self.w.flush()
    }
}

/// Runs one publisher connection to completion.
pub fn run_session<R: Read, W: Write>(
    reader: R,
    mut writer: W,
    mut session: Session,
    handler: &dyn IngestHandler,
) -> Result<SessionSummary, RtmpError> {
    let mut reader = Counting { inner: reader, count: 0 };
    perform_handshake(&mut Duplex {
        r: &mut reader,
        w: &mut writer,
    })?;

    let mut ctx = ChunkContext::default();
    let mut out = ChunkWriter::default();
    let mut demux = VideoDemuxer::default();
    let mut handoff: Option<(String, Box<dyn FrameHandoff>)> = None;
    let mut acked = reader.count;
    let mut summary = SessionSummary::default();

    let result = loop {
        let msg = match read_message(&mut reader, &mut ctx) {
            Ok(m) => m,
            Err(RtmpError::Closed) => break Ok(()),
            Err(e) => break Err(e),
        };

        if reader.count - acked >= WINDOW_ACK_SIZE as u64 {
            acked = reader.count;
            let ack = RtmpMessage::control(msg_type::ACKNOWLEDGEMENT, (acked as u32).to_be_bytes().to_vec());
            if let Err(e) = out.write_message(&mut writer, &ack).and_then(|_| writer.flush()) {
                break Err(e.into());
            }
        }

        match msg.type_id {
            msg_type::COMMAND_AMF0 | msg_type::COMMAND_AMF3 => {
                let outcome = match session.handle_command(&msg) {
                    Ok(o) => o,
                    Err(RtmpError::UnknownCommand(name)) => {
                        warn!(command = %name, "ignoring unknown command");
                        continue;
                    }
                    Err(e) => break Err(e),
                };
                let sent = outcome
                    .responses
                    .iter()
                    .try_for_each(|m| out.write_message(&mut writer, m))
                    .and_then(|_| writer.flush());
                if let Err(e) = sent {
                    break Err(e.into());
                }
                match outcome.event {
                    Some(SessionEvent::PublishStarted { stream_key, .. }) => {
                        let h = handler.publish_started(&stream_key);
                        summary.stream_key = Some(stream_key.clone());
                        handoff = Some((stream_key, h));
                    }
                    Some(SessionEvent::PublishStopped { stream_key }) => {
                        handoff = None;
                        handler.publish_stopped(&stream_key);
                    }
                    _ => {}
                }
                if outcome.close {
                    break Ok(());
                }
            }
            msg_type::VIDEO => {
                let Some((_, h)) = handoff.as_mut() else {
                    debug!("video before publish, dropped");
                    continue;
                };
                match demux.push(&msg) {
                    Ok(ef) => h.push(ef),
                    Err(e) => warn!(error = %e, "bad video message"),
                }
            }
            // audio, metadata, and peer control messages are accepted and dropped
            _ => {}
        }
    };

    if let Some((key, h)) = handoff.take() {
        drop(h);
        handler.publish_stopped(&key);
    }
    summary.video_frames = demux.frames_emitted();
    summary.bytes_read = reader.count;
    drop(session);
    result.map(|_| summary)
}

pub struct ServerHandle {
    pub local_addr: SocketAddr,
    stop: Arc<AtomicBool>,
    accept: Option<JoinHandle<()>>,
}

impl ServerHandle {
    pub fn shutdown(mut self) {
        self.stop_now();
    }

    fn stop_now(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        let _ = TcpStream::connect(self.local_addr);
        if let Some(h) = self.accept.take() {
            let _ = h.join();
        }
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        if self.accept.is_some() {
            self.stop_now();
        }
    }
}

fn handle_connection(stream: TcpStream, registry: Arc<PublishRegistry>, handler: Arc<dyn IngestHandler>) {
    let peer = stream.peer_addr().ok();
    let _ = stream.set_nodelay(true);
    let reader = match stream.try_clone() {
        Ok(s) => BufReader::new(s),
        Err(e) => {
            warn!(error = %e, "cannot clone socket");
            return;
        }
    };
    let writer = BufWriter::new(stream);
    match run_session(reader, writer, Session::new(registry), handler.as_ref()) {
        Ok(s) => info!(?peer, key = ?s.stream_key, frames = s.video_frames, "rtmp session closed"),
        Err(e) => warn!(?peer, error = %e, "rtmp session ended with error"),
    }
}

/// Binds the RTMP listener and serves each connection on its own thread.
pub fn spawn_server(cfg: RtmpServerConfig, handler: Arc<dyn IngestHandler>) -> io::Result<ServerHandle> {
    let listener = TcpListener::bind(cfg.bind)?;
    let local_addr = listener.local_addr()?;
    let stop = Arc::new(AtomicBool::new(false));
    let registry = Arc::new(PublishRegistry::new(cfg.allow_list));
    let stop_flag = Arc::clone(&stop);
    info!(%local_addr, "rtmp listening");
    let accept = std::thread::Builder::new().name("rtmp-accept".into()).spawn(move || {
        for conn in listener.incoming() {
            if stop_flag.load(Ordering::SeqCst) {
                break;
            }
            match conn {
                Ok(stream) => {
                    let registry = Arc::clone(&registry);
                    let handler = Arc::clone(&handler);
                    let spawned = std::thread::Builder::new()
                        .name("rtmp-session".into())
                        .spawn(move || handle_connection(stream, registry, handler));
                    if let Err(e) = spawned {
                        warn!(error = %e, "cannot spawn session thread");
                    }
                }
                Err(e) => warn!(error = %e, "accept failed"),
            }
        }
    })?;
    Ok(ServerHandle {
        local_addr,
        stop,
        accept: Some(accept),
    })
}
