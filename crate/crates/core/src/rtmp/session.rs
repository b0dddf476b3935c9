//! AMF0 command choreography for the publish path.

use std::collections::HashSet;
use std::sync::{Arc, Mutex};

use tracing::{debug, info};

use super::amf0::{self, Amf0Value};
use super::{msg_type, RtmpError, RtmpMessage};

pub const WINDOW_ACK_SIZE: u32 = 2_500_000;
pub const PEER_BANDWIDTH: u32 = 2_500_000;
pub const SERVER_CHUNK_SIZE: u32 = 4096;
const COMMAND_CSID: u32 = 3;
const STATUS_CSID: u32 = 5;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SessionPhase {
    AwaitConnect,
    Connected { app: String },
    Publishing { app: String, stream_key: String, stream_id: u32 },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SessionEvent {
    Connected { app: String },
    StreamCreated { stream_id: u32 },
    PublishStarted { stream_key: String, stream_id: u32 },
    PublishStopped { stream_key: String },
}

#[derive(Debug, Default)]
pub struct CommandOutcome {
    pub responses: Vec<RtmpMessage>,
    pub event: Option<SessionEvent>,
    /// The server should close the connection after sending `responses`.
    pub close: bool,
}

/// Stream-key allow-list plus the set of keys currently being published.
#[derive(Debug, Default)]
pub struct PublishRegistry {
    allow: Vec<String>,
    active: Mutex<HashSet<String>>,
}

impl PublishRegistry {
    /// An empty allow-list accepts every key.
    pub fn new(allow: Vec<String>) -> Self {
        Self {
            allow,
            active: Mutex::default(),
        }
    }

    pub fn try_acquire(&self, key: &str) -> Result<(), String> {
        if !self.allow.is_empty() && !self.allow.iter().any(|k| k == key) {
            return Err(format!("stream key {key:?} is not allowed"));
        }
        if !self.active.lock().unwrap().insert(key.to_string()) {
            return Err(format!("stream key {key:?} is already publishing"));
        }
        Ok(())
    }

    pub fn release(&self, key: &str) {
        self.active.lock().unwrap().remove(key);
    }

    pub fn active_keys(&self) -> Vec<String> {
        self.active.lock().unwrap().iter().cloned().collect()
    }
}

fn status_object(level: &str, code: &str, description: String) -> Amf0Value {
    Amf0Value::object([
        ("level", Amf0Value::str(level)),
        ("code", Amf0Value::str(code)),
        ("description", Amf0Value::String(description)),
    ])
}

/// Per-connection command state machine.
pub struct Session {
    phase: SessionPhase,
    next_stream_id: u32,
    registry: Arc<PublishRegistry>,
}

impl Session {
    pub fn new(registry: Arc<PublishRegistry>) -> Self {
        Self {
            phase: SessionPhase::AwaitConnect,
            next_stream_id: 1,
            registry,
        }
    }

    pub fn phase(&self) -> &SessionPhase {
        &self.phase
    }

    pub fn stream_key(&self) -> Option<&str> {
        match &self.phase {
            SessionPhase::Publishing { stream_key, .. } => Some(stream_key),
            _ => None,
        }
    }

    pub fn is_publishing(&self) -> bool {
        matches!(self.phase, SessionPhase::Publishing { .. })
    }

    fn app(&self) -> Option<&str> {
        match &self.phase {
            SessionPhase::AwaitConnect => None,
            SessionPhase::Connected { app } | SessionPhase::Publishing { app, .. } => Some(app),
        }
    }

    pub fn handle_command(&mut self, msg: &RtmpMessage) -> Result<CommandOutcome, RtmpError> {
        if msg.type_id == msg_type::COMMAND_AMF3 {
            return Err(RtmpError::UnknownCommand("AMF3 command".into()));
        }
        if msg.type_id != msg_type::COMMAND_AMF0 {
            return Err(RtmpError::UnknownCommand(format!("message type {}", msg.type_id)));
        }
        let values = amf0::decode(&msg.payload)?;
        let name = values
            .first()
            .and_then(Amf0Value::as_str)
            .ok_or_else(|| RtmpError::Amf("command without a name".into()))?
            .to_string();
        let txn = values.get(1).and_then(Amf0Value::as_number).unwrap_or(0.0);
        debug!(command = %name, txn, "rtmp command");

        match name.as_str() {
            "connect" => self.on_connect(&values, txn),
            "createStream" => self.on_create_stream(txn),
            "publish" => self.on_publish(&values, msg.stream_id),
            "FCUnpublish" | "deleteStream" | "closeStream" => Ok(self.on_unpublish()),
            "releaseStream" | "FCPublish" | "_checkbw" | "getStreamLength" => Ok(CommandOutcome::default()),
            _ => Err(RtmpError::UnknownCommand(name)),
        }
    }

    fn on_connect(&mut self, values: &[Amf0Value], txn: f64) -> Result<CommandOutcome, RtmpError> {
        if self.phase != SessionPhase::AwaitConnect {
            return Err(RtmpError::BadState("connect on an already connected session".into()));
        }
        let app = values
            .get(2)
            .and_then(|o| o.get("app"))
            .and_then(Amf0Value::as_str)
            .unwrap_or_default()
            .to_string();
        let mut peer_bw = PEER_BANDWIDTH.to_be_bytes().to_vec();
        peer_bw.push(2); // dynamic limit
        let responses = vec![
            RtmpMessage::control(msg_type::WINDOW_ACK_SIZE, WINDOW_ACK_SIZE.to_be_bytes().to_vec()),
            RtmpMessage::control(msg_type::SET_PEER_BANDWIDTH, peer_bw),
            RtmpMessage::set_chunk_size(SERVER_CHUNK_SIZE),
            RtmpMessage::command(
                COMMAND_CSID,
                0,
                &[
                    Amf0Value::str("_result"),
                    Amf0Value::Number(txn),
                    Amf0Value::object([
                        ("fmsVer", Amf0Value::str("FMS/3,0,1,123")),
                        ("capabilities", Amf0Value::Number(31.0)),
                    ]),
                    Amf0Value::object([
                        ("level", Amf0Value::str("status")),
                        ("code", Amf0Value::str("NetConnection.Connect.Success")),
                        ("description", Amf0Value::str("Connection succeeded.")),
                        ("objectEncoding", Amf0Value::Number(0.0)),
                    ]),
                ],
            ),
        ];
        info!(%app, "rtmp connect");
        self.phase = SessionPhase::Connected { app: app.clone() };
        Ok(CommandOutcome {
            responses,
            event: Some(SessionEvent::Connected { app }),
            close: false,
        })
    }

    fn on_create_stream(&mut self, txn: f64) -> Result<CommandOutcome, RtmpError> {
        if self.app().is_none() {
            return Err(RtmpError::BadState("createStream before connect".into()));
        }
        let stream_id = self.next_stream_id;
        self.next_stream_id += 1;
        Ok(CommandOutcome {
            responses: vec![RtmpMessage::command(
                COMMAND_CSID,
                0,
                &[
                    Amf0Value::str("_result"),
                    Amf0Value::Number(txn),
                    Amf0Value::Null,
                    Amf0Value::Number(stream_id as f64),
                ],
            )],
            event: Some(SessionEvent::StreamCreated { stream_id }),
            close: false,
        })
    }

    fn on_publish(&mut self, values: &[Amf0Value], stream_id: u32) -> Result<CommandOutcome, RtmpError> {
        let app = match &self.phase {
            SessionPhase::Connected { app } => app.clone(),
            SessionPhase::AwaitConnect => return Err(RtmpError::BadState("publish before connect".into())),
            SessionPhase::Publishing { .. } => return Err(RtmpError::BadState("already publishing".into())),
        };
        let key = values.get(3).and_then(Amf0Value::as_str).unwrap_or_default().to_string();
        let status = |level: &str, code: &str, description: String| {
            RtmpMessage::command(
                STATUS_CSID,
                stream_id,
                &[
                    Amf0Value::str("onStatus"),
                    Amf0Value::Number(0.0),
                    Amf0Value::Null,
                    status_object(level, code, description),
                ],
            )
        };
        let acquired = if key.is_empty() {
            Err("empty stream key".to_string())
        } else {
            self.registry.try_acquire(&key)
        };
        if let Err(reason) = acquired {
            info!(%key, %reason, "publish rejected");
            return Ok(CommandOutcome {
                responses: vec![status("error", "NetStream.Publish.BadName", reason)],
                event: None,
                close: true,
            });
        }
        info!(%app, %key, stream_id, "publish started");
        let description = format!("{key} is now published.");
        self.phase = SessionPhase::Publishing {
            app,
            stream_key: key.clone(),
            stream_id,
        };
        Ok(CommandOutcome {
            responses: vec![status("status", "NetStream.Publish.Start", description)],
            event: Some(SessionEvent::PublishStarted { stream_key: key, stream_id }),
            close: false,
        })
    }

    fn on_unpublish(&mut self) -> CommandOutcome {
        let SessionPhase::Publishing { app, stream_key, .. } = &self.phase else {
            return CommandOutcome::default();
        };
        let stream_key = stream_key.clone();
        self.registry.release(&stream_key);
        self.phase = SessionPhase::Connected { app: app.clone() };
        CommandOutcome {
            event: Some(SessionEvent::PublishStopped { stream_key }),
            ..Default::default()
        }
    }
}

impl Drop for Session {
    fn drop(&mut self) {
        if let Some(key) = self.stream_key() {
            self.registry.release(key);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cmd(stream_id: u32, values: &[Amf0Value]) -> RtmpMessage {
        RtmpMessage::command(3, stream_id, values)
    }

    fn connect() -> RtmpMessage {
        cmd(
            0,
            &[
                Amf0Value::str("connect"),
                Amf0Value::Number(1.0),
                Amf0Value::object([("app", Amf0Value::str("live"))]),
            ],
        )
    }

    fn publish(key: &str) -> RtmpMessage {
        cmd(
            1,
            &[
                Amf0Value::str("publish"),
                Amf0Value::Number(5.0),
                Amf0Value::Null,
                Amf0Value::str(key),
                Amf0Value::str("live"),
            ],
        )
    }

    fn result_values(m: &RtmpMessage) -> Vec<Amf0Value> {
        amf0::decode(&m.payload).unwrap()
    }

    #[test]
    fn connect_create_publish() {
        let mut s = Session::new(Arc::default());
        let out = s.handle_command(&connect()).unwrap();
        let types: Vec<u8> = out.responses.iter().map(|m| m.type_id).collect();
        assert_eq!(types, vec![5, 6, 1, 20]);
        let v = result_values(&out.responses[3]);
        assert_eq!(v[0].as_str(), Some("_result"));
        assert_eq!(
            v[3].get("code").and_then(Amf0Value::as_str),
            Some("NetConnection.Connect.Success")
        );

        let out = s
            .handle_command(&cmd(0, &[Amf0Value::str("createStream"), Amf0Value::Number(4.0), Amf0Value::Null]))
            .unwrap();
        let v = result_values(&out.responses[0]);
        assert_eq!(v[1].as_number(), Some(4.0));
        assert_eq!(v[3].as_number(), Some(1.0));

        let out = s.handle_command(&publish("drone1")).unwrap();
        let v = result_values(&out.responses[0]);
        assert_eq!(v[0].as_str(), Some("onStatus"));
        assert_eq!(v[3].get("code").and_then(Amf0Value::as_str), Some("NetStream.Publish.Start"));
        assert_eq!(out.responses[0].stream_id, 1);
        assert_eq!(s.stream_key(), Some("drone1"));
    }

    #[test]
    fn publish_before_connect_is_bad_state() {
        let mut s = Session::new(Arc::default());
        assert!(matches!(s.handle_command(&publish("k")), Err(RtmpError::BadState(_))));
    }

    #[test]
    fn unknown_and_amf3_commands() {
        let mut s = Session::new(Arc::default());
        assert!(matches!(
            s.handle_command(&cmd(0, &[Amf0Value::str("frobnicate"), Amf0Value::Number(2.0)])),
            Err(RtmpError::UnknownCommand(n)) if n == "frobnicate"
        ));
        let mut m = connect();
        m.type_id = msg_type::COMMAND_AMF3;
        assert!(matches!(s.handle_command(&m), Err(RtmpError::UnknownCommand(_))));
    }

    #[test]
    fn allow_list_and_single_publisher() {
        let registry = Arc::new(PublishRegistry::new(vec!["good".into()]));
        let mut a = Session::new(Arc::clone(&registry));
        a.handle_command(&connect()).unwrap();
        let out = a.handle_command(&publish("bad")).unwrap();
        assert!(out.close);
        assert!(!a.is_publishing());

        a.handle_command(&publish("good")).unwrap();
        let mut b = Session::new(Arc::clone(&registry));
        b.handle_command(&connect()).unwrap();
        let out = b.handle_command(&publish("good")).unwrap();
        let v = result_values(&out.responses[0]);
        assert_eq!(v[3].get("code").and_then(Amf0Value::as_str), Some("NetStream.Publish.BadName"));

        drop(a);
        assert!(registry.active_keys().is_empty());
        let out = b.handle_command(&publish("good")).unwrap();
        assert!(!out.close);
    }

    #[test]
    fn unpublish_releases_key() {
        let registry = Arc::new(PublishRegistry::default());
        let mut s = Session::new(Arc::clone(&registry));
        s.handle_command(&connect()).unwrap();
        s.handle_command(&publish("k")).unwrap();
        let out = s
            .handle_command(&cmd(1, &[Amf0Value::str("deleteStream"), Amf0Value::Number(6.0)]))
            .unwrap();
        assert_eq!(out.event, Some(SessionEvent::PublishStopped { stream_key: "k".into() }));
        assert!(registry.active_keys().is_empty());
    }
}
