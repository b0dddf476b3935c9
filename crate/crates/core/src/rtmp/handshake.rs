use std::io::{Read, Write};
use std::sync::OnceLock;
use std::time::Instant;

use rand::RngCore;

use super::RtmpError;

pub const RTMP_VERSION: u8 = 3;
pub const HANDSHAKE_SIZE: usize = 1536;
const RANDOM_LEN: usize = HANDSHAKE_SIZE - 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HandshakePhase {
    AwaitC0C1,
    AwaitC2,
    Done,
}

#[derive(Debug, Clone)]
pub struct HandshakeState {
    pub phase: HandshakePhase,
    pub peer_time: u32,
    pub peer_random: Vec<u8>,
}

impl HandshakeState {
    fn new() -> Self {
        Self {
            phase: HandshakePhase::AwaitC0C1,
            peer_time: 0,
            peer_random: Vec::new(),
        }
    }

    fn advance(&mut self, to: HandshakePhase) {
        let ok = matches!(
            (self.phase, to),
            (HandshakePhase::AwaitC0C1, HandshakePhase::AwaitC2) | (HandshakePhase::AwaitC2, HandshakePhase::Done)
        );
        assert!(ok, "handshake phase {:?} -> {:?}", self.phase, to);
        self.phase = to;
    }
}

fn epoch_millis() -> u32 {
    static START: OnceLock<Instant> = OnceLock::new();
    START.get_or_init(Instant::now).elapsed().as_millis() as u32
}

/// Builds a C1/S1 packet: 4-byte time, 4 zero bytes, 1528 random bytes.
fn make_packet(time: u32) -> Vec<u8> {
    let mut p = vec![0u8; HANDSHAKE_SIZE];
    p[..4].copy_from_slice(&time.to_be_bytes());
    rand::rng().fill_bytes(&mut p[8..]);
    p
}

/// Server side of the simple (non-digest) handshake.
pub fn perform_handshake<S: Read + Write>(stream: &mut S) -> Result<HandshakeState, RtmpError> {
    let mut state = HandshakeState::new();

    let mut c0 = [0u8; 1];
    stream.read_exact(&mut c0)?;
    if c0[0] != RTMP_VERSION {
        return Err(RtmpError::UnsupportedVersion(c0[0]));
    }
    let mut c1 = vec![0u8; HANDSHAKE_SIZE];
    stream.read_exact(&mut c1)?;
    state.peer_time = u32::from_be_bytes(c1[..4].try_into().unwrap());
    state.peer_random = c1[8..].to_vec();
    debug_assert_eq!(state.peer_random.len(), RANDOM_LEN);

    let s1 = make_packet(epoch_millis());
    let mut reply = Vec::with_capacity(1 + 2 * HANDSHAKE_SIZE);
    reply.push(RTMP_VERSION);
    reply.extend_from_slice(&s1);
    reply.extend_from_slice(&c1);
    stream.write_all(&reply)?;
    stream.flush()?;
    state.advance(HandshakePhase::AwaitC2);

    // C2 should echo S1; publishers in the wild are lax about it, so it is
    // consumed but not verified.
    let mut c2 = vec![0u8; HANDSHAKE_SIZE];
    stream.read_exact(&mut c2)?;
    state.advance(HandshakePhase::Done);
    Ok(state)
}

/// Client side, used by the scripted test publisher. Returns the S1 packet.
pub fn client_handshake<S: Read + Write>(stream: &mut S) -> Result<Vec<u8>, RtmpError> {
    let c1 = make_packet(epoch_millis());
    let mut hello = Vec::with_capacity(1 + HANDSHAKE_SIZE);
    hello.push(RTMP_VERSION);
    hello.extend_from_slice(&c1);
    stream.write_all(&hello)?;
    stream.flush()?;

    let mut s0 = [0u8; 1];
    stream.read_exact(&mut s0)?;
    if s0[0] != RTMP_VERSION {
        return Err(RtmpError::UnsupportedVersion(s0[0]));
    }
    let mut s1 = vec![0u8; HANDSHAKE_SIZE];
    stream.read_exact(&mut s1)?;
    let mut s2 = vec![0u8; HANDSHAKE_SIZE];
    stream.read_exact(&mut s2)?;
    if s2 != c1 {
        return Err(RtmpError::MalformedHeader("S2 does not echo C1".into()));
    }
    stream.write_all(&s1)?;
    stream.flush()?;
    Ok(s1)
}
