//! FLV VideoTagHeader parsing for type-9 messages.

use super::{msg_type, RtmpError, RtmpMessage};

const CODEC_AVC: u8 = 7;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FrameType {
    Key,
    Inter,
    /// Disposable inter, generated key, command frames: kept as the raw nibble.
    Other(u8),
}

impl FrameType {
    pub fn from_nibble(n: u8) -> Self {
        match n {
            1 => FrameType::Key,
            2 => FrameType::Inter,
            other => FrameType::Other(other),
        }
    }

    pub fn nibble(self) -> u8 {
        match self {
            FrameType::Key => 1,
            FrameType::Inter => 2,
            FrameType::Other(n) => n & 0x0F,
        }
    }
}

/// One encoded video frame as received from the publisher.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedFrame {
    pub seq: u64,
    pub dts: u32,
    pub codec_id: u8,
    pub frame_type: FrameType,
    pub avc_packet_type: Option<u8>,
    /// Signed 24-bit composition time offset in milliseconds.
    pub composition_offset: Option<i32>,
    pub payload: Vec<u8>,
}

impl EncodedFrame {
    /// Presentation time: dts plus composition offset when present.
    pub fn pts_millis(&self) -> u64 {
        let pts = self.dts as i64 + self.composition_offset.unwrap_or(0) as i64;
        pts.max(0) as u64
    }
}

fn sign_extend_24(b: &[u8]) -> i32 {
    let raw = (b[0] as i32) << 16 | (b[1] as i32) << 8 | b[2] as i32;
    (raw << 8) >> 8
}

/// Parses the video tag header of `msg` and tags the frame with `seq`.
pub fn extract_video_frame(msg: &RtmpMessage, seq: u64) -> Result<EncodedFrame, RtmpError> {
    debug_assert_eq!(msg.type_id, msg_type::VIDEO);
    let p = &msg.payload;
    let first = *p.first().ok_or(RtmpError::EmptyPayload)?;
    let frame_type = FrameType::from_nibble(first >> 4);
    let codec_id = first & 0x0F;
    let (avc_packet_type, composition_offset, body) = if codec_id == CODEC_AVC {
        if p.len() < 5 {
            return Err(RtmpError::Truncated);
        }
        (Some(p[1]), Some(sign_extend_24(&p[2..5])), &p[5..])
    } else {
        (None, None, &p[1..])
    };
    Ok(EncodedFrame {
        seq,
        dts: msg.timestamp,
        codec_id,
        frame_type,
        avc_packet_type,
        composition_offset,
        payload: body.to_vec(),
    })
}

/// Assigns strictly increasing sequence numbers to a session's video frames.
#[derive(Debug, Default)]
pub struct VideoDemuxer {
    next_seq: u64,
}

impl VideoDemuxer {
    pub fn push(&mut self, msg: &RtmpMessage) -> Result<EncodedFrame, RtmpError> {
        let ef = extract_video_frame(msg, self.next_seq)?;
        self.next_seq += 1;
        Ok(ef)
    }

    pub fn frames_emitted(&self) -> u64 {
        self.next_seq
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn video(payload: Vec<u8>) -> RtmpMessage {
        RtmpMessage {
            csid: 6,
            timestamp: 80,
            type_id: msg_type::VIDEO,
            stream_id: 1,
            payload,
        }
    }

    #[test]
    fn avc_keyframe() {
        let ef = extract_video_frame(&video(vec![0x17, 0x01, 0, 0, 0x28, 0xAA]), 0).unwrap();
        assert_eq!(ef.frame_type, FrameType::Key);
        assert_eq!(ef.codec_id, 7);
        assert_eq!(ef.avc_packet_type, Some(1));
        assert_eq!(ef.composition_offset, Some(40));
        assert_eq!(ef.payload, vec![0xAA]);
        assert_eq!(ef.pts_millis(), 120);
    }

    #[test]
    fn avc_inter_frame_negative_offset() {
        let ef = extract_video_frame(&video(vec![0x27, 0x01, 0xFF, 0xFF, 0xF6, 1]), 3).unwrap();
        assert_eq!(ef.frame_type, FrameType::Inter);
        assert_eq!(ef.codec_id, 7);
        assert_eq!(ef.composition_offset, Some(-10));
        assert_eq!(ef.seq, 3);
    }

    #[test]
    fn empty_payload() {
        assert!(matches!(extract_video_frame(&video(vec![]), 0), Err(RtmpError::EmptyPayload)));
    }

    #[test]
    fn short_avc_header() {
        assert!(matches!(extract_video_frame(&video(vec![0x17, 1]), 0), Err(RtmpError::Truncated)));
    }

    #[test]
    fn non_avc_codec_has_no_avc_fields() {
        let ef = extract_video_frame(&video(vec![0x32, 9, 9]), 0).unwrap();
        assert_eq!(ef.frame_type, FrameType::Other(3));
        assert_eq!(ef.codec_id, 2);
        assert_eq!(ef.avc_packet_type, None);
        assert_eq!(ef.payload, vec![9, 9]);
    }

    #[test]
    fn demuxer_sequences() {
        let mut d = VideoDemuxer::default();
        for i in 0..3 {
            assert_eq!(d.push(&video(vec![0x27, 1, 0, 0, 0])).unwrap().seq, i);
        }
        assert!(d.push(&video(vec![])).is_err());
        assert_eq!(d.push(&video(vec![0x27, 1, 0, 0, 0])).unwrap().seq, 3);
    }
}
