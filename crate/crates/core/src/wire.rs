//! Sensor message encoding and the delimiter framing used on report connections.
//!
//! A message is `[kind u8][device_id u16 LE][timestamp u32 LE][payload]`. Frames
//! carry one payload followed by its CRC-16/CCITT-FALSE (big-endian), with the
//! delimiter `0x0A` and the escape introducer `0x1B` escaped inside the body,
//! terminated by a single `0x0A`:
//!
//! ```text
//! escaped(payload || crc16_be) || 0x0A
//! 0x0A -> 0x1B 0x01
//! 0x1B -> 0x1B 0x02
//! ```
//!
//! The stream decoder resynchronizes on the next delimiter after any corruption.

use thiserror::Error;

pub const DELIMITER: u8 = 0x0A;
pub const ESCAPE: u8 = 0x1B;
const ESCAPED_DELIMITER: u8 = 0x01;
const ESCAPED_ESCAPE: u8 = 0x02;

/// Largest payload a single frame may carry.
pub const MAX_FRAME_PAYLOAD: usize = 131;
/// Largest encoded message (the recordstore record limit).
pub const MAX_MESSAGE_LEN: usize = 128;

pub const HEADER_LEN: usize = 7;
pub const SAMPLE_LEN: usize = HEADER_LEN + 13;
pub const OCC_EVENT_LEN: usize = HEADER_LEN + 1;
pub const ORI_EVENT_LEN: usize = HEADER_LEN + 2;

pub const TEMPERATURE_RANGE: (i16, i16) = (-4000, 8500);
pub const HUMIDITY_MAX: u16 = 10000;
pub const ACCEL_LIMIT: i16 = 8000;

const CRC16_POLY: u16 = 0x1021;

/// CRC-16/CCITT-FALSE: poly 0x1021, init 0xFFFF, no reflection, no final xor.
pub fn crc16_ccitt_false(data: &[u8]) -> u16 {
    let mut crc: u16 = 0xFFFF;
    for &byte in data {
        crc ^= (byte as u16) << 8;
        for _ in 0..8 {
            crc = if crc & 0x8000 != 0 {
                (crc << 1) ^ CRC16_POLY
            } else {
                crc << 1
            };
        }
    }
    crc
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Axis {
    X = 0,
    Y = 1,
    Z = 2,
}

impl Axis {
    pub fn from_u8(v: u8) -> Option<Axis> {
        match v {
            0 => Some(Axis::X),
            1 => Some(Axis::Y),
            2 => Some(Axis::Z),
            _ => None,
        }
    }

    pub fn letter(self) -> char {
        match self {
            Axis::X => 'x',
            Axis::Y => 'y',
            Axis::Z => 'z',
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Sign {
    Positive,
    Negative,
}

impl Sign {
    pub fn as_i8(self) -> i8 {
        match self {
            Sign::Positive => 1,
            Sign::Negative => -1,
        }
    }

    pub fn symbol(self) -> char {
        match self {
            Sign::Positive => '+',
            Sign::Negative => '-',
        }
    }
}

/// One periodic reading set, in the fixed-point units carried on the wire.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SampleReading {
    /// Centi-degrees Celsius.
    pub temperature: i16,
    /// Centi-percent relative humidity.
    pub relative_humidity: u16,
    pub illuminance: u16,
    /// Milli-g per axis.
    pub accel: [i16; 3],
    /// 0..=255 maps onto 0..=100 %.
    pub occupancy_fraction: u8,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Payload {
    Sample(SampleReading),
    Occupancy { occupied: bool },
    Orientation { axis: Axis, sign: Sign },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum MessageKind {
    Sample = 0x01,
    OccEvent = 0x02,
    OriEvent = 0x03,
}

impl MessageKind {
    pub fn from_u8(v: u8) -> Option<MessageKind> {
        match v {
            0x01 => Some(MessageKind::Sample),
            0x02 => Some(MessageKind::OccEvent),
            0x03 => Some(MessageKind::OriEvent),
            _ => None,
        }
    }

    fn encoded_len(self) -> usize {
        match self {
            MessageKind::Sample => SAMPLE_LEN,
            MessageKind::OccEvent => OCC_EVENT_LEN,
            MessageKind::OriEvent => ORI_EVENT_LEN,
        }
    }
}

/// A "Sensor Data Report": one timestamped reading set or asynchronous event.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SensorMessage {
    pub device_id: u16,
    /// Seconds since the simulation epoch.
    pub timestamp: u32,
    pub payload: Payload,
}

impl SensorMessage {
    pub fn kind(&self) -> MessageKind {
        match self.payload {
            Payload::Sample(_) => MessageKind::Sample,
            Payload::Occupancy { .. } => MessageKind::OccEvent,
            Payload::Orientation { .. } => MessageKind::OriEvent,
        }
    }

    pub fn validate(&self) -> Result<(), WireError> {
        if let Payload::Sample(s) = &self.payload {
            if s.temperature < TEMPERATURE_RANGE.0 || s.temperature > TEMPERATURE_RANGE.1 {
                return Err(WireError::OutOfRange {
                    field: "temperature",
                    value: s.temperature as i64,
                });
            }
            if s.relative_humidity > HUMIDITY_MAX {
                return Err(WireError::OutOfRange {
                    field: "relative_humidity",
                    value: s.relative_humidity as i64,
                });
            }
            for (name, &a) in ["accel_x", "accel_y", "accel_z"].iter().zip(&s.accel) {
                if !(-ACCEL_LIMIT..=ACCEL_LIMIT).contains(&a) {
                    return Err(WireError::OutOfRange {
                        field: name,
                        value: a as i64,
                    });
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum WireError {
    #[error("field {field} out of range: {value}")]
    OutOfRange { field: &'static str, value: i64 },
    #[error("unknown kind 0x{kind:02x} at offset {offset}")]
    UnknownKind { kind: u8, offset: usize },
    #[error("truncated message: need {needed} bytes, have {available} (offset {offset})")]
    Truncated {
        offset: usize,
        needed: usize,
        available: usize,
    },
    #[error("invalid {field} value 0x{value:02x} at offset {offset}")]
    InvalidField {
        field: &'static str,
        value: u8,
        offset: usize,
    },
    #[error("{extra} trailing bytes after message at offset {offset}")]
    TrailingBytes { offset: usize, extra: usize },
    #[error("frame payload length {0} outside 1..={MAX_FRAME_PAYLOAD}")]
    PayloadLength(usize),
}

pub fn encode_message(msg: &SensorMessage) -> Result<Vec<u8>, WireError> {
    msg.validate()?;
    let kind = msg.kind();
    let mut out = Vec::with_capacity(kind.encoded_len());
    out.push(kind as u8);
    out.extend_from_slice(&msg.device_id.to_le_bytes());
    out.extend_from_slice(&msg.timestamp.to_le_bytes());
    match msg.payload {
        Payload::Sample(s) => {
            out.extend_from_slice(&s.temperature.to_le_bytes());
            out.extend_from_slice(&s.relative_humidity.to_le_bytes());
            out.extend_from_slice(&s.illuminance.to_le_bytes());
            for a in s.accel {
                out.extend_from_slice(&a.to_le_bytes());
            }
            out.push(s.occupancy_fraction);
        }
        Payload::Occupancy { occupied } => out.push(occupied as u8),
        Payload::Orientation { axis, sign } => {
            out.push(axis as u8);
            out.push(sign.as_i8() as u8);
        }
    }
    debug_assert_eq!(out.len(), kind.encoded_len());
    Ok(out)
}

pub fn decode_message(bytes: &[u8]) -> Result<SensorMessage, WireError> {
    let kind_byte = *bytes.first().ok_or(WireError::Truncated {
        offset: 0,
        needed: 1,
        available: 0,
    })?;
    let kind = MessageKind::from_u8(kind_byte).ok_or(WireError::UnknownKind {
        kind: kind_byte,
        offset: 0,
    })?;
    let needed = kind.encoded_len();
    if bytes.len() < needed {
        return Err(WireError::Truncated {
            offset: bytes.len(),
            needed,
            available: bytes.len(),
        });
    }
    if bytes.len() > needed {
        return Err(WireError::TrailingBytes {
            offset: needed,
            extra: bytes.len() - needed,
        });
    }
    let u16_at = |o: usize| u16::from_le_bytes([bytes[o], bytes[o + 1]]);
    let i16_at = |o: usize| i16::from_le_bytes([bytes[o], bytes[o + 1]]);
    let device_id = u16_at(1);
    let timestamp = u32::from_le_bytes([bytes[3], bytes[4], bytes[5], bytes[6]]);
    let payload = match kind {
        MessageKind::Sample => Payload::Sample(SampleReading {
            temperature: i16_at(7),
            relative_humidity: u16_at(9),
            illuminance: u16_at(11),
            accel: [i16_at(13), i16_at(15), i16_at(17)],
            occupancy_fraction: bytes[19],
        }),
        MessageKind::OccEvent => match bytes[7] {
            0 => Payload::Occupancy { occupied: false },
            1 => Payload::Occupancy { occupied: true },
            v => {
                return Err(WireError::InvalidField {
                    field: "occupancy state",
                    value: v,
                    offset: 7,
                })
            }
        },
        MessageKind::OriEvent => {
            let axis = Axis::from_u8(bytes[7]).ok_or(WireError::InvalidField {
                field: "axis",
                value: bytes[7],
                offset: 7,
            })?;
            let sign = match bytes[8] as i8 {
                1 => Sign::Positive,
                -1 => Sign::Negative,
                _ => {
                    return Err(WireError::InvalidField {
                        field: "sign",
                        value: bytes[8],
                        offset: 8,
                    })
                }
            };
            Payload::Orientation { axis, sign }
        }
    };
    let msg = SensorMessage {
        device_id,
        timestamp,
        payload,
    };
    msg.validate()?;
    Ok(msg)
}

fn push_escaped(out: &mut Vec<u8>, byte: u8) {
    match byte {
        DELIMITER => out.extend_from_slice(&[ESCAPE, ESCAPED_DELIMITER]),
        ESCAPE => out.extend_from_slice(&[ESCAPE, ESCAPED_ESCAPE]),
        b => out.push(b),
    }
}

pub fn frame_encode(payload: &[u8]) -> Result<Vec<u8>, WireError> {
    if payload.is_empty() || payload.len() > MAX_FRAME_PAYLOAD {
        return Err(WireError::PayloadLength(payload.len()));
    }
    let crc = crc16_ccitt_false(payload);
    let mut out = Vec::with_capacity(payload.len() + 4);
    for &b in payload.iter().chain(crc.to_be_bytes().iter()) {
        push_escaped(&mut out, b);
    }
    out.push(DELIMITER);
    Ok(out)
}

/// Unescapes one delimiter-free segment and checks its CRC.
fn decode_segment(raw: &[u8]) -> Option<Vec<u8>> {
    let mut body = Vec::with_capacity(raw.len());
    let mut iter = raw.iter();
    while let Some(&b) = iter.next() {
        if b == ESCAPE {
            match iter.next() {
                Some(&ESCAPED_DELIMITER) => body.push(DELIMITER),
                Some(&ESCAPED_ESCAPE) => body.push(ESCAPE),
                _ => return None,
            }
        } else {
            body.push(b);
        }
    }
    if body.len() < 3 || body.len() > MAX_FRAME_PAYLOAD + 2 {
        return None;
    }
    let split = body.len() - 2;
    let crc = u16::from_be_bytes([body[split], body[split + 1]]);
    if crc16_ccitt_false(&body[..split]) != crc {
        return None;
    }
    body.truncate(split);
    Some(body)
}

/// Longest escaped segment a valid frame can produce.
const MAX_SEGMENT: usize = 2 * (MAX_FRAME_PAYLOAD + 2);

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct StreamStats {
    pub delivered: usize,
    pub dropped: usize,
}

/// Incremental frame decoder owned by a single connection.
///
/// A segment that fails as a whole is retried from later start positions,
/// shortest suffix first, so a valid frame whose preceding delimiter was lost
/// to corruption (or to leading noise) is still recovered. The failed segment
/// counts as one drop.
#[derive(Debug, Default)]
pub struct StreamDecoder {
    segment: Vec<u8>,
    stats: StreamStats,
}

impl StreamDecoder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn stats(&self) -> StreamStats {
        self.stats
    }

    /// Bytes buffered since the last delimiter.
    pub fn pending(&self) -> usize {
        self.segment.len()
    }

    pub fn push<F: FnMut(Vec<u8>)>(&mut self, bytes: &[u8], mut sink: F) {
        for &b in bytes {
            if b == DELIMITER {
                self.finish_segment(&mut sink);
            } else {
                self.segment.push(b);
            }
        }
    }

    /// Drops any unterminated tail, counting it when non-empty.
    pub fn finish(&mut self) -> StreamStats {
        if !self.segment.is_empty() {
            self.segment.clear();
            self.stats.dropped += 1;
        }
        self.stats
    }

    fn finish_segment<F: FnMut(Vec<u8>)>(&mut self, sink: &mut F) {
        let segment = std::mem::take(&mut self.segment);
        if segment.is_empty() {
            return;
        }
        if segment.len() <= MAX_SEGMENT {
            if let Some(payload) = decode_segment(&segment) {
                self.stats.delivered += 1;
                sink(payload);
                return;
            }
        }
        self.stats.dropped += 1;
        let first = segment.len().saturating_sub(MAX_SEGMENT).max(1);
        for start in (first..segment.len().saturating_sub(2)).rev() {
            if let Some(payload) = decode_segment(&segment[start..]) {
                self.stats.delivered += 1;
                sink(payload);
                return;
            }
        }
    }
}

/// Decodes a complete byte stream, delivering payloads in order.
pub fn frame_decode_stream<F: FnMut(Vec<u8>)>(bytes: &[u8], sink: F) -> StreamStats {
    let mut decoder = StreamDecoder::new();
    decoder.push(bytes, sink);
    decoder.finish()
}

pub const PROTOCOL_VERSION: u8 = 1;
const HELLO_TAG: u8 = 0x48;
const END_TAG: u8 = 0x45;
pub const HELLO_LEN: usize = 6;
pub const END_LEN: usize = 3;

/// Frames that open and close a report connection. Every other frame on the
/// connection carries one recordstore record.
///
/// A template record starting with the same tag byte is always much longer
/// (0x48 and 0x45 encode 73- and 70-byte messages), so tag plus exact length
/// identifies these frames unambiguously.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SessionFrame {
    Hello {
        device_id: u16,
        version: u8,
        record_count: u16,
    },
    End {
        messages_sent: u16,
    },
}

impl SessionFrame {
    pub fn encode(&self) -> Vec<u8> {
        match *self {
            SessionFrame::Hello {
                device_id,
                version,
                record_count,
            } => {
                let mut v = vec![HELLO_TAG];
                v.extend_from_slice(&device_id.to_le_bytes());
                v.push(version);
                v.extend_from_slice(&record_count.to_le_bytes());
                v
            }
            SessionFrame::End { messages_sent } => {
                let mut v = vec![END_TAG];
                v.extend_from_slice(&messages_sent.to_le_bytes());
                v
            }
        }
    }

    pub fn parse(payload: &[u8]) -> Option<SessionFrame> {
        match (payload.first(), payload.len()) {
            (Some(&HELLO_TAG), HELLO_LEN) => Some(SessionFrame::Hello {
                device_id: u16::from_le_bytes([payload[1], payload[2]]),
                version: payload[3],
                record_count: u16::from_le_bytes([payload[4], payload[5]]),
            }),
            (Some(&END_TAG), END_LEN) => Some(SessionFrame::End {
                messages_sent: u16::from_le_bytes([payload[1], payload[2]]),
            }),
            _ => None,
        }
    }
}

/// Gateway reply after END: all records accepted.
pub const ACK: u8 = 0x06;
/// Gateway reply after END: something was missing or malformed.
pub const NAK: u8 = 0x15;

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn occ(device_id: u16, timestamp: u32, occupied: bool) -> SensorMessage {
        SensorMessage {
            device_id,
            timestamp,
            payload: Payload::Occupancy { occupied },
        }
    }

    fn random_message(rng: &mut ChaCha8Rng) -> SensorMessage {
        let payload = match rng.gen_range(0..3) {
            0 => Payload::Sample(SampleReading {
                temperature: rng.gen_range(TEMPERATURE_RANGE.0..=TEMPERATURE_RANGE.1),
                relative_humidity: rng.gen_range(0..=HUMIDITY_MAX),
                illuminance: rng.gen(),
                accel: [
                    rng.gen_range(-ACCEL_LIMIT..=ACCEL_LIMIT),
                    rng.gen_range(-ACCEL_LIMIT..=ACCEL_LIMIT),
                    rng.gen_range(-ACCEL_LIMIT..=ACCEL_LIMIT),
                ],
                occupancy_fraction: rng.gen(),
            }),
            1 => Payload::Occupancy {
                occupied: rng.gen(),
            },
            _ => Payload::Orientation {
                axis: Axis::from_u8(rng.gen_range(0..3)).unwrap(),
                sign: if rng.gen() {
                    Sign::Positive
                } else {
                    Sign::Negative
                },
            },
        };
        SensorMessage {
            device_id: rng.gen(),
            timestamp: rng.gen(),
            payload,
        }
    }

    #[test]
    fn crc_check_value() {
        assert_eq!(crc16_ccitt_false(b"123456789"), 0x29B1);
    }

    #[test]
    fn occupancy_event_layout() {
        let bytes = encode_message(&occ(5, 100, true)).unwrap();
        assert_eq!(bytes, [0x02, 0x05, 0x00, 0x64, 0x00, 0x00, 0x00, 0x01]);
        assert_eq!(decode_message(&bytes).unwrap(), occ(5, 100, true));
    }

    #[test]
    fn sample_is_fixed_width() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let m = random_message(&mut rng);
            let len = encode_message(&m).unwrap().len();
            match m.payload {
                Payload::Sample(_) => assert_eq!(len, 20),
                Payload::Occupancy { .. } => assert_eq!(len, 8),
                Payload::Orientation { .. } => assert_eq!(len, 9),
            }
            assert!(len <= MAX_MESSAGE_LEN);
        }
    }

    #[test]
    fn message_round_trip_seeded() {
        let mut rng = ChaCha8Rng::seed_from_u64(0xB1B);
        for _ in 0..10_000 {
            let m = random_message(&mut rng);
            assert_eq!(decode_message(&encode_message(&m).unwrap()).unwrap(), m);
        }
    }

    #[test]
    fn range_errors() {
        let mut s = SampleReading {
            temperature: 8501,
            ..Default::default()
        };
        let msg = |s| SensorMessage {
            device_id: 1,
            timestamp: 0,
            payload: Payload::Sample(s),
        };
        assert!(matches!(
            encode_message(&msg(s)),
            Err(WireError::OutOfRange {
                field: "temperature",
                ..
            })
        ));
        s.temperature = 0;
        s.relative_humidity = 10001;
        assert!(encode_message(&msg(s)).is_err());
        s.relative_humidity = 0;
        s.accel[2] = -8001;
        assert!(matches!(
            encode_message(&msg(s)),
            Err(WireError::OutOfRange {
                field: "accel_z",
                ..
            })
        ));
    }

    #[test]
    fn decode_errors() {
        assert!(matches!(
            decode_message(&[0x7F, 0, 0, 0, 0, 0, 0]),
            Err(WireError::UnknownKind {
                kind: 0x7F,
                offset: 0
            })
        ));
        let sample = SensorMessage {
            device_id: 3,
            timestamp: 9,
            payload: Payload::Sample(SampleReading::default()),
        };
        let bytes = encode_message(&sample).unwrap();
        assert!(matches!(
            decode_message(&bytes[..19]),
            Err(WireError::Truncated { offset: 19, .. })
        ));
        let mut bad = encode_message(&occ(1, 1, false)).unwrap();
        bad[7] = 2;
        assert!(matches!(
            decode_message(&bad),
            Err(WireError::InvalidField { offset: 7, .. })
        ));
    }

    #[test]
    fn single_byte_frame() {
        // CRC-16/CCITT-FALSE(0x01) = 0xF1D1, computed with Python's binascii.crc_hqx.
        assert_eq!(frame_encode(&[0x01]).unwrap(), [0x01, 0xF1, 0xD1, 0x0A]);
    }

    #[test]
    fn reserved_bytes_are_escaped() {
        let frame = frame_encode(&[0x0A, 0x1B, 0x55]).unwrap();
        assert_eq!(&frame[..4], &[0x1B, 0x01, 0x1B, 0x02]);
        assert_eq!(frame.iter().filter(|&&b| b == DELIMITER).count(), 1);
        let mut out = Vec::new();
        let stats = frame_decode_stream(&frame, |p| out.push(p));
        assert_eq!(out, vec![vec![0x0A, 0x1B, 0x55]]);
        assert_eq!(stats.dropped, 0);
    }

    #[test]
    fn payload_length_limits() {
        assert_eq!(frame_encode(&[]), Err(WireError::PayloadLength(0)));
        assert_eq!(
            frame_encode(&[0u8; 132]),
            Err(WireError::PayloadLength(132))
        );
        assert!(frame_encode(&[0u8; 131]).is_ok());
    }

    #[test]
    fn two_frames_and_crc_flip() {
        let a = frame_encode(b"first").unwrap();
        let b = frame_encode(b"second").unwrap();
        let mut stream = [a.clone(), b.clone()].concat();
        let mut out = Vec::new();
        let stats = frame_decode_stream(&stream, |p| out.push(p));
        assert_eq!((stats.delivered, stats.dropped), (2, 0));

        // flip a bit in the first frame's CRC low byte
        stream[a.len() - 2] ^= 0x04;
        out.clear();
        let stats = frame_decode_stream(&stream, |p| out.push(p));
        assert_eq!(out, vec![b"second".to_vec()]);
        assert_eq!((stats.delivered, stats.dropped), (1, 1));
    }

    #[test]
    fn noise_then_valid_frame() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let frame = frame_encode(b"after the noise").unwrap();
        let mut stream: Vec<u8> = (0..1024).map(|_| rng.gen()).collect();
        stream.extend_from_slice(&frame);
        let mut out = Vec::new();
        let stats = frame_decode_stream(&stream, |p| out.push(p));
        assert_eq!(out, vec![b"after the noise".to_vec()]);
        assert_eq!(stats.delivered, 1);
        assert!(stats.dropped >= 1);
    }

    #[test]
    fn noise_recovery_and_false_acceptance() {
        // A 16-bit CRC lets roughly one corrupted segment in a thousand through
        // once suffixes are retried; the trailing frame must always survive.
        let mut rng = ChaCha8Rng::seed_from_u64(4242);
        let frame = frame_encode(b"after the noise").unwrap();
        let (mut spurious, mut segments) = (0, 0);
        for _ in 0..500 {
            let mut stream: Vec<u8> = (0..1024).map(|_| rng.gen()).collect();
            stream.extend_from_slice(&frame);
            let mut out = Vec::new();
            let stats = frame_decode_stream(&stream, |p| out.push(p));
            assert_eq!(out.last().unwrap(), b"after the noise");
            spurious += out.len() - 1;
            segments += stats.dropped;
        }
        assert!(
            spurious * 200 < segments,
            "{spurious} spurious of {segments}"
        );
    }

    #[test]
    fn single_bit_flips_detected_exhaustively() {
        for len in 1..=4usize {
            let payload: Vec<u8> = (0..len as u8).map(|i| i.wrapping_mul(37) ^ 0x5A).collect();
            let crc = crc16_ccitt_false(&payload);
            for bit in 0..len * 8 {
                let mut p = payload.clone();
                p[bit / 8] ^= 1 << (bit % 8);
                assert_ne!(crc16_ccitt_false(&p), crc);
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let payload: Vec<u8> = (0..131).map(|_| rng.gen()).collect();
        let crc = crc16_ccitt_false(&payload);
        for bit in 0..131 * 8 {
            let mut p = payload.clone();
            p[bit / 8] ^= 1 << (bit % 8);
            assert_ne!(crc16_ccitt_false(&p), crc);
        }
    }

    #[test]
    fn session_frames() {
        let hello = SessionFrame::Hello {
            device_id: 0x0102,
            version: PROTOCOL_VERSION,
            record_count: 600,
        };
        let bytes = hello.encode();
        assert_eq!(bytes, [0x48, 0x02, 0x01, 0x01, 0x58, 0x02]);
        assert_eq!(SessionFrame::parse(&bytes), Some(hello));
        let end = SessionFrame::End { messages_sent: 7 };
        assert_eq!(end.encode(), [0x45, 0x07, 0x00]);
        assert_eq!(SessionFrame::parse(&end.encode()), Some(end));
        // a template record with header 0x45 is 71 bytes long
        let mut record = vec![0x45];
        record.extend_from_slice(&[0u8; 70]);
        assert_eq!(SessionFrame::parse(&record), None);
    }

    #[test]
    fn crc_matches_reference_crate() {
        let reference = crc::Crc::<u16>::new(&crc::CRC_16_IBM_3740);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for len in 0..200 {
            let data: Vec<u8> = (0..len).map(|_| rng.gen()).collect();
            assert_eq!(crc16_ccitt_false(&data), reference.checksum(&data));
        }
    }
}
