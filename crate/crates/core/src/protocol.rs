//! Device wire protocol: length-prefixed JSON frames.
//!
//! Each frame is a 4-byte big-endian payload length followed by a UTF-8
//! JSON object with at least `type`, `seq` and `ts`. Payloads above
//! [`MAX_FRAME`] bytes are refused.

use serde_json::{json, Map, Value};
use thiserror::Error;

use crate::ids::Millis;

pub const MAX_FRAME: usize = 65_536;
const HEADER: usize = 4;

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum FrameError {
    #[error("need {needed} more bytes")]
    Incomplete { needed: usize },
    #[error("frame of {len} bytes exceeds the {MAX_FRAME}-byte limit")]
    Oversize { len: usize },
    #[error("payload is not a valid JSON message: {0}")]
    BadJson(String),
    #[error("message is missing `{0}`")]
    MissingField(&'static str),
    #[error("unknown message type `{0}`")]
    UnknownType(String),
}

impl FrameError {
    pub fn code(&self) -> &'static str {
        match self {
            FrameError::Incomplete { .. } => "E_INCOMPLETE",
            FrameError::Oversize { .. } => "E_OVERSIZE",
            FrameError::BadJson(_) => "E_BAD_JSON",
            FrameError::MissingField(_) => "E_MISSING_FIELD",
            FrameError::UnknownType(_) => "E_UNKNOWN_TYPE",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SnapshotEntry {
    pub asset_id: String,
    pub cue_id: String,
    pub seek_offset: Millis,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Body {
    // device -> server
    Hello { device_id: String, role: String },
    Heartbeat,
    Pong { t0: Millis, t1: Millis, t2: Millis },
    Button { button_id: String },
    Pose { x: f64, y: f64, z: f64 },
    MediaEnded { asset_id: String, cue_id: String },
    Ack { ack_seq: u64 },
    // server -> device
    Ping { t0: Millis },
    StartMedia { asset_id: String, cue_id: String, start_at: Millis, seek_offset: Millis },
    StopMedia { asset_id: String, cue_id: String },
    Buzz { pattern: String },
    Snapshot { scene_id: String, media: Vec<SnapshotEntry> },
}

impl Body {
    pub fn type_name(&self) -> &'static str {
        match self {
            Body::Hello { .. } => "hello",
            Body::Heartbeat => "heartbeat",
            Body::Pong { .. } => "pong",
            Body::Button { .. } => "button",
            Body::Pose { .. } => "pose",
            Body::MediaEnded { .. } => "media_ended",
            Body::Ack { .. } => "ack",
            Body::Ping { .. } => "ping",
            Body::StartMedia { .. } => "start_media",
            Body::StopMedia { .. } => "stop_media",
            Body::Buzz { .. } => "buzz",
            Body::Snapshot { .. } => "snapshot",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Message {
    pub seq: u64,
    /// Sender's clock at send time.
    pub ts: Millis,
    pub body: Body,
}

impl Message {
    pub fn new(seq: u64, ts: Millis, body: Body) -> Self {
        Self { seq, ts, body }
    }

    pub fn to_value(&self) -> Value {
        let mut v = match &self.body {
            Body::Hello { device_id, role } => json!({"device_id": device_id, "role": role}),
            Body::Heartbeat => json!({}),
            Body::Pong { t0, t1, t2 } => json!({"t0": t0, "t1": t1, "t2": t2}),
            Body::Button { button_id } => json!({"button_id": button_id}),
            Body::Pose { x, y, z } => json!({"x": x, "y": y, "z": z}),
            Body::MediaEnded { asset_id, cue_id } => json!({"asset_id": asset_id, "cue_id": cue_id}),
            Body::Ack { ack_seq } => json!({"ack_seq": ack_seq}),
            Body::Ping { t0 } => json!({"t0": t0}),
            Body::StartMedia { asset_id, cue_id, start_at, seek_offset } => json!({
                "asset_id": asset_id, "cue_id": cue_id, "start_at": start_at, "seek_offset": seek_offset
            }),
            Body::StopMedia { asset_id, cue_id } => json!({"asset_id": asset_id, "cue_id": cue_id}),
            Body::Buzz { pattern } => json!({"pattern": pattern}),
            Body::Snapshot { scene_id, media } => json!({
                "scene_id": scene_id,
                "media": media.iter().map(|m| json!({
                    "asset_id": m.asset_id, "cue_id": m.cue_id, "seek_offset": m.seek_offset
                })).collect::<Vec<_>>(),
            }),
        };
        let obj = v.as_object_mut().expect("object");
        obj.insert("type".into(), json!(self.body.type_name()));
        obj.insert("seq".into(), json!(self.seq));
        obj.insert("ts".into(), json!(self.ts));
        v
    }

    pub fn from_value(v: &Value) -> Result<Message, FrameError> {
        let obj = v.as_object().ok_or_else(|| FrameError::BadJson("top level is not an object".into()))?;
        let ty = obj.get("type").ok_or(FrameError::MissingField("type"))?;
        let ty = ty.as_str().ok_or_else(|| FrameError::BadJson("`type` is not a string".into()))?;
        let seq = u64_field(obj, "seq")?;
        let ts = i64_field(obj, "ts")?;
        let body = match ty {
            "hello" => Body::Hello { device_id: str_field(obj, "device_id")?, role: str_field(obj, "role")? },
            "heartbeat" => Body::Heartbeat,
            "pong" => Body::Pong { t0: i64_field(obj, "t0")?, t1: i64_field(obj, "t1")?, t2: i64_field(obj, "t2")? },
            "button" => Body::Button { button_id: str_field(obj, "button_id")? },
            "pose" => Body::Pose { x: f64_field(obj, "x")?, y: f64_field(obj, "y")?, z: f64_field(obj, "z")? },
            "media_ended" => Body::MediaEnded { asset_id: str_field(obj, "asset_id")?, cue_id: str_field(obj, "cue_id")? },
            "ack" => Body::Ack { ack_seq: u64_field(obj, "ack_seq")? },
            "ping" => Body::Ping { t0: i64_field(obj, "t0")? },
            "start_media" => Body::StartMedia {
                asset_id: str_field(obj, "asset_id")?,
                cue_id: str_field(obj, "cue_id")?,
                start_at: i64_field(obj, "start_at")?,
                seek_offset: i64_field(obj, "seek_offset")?,
            },
            "stop_media" => Body::StopMedia { asset_id: str_field(obj, "asset_id")?, cue_id: str_field(obj, "cue_id")? },
            "buzz" => Body::Buzz { pattern: str_field(obj, "pattern")? },
            "snapshot" => {
                let media = obj.get("media").ok_or(FrameError::MissingField("media"))?;
                let media = media.as_array().ok_or_else(|| FrameError::BadJson("`media` is not an array".into()))?;
                let media = media
                    .iter()
                    .map(|m| {
                        let m = m.as_object().ok_or_else(|| FrameError::BadJson("media entry is not an object".into()))?;
                        Ok(SnapshotEntry {
                            asset_id: str_field(m, "asset_id")?,
                            cue_id: str_field(m, "cue_id")?,
                            seek_offset: i64_field(m, "seek_offset")?,
                        })
                    })
                    .collect::<Result<Vec<_>, FrameError>>()?;
                Body::Snapshot { scene_id: str_field(obj, "scene_id")?, media }
            }
            other => return Err(FrameError::UnknownType(other.to_owned())),
        };
        Ok(Message { seq, ts, body })
    }
}

fn field<'a>(obj: &'a Map<String, Value>, name: &'static str) -> Result<&'a Value, FrameError> {
    obj.get(name).ok_or(FrameError::MissingField(name))
}

fn wrong(name: &str, want: &str) -> FrameError {
    FrameError::BadJson(format!("`{name}` is not {want}"))
}

fn str_field(obj: &Map<String, Value>, name: &'static str) -> Result<String, FrameError> {
    field(obj, name)?.as_str().map(str::to_owned).ok_or_else(|| wrong(name, "a string"))
}

fn u64_field(obj: &Map<String, Value>, name: &'static str) -> Result<u64, FrameError> {
    field(obj, name)?.as_u64().ok_or_else(|| wrong(name, "a non-negative integer"))
}

fn i64_field(obj: &Map<String, Value>, name: &'static str) -> Result<i64, FrameError> {
    field(obj, name)?.as_i64().ok_or_else(|| wrong(name, "an integer"))
}

fn f64_field(obj: &Map<String, Value>, name: &'static str) -> Result<f64, FrameError> {
    field(obj, name)?.as_f64().ok_or_else(|| wrong(name, "a number"))
}

/// Serialize a message to a complete frame (header plus payload).
pub fn encode(msg: &Message) -> Result<Vec<u8>, FrameError> {
    let payload = serde_json::to_vec(&msg.to_value()).expect("json values serialize");
    frame(&payload)
}

/// Prefix a payload with its length.
pub fn frame(payload: &[u8]) -> Result<Vec<u8>, FrameError> {
    if payload.len() > MAX_FRAME {
        return Err(FrameError::Oversize { len: payload.len() });
    }
    let mut out = Vec::with_capacity(HEADER + payload.len());
    out.extend_from_slice(&(payload.len() as u32).to_be_bytes());
    out.extend_from_slice(payload);
    Ok(out)
}

/// Parse a payload (without header) into a message.
pub fn decode_payload(payload: &[u8]) -> Result<Message, FrameError> {
    let v: Value = serde_json::from_slice(payload).map_err(|e| FrameError::BadJson(e.to_string()))?;
    Message::from_value(&v)
}

/// Split the first frame off `buf`. Returns the payload and the number of
/// bytes consumed.
pub fn split_frame(buf: &[u8]) -> Result<(&[u8], usize), FrameError> {
    if buf.len() < HEADER {
        return Err(FrameError::Incomplete { needed: HEADER - buf.len() });
    }
    let len = u32::from_be_bytes([buf[0], buf[1], buf[2], buf[3]]) as usize;
    if len > MAX_FRAME {
        return Err(FrameError::Oversize { len });
    }
    let total = HEADER + len;
    if buf.len() < total {
        return Err(FrameError::Incomplete { needed: total - buf.len() });
    }
    Ok((&buf[HEADER..total], total))
}

/// Decode the first frame in `buf`.
pub fn decode(buf: &[u8]) -> Result<(Message, usize), FrameError> {
    let (payload, used) = split_frame(buf)?;
    Ok((decode_payload(payload)?, used))
}

/// Incremental decoder for a byte stream. An oversize header poisons the
/// stream, since frame boundaries can no longer be trusted.
#[derive(Debug, Default)]
pub struct FrameDecoder {
    buf: Vec<u8>,
    poisoned: bool,
}

impl FrameDecoder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, bytes: &[u8]) {
        if !self.poisoned {
            self.buf.extend_from_slice(bytes);
        }
    }

    pub fn is_poisoned(&self) -> bool {
        self.poisoned
    }

    /// Next complete frame's decode result, or `None` if more bytes are needed.
    /// A malformed payload is reported and skipped; the stream continues.
    pub fn next_message(&mut self) -> Option<Result<Message, FrameError>> {
        if self.poisoned {
            return None;
        }
        match split_frame(&self.buf) {
            Err(FrameError::Incomplete { .. }) => None,
            Err(e) => {
                self.poisoned = true;
                self.buf.clear();
                Some(Err(e))
            }
            Ok((payload, used)) => {
                let result = decode_payload(payload);
                self.buf.drain(..used);
                Some(result)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let msgs = [
            Message::new(1, 10, Body::Hello { device_id: "h1".into(), role: "hmd".into() }),
            Message::new(2, 11, Body::Pose { x: 0.5, y: -1.25, z: 3.0 }),
            Message::new(
                3,
                12,
                Body::Snapshot {
                    scene_id: "s".into(),
                    media: vec![SnapshotEntry { asset_id: "a".into(), cue_id: "c".into(), seek_offset: 900 }],
                },
            ),
        ];
        for m in msgs {
            let bytes = encode(&m).unwrap();
            let (back, used) = decode(&bytes).unwrap();
            assert_eq!(back, m);
            assert_eq!(used, bytes.len());
        }
    }

    #[test]
    fn header_errors() {
        assert_eq!(decode(&[0, 0]).unwrap_err(), FrameError::Incomplete { needed: 2 });
        assert_eq!(decode(&[0, 1, 0, 1]).unwrap_err().code(), "E_OVERSIZE");
        assert_eq!(decode(&[0, 0, 0, 5, b'{']).unwrap_err(), FrameError::Incomplete { needed: 4 });
    }

    #[test]
    fn missing_fields_in_order() {
        let d = |s: &str| decode(&frame(s.as_bytes()).unwrap()).unwrap_err();
        assert_eq!(d(r#"{"seq":1,"ts":0}"#), FrameError::MissingField("type"));
        assert_eq!(d(r#"{"type":"heartbeat","ts":0}"#), FrameError::MissingField("seq"));
        assert_eq!(d(r#"{"type":"heartbeat","seq":1}"#), FrameError::MissingField("ts"));
        assert_eq!(d(r#"{"type":"button","seq":1,"ts":0}"#), FrameError::MissingField("button_id"));
        assert_eq!(d(r#"{"type":"dance","seq":1,"ts":0}"#).code(), "E_UNKNOWN_TYPE");
        assert_eq!(d("not json").code(), "E_BAD_JSON");
    }

    #[test]
    fn streaming_decoder_handles_split_and_bad_frames() {
        let mut bytes = encode(&Message::new(1, 0, Body::Heartbeat)).unwrap();
        bytes.extend(frame(b"{oops").unwrap());
        bytes.extend(encode(&Message::new(2, 0, Body::Button { button_id: "go".into() })).unwrap());
        let mut dec = FrameDecoder::new();
        let mut got = Vec::new();
        for chunk in bytes.chunks(3) {
            dec.push(chunk);
            while let Some(r) = dec.next_message() {
                got.push(r.map(|m| m.seq).map_err(|e| e.code()));
            }
        }
        assert_eq!(got, vec![Ok(1), Err("E_BAD_JSON"), Ok(2)]);
    }
}
