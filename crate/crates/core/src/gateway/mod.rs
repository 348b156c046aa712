//! The network boundary, without any I/O.
//!
//! A transport hands the gateway decoded frames tagged with a connection
//! id and the current server time; the gateway answers with engine events
//! (carrying a global, strictly increasing seq), outbound messages and
//! bookkeeping notes. It owns device sessions, liveness, clock estimation
//! and collider tracking.

pub mod clock;

use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::engine::{Command, CommandKind, Event, EventKind, OperatorCmd};
use crate::ids::{DeviceId, Millis};
use crate::protocol::{self, Body, Message, SnapshotEntry};
use crate::script::{ColliderDecl, DeviceDecl, Role};
use crate::spatial::{Pose, Tracker};

pub use clock::{estimate, ClockError, ClockEstimate, ClockSample};

pub type ConnId = u64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct GatewayConfig {
    pub heartbeat_ms: Millis,
    /// A session is stale after this many missed heartbeat periods.
    pub stale_factor: i64,
    pub burst_pings: u32,
    pub burst_spacing_ms: Millis,
    pub ping_interval_ms: Millis,
    pub sample_window: usize,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        Self {
            heartbeat_ms: 1000,
            stale_factor: 3,
            burst_pings: 8,
            burst_spacing_ms: 50,
            ping_interval_ms: 10_000,
            sample_window: 8,
        }
    }
}

impl GatewayConfig {
    pub fn stale_after(&self) -> Millis {
        self.heartbeat_ms * self.stale_factor
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionRole {
    Hmd,
    Wearable,
    Operator,
}

impl SessionRole {
    fn parse(s: &str) -> Option<Self> {
        match s {
            "hmd" => Some(SessionRole::Hmd),
            "wearable" => Some(SessionRole::Wearable),
            "operator" => Some(SessionRole::Operator),
            _ => None,
        }
    }

    fn device_role(self) -> Option<Role> {
        match self {
            SessionRole::Hmd => Some(Role::Hmd),
            SessionRole::Wearable => Some(Role::Wearable),
            SessionRole::Operator => None,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Session {
    pub device: DeviceId,
    pub role: SessionRole,
    pub conn: Option<ConnId>,
    pub last_heard: Millis,
    pub degraded: bool,
    pub samples: VecDeque<ClockSample>,
    pub estimate: Option<ClockEstimate>,
    pub pings_sent: u32,
    pub next_ping_at: Millis,
    pub out_seq: u64,
    pub last_ack: Option<u64>,
}

impl Session {
    pub fn connected(&self) -> bool {
        self.conn.is_some()
    }
}

/// A message to put on a connection.
#[derive(Clone, Debug, PartialEq)]
pub struct Outbound {
    pub conn: ConnId,
    pub device: DeviceId,
    pub msg: Message,
}

/// Gateway bookkeeping for the run log and operator views.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "note", rename_all = "snake_case")]
pub enum Note {
    Registered { device: DeviceId, conn: ConnId, reconnect: bool },
    Rejected { conn: ConnId, code: String, detail: String },
    Ignored { conn: ConnId, device: Option<DeviceId>, code: String, detail: String },
    Degraded { device: DeviceId },
    Disconnected { device: DeviceId },
    Dispatched { command: u64, device: DeviceId, device_start_at: Option<Millis>, confidence: Option<Millis> },
    Undeliverable { command: u64, device: DeviceId, reason: String },
    /// No target of the command was reachable (`E_NO_TARGETS`).
    NoTargets { command: u64 },
}

/// What became of one inbound payload. Every payload gets exactly one.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Disposition {
    /// Produced at least one engine event.
    Event,
    /// Refused or ignored, with a note saying why.
    Ignored,
    /// Did not decode.
    FrameError,
    /// Consumed by session bookkeeping (heartbeat, pong, ack, a pose that
    /// crossed nothing, an operator hello).
    Absorbed,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct GatewayOutput {
    pub events: Vec<Event>,
    pub outbound: Vec<Outbound>,
    pub notes: Vec<Note>,
    /// Set by [`Gateway::inbound`] and [`Gateway::inbound_payload`] only.
    pub disposition: Option<Disposition>,
}

impl GatewayOutput {
    pub fn extend(&mut self, other: GatewayOutput) {
        self.events.extend(other.events);
        self.outbound.extend(other.outbound);
        self.notes.extend(other.notes);
        self.disposition = self.disposition.or(other.disposition);
    }
}

#[derive(Clone, Debug)]
pub struct Gateway {
    config: GatewayConfig,
    roster: BTreeMap<DeviceId, Role>,
    colliders: Vec<ColliderDecl>,
    tracker: Tracker,
    sessions: BTreeMap<DeviceId, Session>,
    conns: BTreeMap<ConnId, DeviceId>,
    next_seq: u64,
}

impl Gateway {
    pub fn new(roster: &[DeviceDecl], colliders: Vec<ColliderDecl>, config: GatewayConfig) -> Self {
        Self {
            config,
            roster: roster.iter().map(|d| (d.id.clone(), d.role)).collect(),
            colliders,
            tracker: Tracker::new(),
            sessions: BTreeMap::new(),
            conns: BTreeMap::new(),
            next_seq: 1,
        }
    }

    pub fn config(&self) -> &GatewayConfig {
        &self.config
    }

    pub fn sessions(&self) -> impl Iterator<Item = &Session> {
        self.sessions.values()
    }

    pub fn session(&self, device: &str) -> Option<&Session> {
        self.sessions.get(device)
    }

    pub fn device_of(&self, conn: ConnId) -> Option<&DeviceId> {
        self.conns.get(&conn)
    }

    /// The seq the next event will carry.
    pub fn peek_seq(&self) -> u64 {
        self.next_seq
    }

    fn event(&mut self, at: Millis, kind: EventKind) -> Event {
        let seq = self.next_seq;
        self.next_seq += 1;
        Event { seq, at, kind }
    }

    /// Wrap an operator command as an event in the global order.
    pub fn submit_operator(&mut self, cmd: OperatorCmd, now: Millis) -> Event {
        self.event(now, EventKind::OperatorCmd(cmd))
    }

    /// Decode and route a raw payload (frame header already stripped).
    pub fn inbound_payload(&mut self, conn: ConnId, payload: &[u8], now: Millis) -> GatewayOutput {
        match protocol::decode_payload(payload) {
            Ok(msg) => self.inbound(conn, msg, now),
            Err(e) => GatewayOutput {
                notes: vec![Note::Ignored {
                    conn,
                    device: self.conns.get(&conn).cloned(),
                    code: e.code().to_owned(),
                    detail: e.to_string(),
                }],
                disposition: Some(Disposition::FrameError),
                ..Default::default()
            },
        }
    }

    /// Route one decoded message.
    pub fn inbound(&mut self, conn: ConnId, msg: Message, now: Millis) -> GatewayOutput {
        let mut out = self.route(conn, msg, now);
        let ignored = out.notes.iter().any(|n| matches!(n, Note::Ignored { .. } | Note::Rejected { .. }));
        out.disposition = Some(if !out.events.is_empty() {
            Disposition::Event
        } else if ignored {
            Disposition::Ignored
        } else {
            Disposition::Absorbed
        });
        out
    }

    fn route(&mut self, conn: ConnId, msg: Message, now: Millis) -> GatewayOutput {
        let mut out = GatewayOutput::default();
        if let Body::Hello { device_id, role } = &msg.body {
            self.hello(conn, device_id, role, now, &mut out);
            return out;
        }
        let Some(device) = self.conns.get(&conn).cloned() else {
            out.notes.push(Note::Ignored {
                conn,
                device: None,
                code: "E_NOT_REGISTERED".into(),
                detail: format!("`{}` before hello", msg.body.type_name()),
            });
            return out;
        };
        let session = self.sessions.get_mut(&device).expect("registered conn has a session");
        session.last_heard = now;
        let recovered = std::mem::replace(&mut session.degraded, false);
        let role = session.role;
        if recovered && role != SessionRole::Operator {
            let ev = self.event(now, EventKind::DeviceJoined { device: device.clone() });
            out.events.push(ev);
        }
        match msg.body {
            Body::Heartbeat => {}
            Body::Ack { ack_seq } => {
                let s = self.sessions.get_mut(&device).expect("session");
                s.last_ack = Some(s.last_ack.map_or(ack_seq, |a| a.max(ack_seq)));
            }
            Body::Pong { t0, t1, t2 } => {
                let window = self.config.sample_window;
                let s = self.sessions.get_mut(&device).expect("session");
                s.samples.push_back(ClockSample { t0, t1, t2, t3: now });
                while s.samples.len() > window {
                    s.samples.pop_front();
                }
                s.estimate = estimate(s.samples.make_contiguous()).ok();
            }
            Body::Button { button_id } => {
                let ev = self.event(now, EventKind::ButtonPress { device, button: button_id });
                out.events.push(ev);
            }
            Body::MediaEnded { asset_id, cue_id } => {
                let kind = EventKind::MediaEnded { device, asset: asset_id.into(), cue: cue_id.into() };
                let ev = self.event(now, kind);
                out.events.push(ev);
            }
            Body::Pose { x, y, z } => match role.device_role() {
                Some(r) => {
                    let pose = Pose { device: device.clone(), position: [x, y, z], at: now };
                    for t in self.tracker.update_pose(&pose, r, &self.colliders, now) {
                        let kind =
                            EventKind::ColliderTransition { collider: t.collider, device: t.device, crossing: t.crossing };
                        let ev = self.event(now, kind);
                        out.events.push(ev);
                    }
                }
                None => out.notes.push(Note::Ignored {
                    conn,
                    device: Some(device),
                    code: "E_ROLE_MISMATCH".into(),
                    detail: "operators do not report poses".into(),
                }),
            },
            other => out.notes.push(Note::Ignored {
                conn,
                device: Some(device),
                code: "E_UNEXPECTED_TYPE".into(),
                detail: format!("devices do not send `{}`", other.type_name()),
            }),
        }
        out
    }

    fn hello(&mut self, conn: ConnId, device_id: &str, role: &str, now: Millis, out: &mut GatewayOutput) {
        let reject = |code: &str, detail: String| Note::Rejected { conn, code: code.into(), detail };
        let Some(role) = SessionRole::parse(role) else {
            out.notes.push(reject("E_UNKNOWN_ROLE", format!("unknown role `{role}`")));
            return;
        };
        let device = DeviceId::new(device_id);
        if let Some(want) = role.device_role() {
            match self.roster.get(&device) {
                None => {
                    out.notes.push(reject("E_ROSTER_MISMATCH", format!("`{device}` is not in the roster")));
                    return;
                }
                Some(r) if *r != want => {
                    out.notes.push(reject("E_ROSTER_MISMATCH", format!("`{device}` is declared as a {r}")));
                    return;
                }
                Some(_) => {}
            }
        }
        if let Some(prev) = self.conns.insert(conn, device.clone()) {
            if prev != device {
                self.detach(&prev);
            }
        }
        let reconnect = self.sessions.contains_key(&device);
        let session = self.sessions.entry(device.clone()).or_insert_with(|| Session {
            device: device.clone(),
            role,
            conn: None,
            last_heard: now,
            degraded: false,
            samples: VecDeque::new(),
            estimate: None,
            pings_sent: 0,
            next_ping_at: now,
            out_seq: 0,
            last_ack: None,
        });
        if let Some(old) = session.conn.replace(conn) {
            if old != conn {
                self.conns.remove(&old);
            }
        }
        session.role = role;
        session.last_heard = now;
        session.degraded = false;
        // A fresh burst on every (re)connect; earlier samples stay in the window.
        session.pings_sent = 0;
        session.next_ping_at = now;
        out.notes.push(Note::Registered { device: device.clone(), conn, reconnect });
        if role != SessionRole::Operator {
            let ev = self.event(now, EventKind::DeviceJoined { device });
            out.events.push(ev);
        }
    }

    fn detach(&mut self, device: &DeviceId) {
        if let Some(s) = self.sessions.get_mut(device) {
            s.conn = None;
        }
    }

    /// The transport lost a connection.
    pub fn disconnect(&mut self, conn: ConnId, now: Millis) -> GatewayOutput {
        let mut out = GatewayOutput::default();
        let Some(device) = self.conns.remove(&conn) else { return out };
        let Some(s) = self.sessions.get_mut(&device) else { return out };
        if s.conn != Some(conn) {
            return out;
        }
        s.conn = None;
        let was_live = !s.degraded;
        s.degraded = false;
        let role = s.role;
        self.tracker.forget(&device);
        out.notes.push(Note::Disconnected { device: device.clone() });
        if role != SessionRole::Operator && was_live {
            let ev = self.event(now, EventKind::DeviceLeft { device });
            out.events.push(ev);
        }
        out
    }

    /// Mark sessions that have been silent too long as degraded.
    pub fn liveness_sweep(&mut self, now: Millis) -> GatewayOutput {
        let mut out = GatewayOutput::default();
        let limit = self.config.stale_after();
        let stale: Vec<DeviceId> = self
            .sessions
            .values()
            .filter(|s| s.connected() && !s.degraded && now - s.last_heard > limit)
            .map(|s| s.device.clone())
            .collect();
        for device in stale {
            let s = self.sessions.get_mut(&device).expect("session");
            s.degraded = true;
            let role = s.role;
            out.notes.push(Note::Degraded { device: device.clone() });
            if role != SessionRole::Operator {
                let ev = self.event(now, EventKind::DeviceLeft { device });
                out.events.push(ev);
            }
        }
        out
    }

    /// Send due pings and run the liveness sweep.
    pub fn poll(&mut self, now: Millis) -> GatewayOutput {
        let mut out = GatewayOutput::default();
        let cfg = self.config;
        for s in self.sessions.values_mut() {
            let Some(conn) = s.conn else { continue };
            if s.role == SessionRole::Operator || now < s.next_ping_at {
                continue;
            }
            s.pings_sent += 1;
            s.next_ping_at =
                now + if s.pings_sent < cfg.burst_pings { cfg.burst_spacing_ms } else { cfg.ping_interval_ms };
            s.out_seq += 1;
            out.outbound.push(Outbound {
                conn,
                device: s.device.clone(),
                msg: Message::new(s.out_seq, now, Body::Ping { t0: now }),
            });
        }
        out.extend(self.liveness_sweep(now));
        out
    }

    /// Earliest time `poll` has work to do.
    pub fn next_deadline(&self) -> Option<Millis> {
        let limit = self.config.stale_after();
        self.sessions
            .values()
            .filter(|s| s.connected())
            .flat_map(|s| {
                let ping = (s.role != SessionRole::Operator).then_some(s.next_ping_at);
                let stale = (!s.degraded).then_some(s.last_heard + limit + 1);
                ping.into_iter().chain(stale)
            })
            .min()
    }

    /// Translate an engine command into per-device messages. Start times are
    /// shifted into each device's clock using its current offset estimate.
    pub fn dispatch(&mut self, cmd: &Command, now: Millis) -> GatewayOutput {
        let mut out = GatewayOutput::default();
        let cue_id = cmd.cue.as_ref().map(|c| c.to_string()).unwrap_or_default();
        for device in cmd.kind.targets() {
            let Some(s) = self.sessions.get_mut(&device).filter(|s| s.connected()) else {
                out.notes.push(Note::Undeliverable {
                    command: cmd.id,
                    device,
                    reason: "not connected".into(),
                });
                continue;
            };
            let conn = s.conn.expect("connected");
            let confidence = s.estimate.map(|e| e.confidence);
            let offset = s.estimate.map_or(0, |e| e.offset);
            let mut device_start_at = None;
            let body = match &cmd.kind {
                CommandKind::StartMedia { asset, start_at, seek_offset, .. } => {
                    device_start_at = Some(start_at + offset);
                    Body::StartMedia {
                        asset_id: asset.to_string(),
                        cue_id: cue_id.clone(),
                        start_at: start_at + offset,
                        seek_offset: *seek_offset,
                    }
                }
                CommandKind::StopMedia { asset, .. } => {
                    Body::StopMedia { asset_id: asset.to_string(), cue_id: cue_id.clone() }
                }
                CommandKind::Buzz { pattern, .. } => Body::Buzz { pattern: pattern.as_str().to_owned() },
                CommandKind::Snapshot { payload, .. } => Body::Snapshot {
                    scene_id: payload.scene.to_string(),
                    media: payload
                        .media
                        .iter()
                        .map(|m| SnapshotEntry {
                            asset_id: m.asset.to_string(),
                            cue_id: m.cue.to_string(),
                            seek_offset: m.seek_offset,
                        })
                        .collect(),
                },
            };
            s.out_seq += 1;
            out.outbound.push(Outbound { conn, device: device.clone(), msg: Message::new(s.out_seq, now, body) });
            out.notes.push(Note::Dispatched { command: cmd.id, device, device_start_at, confidence });
        }
        if out.outbound.is_empty() {
            out.notes.push(Note::NoTargets { command: cmd.id });
        }
        out
    }
}

#[cfg(test)]
mod tests;
