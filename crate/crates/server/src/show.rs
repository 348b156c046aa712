//! The live show: engine plus gateway behind one serialization point.
//!
//! Transports hand in payloads, disconnects and operator commands with the
//! current server time; the show updates both state machines, appends to
//! the run log and queues outbound messages. Nothing here does I/O.

use std::sync::Arc;

use serde::Serialize;
use stagelink_core::engine::{Engine, EngineError, EngineSummary, Event, OperatorCmd, Output, RecordKind};
use stagelink_core::gateway::{ConnId, Gateway, GatewayConfig, GatewayOutput, Note, Outbound, SessionRole};
use stagelink_core::ids::{DeviceId, Millis};
use stagelink_core::runlog::{GatewayLine, Header, LogLine, LOG_VERSION};
use stagelink_core::script::CueGraph;

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct DeviceView {
    pub id: DeviceId,
    pub role: &'static str,
    pub connected: bool,
    pub degraded: bool,
    pub last_heard: Option<Millis>,
    pub clock_offset_ms: Option<Millis>,
    pub rtt_ms: Option<Millis>,
    pub confidence_ms: Option<Millis>,
}

/// Result of an operator command.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct CmdOutcome {
    /// Seq of the event the command became.
    pub seq: u64,
    pub accepted: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reason: Option<serde_json::Value>,
}

pub struct Show {
    engine: Engine,
    gateway: Gateway,
    outbound: Vec<Outbound>,
    lines: Vec<LogLine>,
}

impl Show {
    pub fn new(graph: Arc<CueGraph>, cfg: &crate::Config, start_at: Millis) -> Result<Self, EngineError> {
        Self::with_gateway(graph, cfg.engine(), cfg.gateway(), start_at)
    }

    pub fn with_gateway(
        graph: Arc<CueGraph>,
        engine_cfg: stagelink_core::engine::EngineConfig,
        gateway_cfg: GatewayConfig,
        start_at: Millis,
    ) -> Result<Self, EngineError> {
        let (engine, init) = Engine::init(Arc::clone(&graph), engine_cfg, start_at)?;
        let gateway = Gateway::new(&graph.roster, graph.colliders.clone(), gateway_cfg);
        let mut show = Show { engine, gateway, outbound: Vec::new(), lines: Vec::new() };
        show.lines.push(LogLine::Header(Header {
            version: LOG_VERSION,
            title: graph.title.clone(),
            start_at,
            lead_ms: engine_cfg.lead_ms,
            grace_ms: engine_cfg.grace_ms,
            seed: None,
        }));
        show.apply_engine(init, start_at);
        Ok(show)
    }

    /// A payload with its frame header already stripped.
    pub fn payload(&mut self, conn: ConnId, payload: &[u8], now: Millis) {
        let out = self.gateway.inbound_payload(conn, payload, now);
        self.apply_gateway(out, now);
    }

    /// The transport refused a frame before decoding it and closed the
    /// connection.
    pub fn refused(&mut self, conn: ConnId, code: &str, detail: String, now: Millis) {
        self.note(Note::Rejected { conn, code: code.to_owned(), detail }, now);
        self.closed(conn, now);
    }

    pub fn closed(&mut self, conn: ConnId, now: Millis) {
        let out = self.gateway.disconnect(conn, now);
        self.apply_gateway(out, now);
    }

    pub fn operator(&mut self, cmd: OperatorCmd, now: Millis) -> CmdOutcome {
        let ev = self.gateway.submit_operator(cmd, now);
        let seq = ev.seq;
        let mark = self.lines.len();
        self.feed(ev, now);
        let reason = self.lines[mark..].iter().find_map(|l| match l {
            LogLine::Record(r) => match &r.kind {
                RecordKind::Ignored { event, reason } if *event == seq => serde_json::to_value(reason).ok(),
                _ => None,
            },
            _ => None,
        });
        CmdOutcome { seq, accepted: reason.is_none(), reason }
    }

    /// Run due timers, pings and the liveness sweep.
    pub fn tick(&mut self, now: Millis) {
        if self.engine.next_deadline().is_some_and(|d| d <= now) {
            let out = self.engine.tick(now);
            self.lines.push(LogLine::Tick { at: now });
            self.apply_engine(out, now);
        }
        if self.gateway.next_deadline().is_some_and(|d| d <= now) {
            let out = self.gateway.poll(now);
            self.apply_gateway(out, now);
        }
    }

    /// Take queued outbound messages and new log lines.
    pub fn drain(&mut self) -> (Vec<Outbound>, Vec<LogLine>) {
        (std::mem::take(&mut self.outbound), std::mem::take(&mut self.lines))
    }

    pub fn summary(&self) -> EngineSummary {
        self.engine.summary()
    }

    pub fn is_finished(&self) -> bool {
        self.engine.is_finished()
    }

    pub fn devices(&self) -> Vec<DeviceView> {
        let mut out: Vec<DeviceView> = self
            .engine
            .graph()
            .roster
            .iter()
            .map(|d| {
                let s = self.gateway.session(d.id.as_str());
                let est = s.and_then(|s| s.estimate);
                DeviceView {
                    id: d.id.clone(),
                    role: d.role.as_str(),
                    connected: s.is_some_and(|s| s.connected()),
                    degraded: s.is_some_and(|s| s.degraded),
                    last_heard: s.map(|s| s.last_heard),
                    clock_offset_ms: est.map(|e| e.offset),
                    rtt_ms: est.map(|e| e.rtt),
                    confidence_ms: est.map(|e| e.confidence),
                }
            })
            .collect();
        out.extend(self.gateway.sessions().filter(|s| s.role == SessionRole::Operator).map(|s| DeviceView {
            id: s.device.clone(),
            role: "operator",
            connected: s.connected(),
            degraded: s.degraded,
            last_heard: Some(s.last_heard),
            clock_offset_ms: None,
            rtt_ms: None,
            confidence_ms: None,
        }));
        out
    }

    fn note(&mut self, note: Note, now: Millis) {
        self.lines.push(LogLine::Gateway(GatewayLine { at: now, note }));
    }

    fn feed(&mut self, ev: Event, now: Millis) {
        let pre = self.engine.tick(ev.at);
        self.apply_engine(pre, now);
        self.lines.push(LogLine::Event(ev.clone()));
        // seqs come from our own gateway, so they always increase
        let out = self.engine.handle_event(&ev).expect("gateway seqs increase");
        self.apply_engine(out, now);
    }

    fn apply_engine(&mut self, out: Output, now: Millis) {
        for r in out.records {
            self.lines.push(LogLine::Record(r));
        }
        for c in out.commands {
            self.lines.push(LogLine::Command(c.clone()));
            let g = self.gateway.dispatch(&c, now);
            self.apply_gateway(g, now);
        }
    }

    fn apply_gateway(&mut self, out: GatewayOutput, now: Millis) {
        for note in out.notes {
            self.note(note, now);
        }
        self.outbound.extend(out.outbound);
        for ev in out.events {
            self.feed(ev, now);
        }
    }
}
