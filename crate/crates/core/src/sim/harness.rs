//! Discrete-event simulation of a whole show in virtual time.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use super::scenario::{check_scenario, MediaFidelity, Scenario, SimDevice};
use crate::diag::Diagnostics;
use crate::engine::{Engine, EngineConfig, EngineError, Event, OperatorCmd, Output};
use crate::gateway::{ConnId, Gateway, GatewayConfig, GatewayOutput};
use crate::ids::{AssetId, CueId, DeviceId, Millis};
use crate::protocol::{Body, Message};
use crate::runlog::{GatewayLine, Header, LogLine, PlaybackLine, LOG_VERSION};
use crate::script::{compile_timeline, validate_script, CompileError, CueGraph, Role, ShowScript};

const HEARTBEAT_MS: Millis = 1000;
/// Poses keep flowing this long after the last waypoint so debounces settle.
const POSE_TAIL_MS: Millis = 2000;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("script is invalid:\n{0}")]
    Script(Diagnostics),
    #[error("script does not compile: {0}")]
    Compile(#[from] CompileError),
    #[error("scenario is invalid:\n{0}")]
    Scenario(Diagnostics),
    #[error("engine: {0}")]
    Engine(#[from] EngineError),
}

/// A finished simulation: the full run log and whether the show ended.
#[derive(Clone, Debug)]
pub struct SimRun {
    pub log: Vec<LogLine>,
    pub finished: bool,
    pub end_at: Millis,
}

/// Validate, compile and simulate.
pub fn simulate(script: &ShowScript, sc: &Scenario) -> Result<SimRun, SimError> {
    let diags = validate_script(script);
    if !diags.is_empty() {
        return Err(SimError::Script(Diagnostics(diags)));
    }
    let diags = check_scenario(sc, script);
    if !diags.is_empty() {
        return Err(SimError::Scenario(Diagnostics(diags)));
    }
    let graph = Arc::new(compile_timeline(script)?);
    simulate_graph(graph, sc)
}

/// Simulate an already compiled graph. The scenario is assumed checked.
pub fn simulate_graph(graph: Arc<CueGraph>, sc: &Scenario) -> Result<SimRun, SimError> {
    let mut sim = Sim::new(graph, sc)?;
    sim.run()?;
    Ok(SimRun { finished: sim.engine.is_finished(), end_at: sim.now, log: sim.log })
}

#[derive(Debug)]
enum Action {
    ToServer { conn: ConnId, msg: Message },
    ToDevice { device: DeviceId, conn: ConnId, msg: Message, command: Option<u64> },
    Connect { device: DeviceId },
    Outage { device: DeviceId },
    Press { device: DeviceId, button: String },
    Heartbeat { device: DeviceId, gen: u64 },
    PoseTick { device: DeviceId, gen: u64 },
    /// `play: None` reports a clip already stopped by the server.
    MediaEnd { device: DeviceId, gen: u64, cue: CueId, asset: AssetId, play: Option<u64> },
    Operator { cmd: OperatorCmd },
}

struct Device {
    spec: SimDevice,
    role: Role,
    conn: Option<ConnId>,
    /// Bumped on every connect and outage; stale timers check it.
    gen: u64,
    seq: u64,
    plays: BTreeMap<(CueId, AssetId), u64>,
    /// Latest scheduled arrival per direction, keeping each link FIFO.
    up_last: Millis,
    down_last: Millis,
}

impl Device {
    fn local(&self, now: Millis) -> Millis {
        now + self.spec.clock_offset_ms
    }

    fn next_seq(&mut self) -> u64 {
        self.seq += 1;
        self.seq
    }
}

struct Sim<'a> {
    sc: &'a Scenario,
    graph: Arc<CueGraph>,
    engine: Engine,
    gateway: Gateway,
    devices: BTreeMap<DeviceId, Device>,
    queue: BTreeMap<(Millis, u64), Action>,
    order: u64,
    rng: ChaCha8Rng,
    now: Millis,
    next_conn: ConnId,
    /// (device, outbound message seq) -> engine command id.
    sent: BTreeMap<(DeviceId, u64), u64>,
    play_counter: u64,
    log: Vec<LogLine>,
}

impl<'a> Sim<'a> {
    fn new(graph: Arc<CueGraph>, sc: &'a Scenario) -> Result<Self, SimError> {
        let config = EngineConfig { lead_ms: sc.lead_ms, grace_ms: sc.grace_ms };
        let (engine, init) = Engine::init(Arc::clone(&graph), config, 0)?;
        let gateway = Gateway::new(&graph.roster, graph.colliders.clone(), GatewayConfig::default());
        let mut sim = Sim {
            sc,
            engine,
            gateway,
            devices: BTreeMap::new(),
            queue: BTreeMap::new(),
            order: 0,
            rng: ChaCha8Rng::seed_from_u64(sc.seed),
            now: 0,
            next_conn: 1,
            sent: BTreeMap::new(),
            play_counter: 0,
            log: Vec::new(),
            graph,
        };
        sim.log.push(LogLine::Header(Header {
            version: LOG_VERSION,
            title: sim.graph.title.clone(),
            start_at: 0,
            lead_ms: sc.lead_ms,
            grace_ms: sc.grace_ms,
            seed: Some(sc.seed),
        }));
        sim.apply_engine(init);
        let roster = sim.graph.roster.clone();
        for decl in &roster {
            let spec = sc.device(decl.id.as_str()).cloned().unwrap_or_else(|| SimDevice::new(decl.id.clone()));
            sim.schedule(spec.connect_at, Action::Connect { device: decl.id.clone() });
            for o in &spec.outages {
                sim.schedule(o.at, Action::Outage { device: decl.id.clone() });
                if let Some(r) = o.reconnect {
                    sim.schedule(r, Action::Connect { device: decl.id.clone() });
                }
            }
            for p in &spec.presses {
                sim.schedule(p.at, Action::Press { device: decl.id.clone(), button: p.button.clone() });
            }
            sim.devices.insert(
                decl.id.clone(),
                Device {
                    spec,
                    role: decl.role,
                    conn: None,
                    gen: 0,
                    seq: 0,
                    plays: BTreeMap::new(),
                    up_last: 0,
                    down_last: 0,
                },
            );
        }
        for a in &sc.operator {
            sim.schedule(a.at, Action::Operator { cmd: a.cmd.clone() });
        }
        Ok(sim)
    }

    fn schedule(&mut self, at: Millis, action: Action) {
        self.order += 1;
        self.queue.insert((at, self.order), action);
    }

    fn link_delay(&mut self) -> Millis {
        let j = self.sc.network.jitter_ms;
        self.sc.network.delay_ms + if j > 0 { self.rng.random_range(0..=j) } else { 0 }
    }

    fn run(&mut self) -> Result<(), SimError> {
        while !self.engine.is_finished() {
            let e = self.engine.next_deadline();
            let g = self.gateway.next_deadline();
            let q = self.queue.keys().next().map(|k| k.0);
            let Some(next) = [e, g, q].into_iter().flatten().min() else { break };
            if next > self.sc.horizon_ms {
                break;
            }
            self.now = self.now.max(next);
            if e == Some(next) {
                let out = self.engine.tick(self.now);
                self.log.push(LogLine::Tick { at: self.now });
                self.apply_engine(out);
            } else if g == Some(next) {
                let out = self.gateway.poll(self.now);
                self.apply_gateway(out)?;
            } else {
                let (_, action) = self.queue.pop_first().expect("queue has the next action");
                self.step(action)?;
            }
        }
        Ok(())
    }

    fn apply_engine(&mut self, out: Output) {
        for r in out.records {
            self.log.push(LogLine::Record(r));
        }
        for c in out.commands {
            self.log.push(LogLine::Command(c.clone()));
            let g = self.gateway.dispatch(&c, self.now);
            for o in &g.outbound {
                self.sent.insert((o.device.clone(), o.msg.seq), c.id);
            }
            // dispatch yields no events, so this cannot recurse
            self.apply_gateway(g).expect("dispatch produces no events");
        }
    }

    fn apply_gateway(&mut self, out: GatewayOutput) -> Result<(), SimError> {
        for note in out.notes {
            self.log.push(LogLine::Gateway(GatewayLine { at: self.now, note }));
        }
        for o in out.outbound {
            let command = self.sent.get(&(o.device.clone(), o.msg.seq)).copied();
            let delay = self.link_delay();
            let dev = self.devices.get_mut(&o.device).expect("roster device");
            let at = (self.now + delay).max(dev.down_last);
            dev.down_last = at;
            self.schedule(at, Action::ToDevice { device: o.device, conn: o.conn, msg: o.msg, command });
        }
        for ev in out.events {
            self.feed(ev)?;
        }
        Ok(())
    }

    fn feed(&mut self, ev: Event) -> Result<(), SimError> {
        let pre = self.engine.tick(ev.at);
        self.apply_engine(pre);
        self.log.push(LogLine::Event(ev.clone()));
        let out = self.engine.handle_event(&ev)?;
        self.apply_engine(out);
        Ok(())
    }

    fn send_up(&mut self, device: &DeviceId, body: Body) {
        let delay = self.link_delay();
        let now = self.now;
        let dev = self.devices.get_mut(device).expect("roster device");
        let Some(conn) = dev.conn else { return };
        let msg = Message::new(dev.next_seq(), dev.local(now), body);
        let at = (now + delay).max(dev.up_last);
        dev.up_last = at;
        self.schedule(at, Action::ToServer { conn, msg });
    }

    fn step(&mut self, action: Action) -> Result<(), SimError> {
        match action {
            Action::ToServer { conn, msg } => {
                let out = self.gateway.inbound(conn, msg, self.now);
                self.apply_gateway(out)?;
            }
            Action::ToDevice { device, conn, msg, command } => self.deliver(&device, conn, msg, command),
            Action::Connect { device } => {
                let conn = self.next_conn;
                self.next_conn += 1;
                let dev = self.devices.get_mut(&device).expect("roster device");
                if dev.conn.is_some() {
                    return Ok(());
                }
                dev.conn = Some(conn);
                dev.gen += 1;
                let gen = dev.gen;
                let role = dev.role.as_str().to_owned();
                let has_path = !dev.spec.waypoints.is_empty();
                self.send_up(&device, Body::Hello { device_id: device.to_string(), role });
                self.schedule(self.now + HEARTBEAT_MS, Action::Heartbeat { device: device.clone(), gen });
                if has_path {
                    self.schedule(self.now, Action::PoseTick { device, gen });
                }
            }
            Action::Outage { device } => {
                let dev = self.devices.get_mut(&device).expect("roster device");
                dev.conn = None;
                dev.gen += 1;
                dev.plays.clear();
            }
            Action::Press { device, button } => self.send_up(&device, Body::Button { button_id: button }),
            Action::Heartbeat { device, gen } => {
                if self.devices[&device].gen == gen && self.devices[&device].conn.is_some() {
                    self.send_up(&device, Body::Heartbeat);
                    self.schedule(self.now + HEARTBEAT_MS, Action::Heartbeat { device, gen });
                }
            }
            Action::PoseTick { device, gen } => {
                let dev = &self.devices[&device];
                if dev.gen == gen && dev.conn.is_some() {
                    let last = dev.spec.waypoints.last().map_or(0, |w| w.at);
                    let period = dev.spec.pose_period_ms;
                    if let Some([x, y, z]) = dev.spec.position_at(self.now) {
                        self.send_up(&device, Body::Pose { x, y, z });
                    }
                    if self.now + period <= last + POSE_TAIL_MS {
                        self.schedule(self.now + period, Action::PoseTick { device, gen });
                    }
                }
            }
            Action::MediaEnd { device, gen, cue, asset, play } => {
                let dev = self.devices.get_mut(&device).expect("roster device");
                let key = (cue.clone(), asset.clone());
                let current = match play {
                    Some(p) => dev.plays.get(&key) == Some(&p),
                    None => true,
                };
                if dev.gen == gen && current {
                    if play.is_some() {
                        dev.plays.remove(&key);
                    }
                    let body = Body::MediaEnded { asset_id: asset.to_string(), cue_id: cue.to_string() };
                    self.send_up(&device, body);
                }
            }
            Action::Operator { cmd } => {
                let ev = self.gateway.submit_operator(cmd, self.now);
                self.feed(ev)?;
            }
        }
        Ok(())
    }

    fn deliver(&mut self, device: &DeviceId, conn: ConnId, msg: Message, command: Option<u64>) {
        if self.devices[device].conn != Some(conn) {
            return;
        }
        let now = self.now;
        match msg.body {
            Body::Ping { t0 } => {
                let local = self.devices[device].local(now);
                self.send_up(device, Body::Pong { t0, t1: local, t2: local });
            }
            Body::StartMedia { asset_id, cue_id, start_at, seek_offset } => {
                let offset = self.devices[device].spec.clock_offset_ms;
                // Late arrivals start immediately, seeking forward to stay aligned.
                let origin = start_at - offset - seek_offset;
                self.play(device, cue_id.into(), asset_id.into(), origin, command, false);
            }
            Body::Snapshot { media, .. } => {
                self.devices.get_mut(device).expect("roster device").plays.clear();
                for m in media {
                    self.play(device, m.cue_id.into(), m.asset_id.into(), now - m.seek_offset, command, true);
                }
            }
            Body::StopMedia { asset_id, .. } => {
                // Stops every play of the asset and reports each as ended.
                let asset = AssetId::from(asset_id);
                let dev = self.devices.get_mut(device).expect("roster device");
                let stopped: Vec<CueId> =
                    dev.plays.keys().filter(|(_, a)| *a == asset).map(|(c, _)| c.clone()).collect();
                for cue in &stopped {
                    dev.plays.remove(&(cue.clone(), asset.clone()));
                }
                for cue in stopped {
                    self.report_end(device, cue, asset.clone(), None, now);
                }
            }
            _ => {}
        }
    }

    fn play(&mut self, device: &DeviceId, cue: CueId, asset: AssetId, origin: Millis, command: Option<u64>, from_snapshot: bool) {
        let Some(duration) = self.graph.assets.get(&asset).map(|a| a.duration_ms) else { return };
        self.play_counter += 1;
        let play = self.play_counter;
        let now = self.now;
        self.log.push(LogLine::Playback(PlaybackLine {
            at: now,
            device: device.clone(),
            cue: cue.clone(),
            asset: asset.clone(),
            command,
            origin,
            from_snapshot,
        }));
        let dev = self.devices.get_mut(device).expect("roster device");
        dev.plays.insert((cue.clone(), asset.clone()), play);
        let ends = (origin + duration).max(now);
        self.report_end(device, cue, asset, Some(play), ends);
    }

    /// Schedule the end report for a play, subject to the device's fidelity.
    fn report_end(&mut self, device: &DeviceId, cue: CueId, asset: AssetId, play: Option<u64>, ends: Millis) {
        let dev = &self.devices[device];
        if dev.role != Role::Hmd {
            return;
        }
        let gen = dev.gen;
        let report_at = match dev.spec.media {
            MediaFidelity::Honest => Some(ends),
            MediaFidelity::Delay { ms } => Some(ends + ms),
            MediaFidelity::Drop { p } => (!self.rng.random_bool(p.clamp(0.0, 1.0))).then_some(ends),
        };
        if let Some(at) = report_at {
            self.schedule(at, Action::MediaEnd { device: device.clone(), gen, cue, asset, play });
        }
    }
}
