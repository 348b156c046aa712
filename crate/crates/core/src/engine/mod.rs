//! The deterministic cue engine.
//!
//! The engine is a pure state machine: the same graph, config and
//! input sequence (events interleaved with `tick` calls) always yield the
//! same command stream. It never reads a clock; time arrives with events
//! and ticks.

mod replay;
mod types;

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::sync::Arc;

use serde::Serialize;
use thiserror::Error;

use crate::ids::{AssetId, CueId, DeviceId, Millis, SceneId};
use crate::script::{CueGraph, CueRef, Phase, ResolvedAction, Role, Trigger};
use crate::spatial::Crossing;

pub use replay::{replay, ReplayInput};
pub use types::*;

/// Scheduling lead added to every media start.
pub const DEFAULT_LEAD_MS: Millis = 150;
/// Extra time a blocking cue waits past its media's expected end.
pub const DEFAULT_GRACE_MS: Millis = 2000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, serde::Deserialize)]
pub struct EngineConfig {
    pub lead_ms: Millis,
    pub grace_ms: Millis,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self { lead_ms: DEFAULT_LEAD_MS, grace_ms: DEFAULT_GRACE_MS }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum EngineError {
    #[error("the cue graph has no cues")]
    EmptyGraph,
    #[error("event seq {seq} is not after the last handled seq {last}")]
    StaleSeq { seq: u64, last: u64 },
    #[error("unknown cue `{0}`")]
    UnknownCue(CueId),
    #[error("unknown scene `{0}`")]
    UnknownScene(SceneId),
    #[error("unknown device `{0}`")]
    UnknownDevice(DeviceId),
    #[error("cue `{0}` already completed")]
    AlreadyCompleted(CueId),
    #[error("cue `{0}` was already skipped")]
    AlreadySkipped(CueId),
    #[error("cue `{cue}` is {state} and cannot be fired")]
    NotFireable { cue: CueId, state: CueState },
    #[error("cue `{0}` is not in the current scene")]
    NotInScene(CueId),
    #[error("scene `{0}` is not after the current scene")]
    BackwardJump(SceneId),
    #[error("the show is already held")]
    AlreadyHeld,
    #[error("the show is not held")]
    NotHeld,
}

impl EngineError {
    pub fn code(&self) -> &'static str {
        match self {
            EngineError::EmptyGraph => "E_EMPTY_GRAPH",
            EngineError::StaleSeq { .. } => "E_STALE_SEQ",
            EngineError::UnknownCue(_) => "E_UNKNOWN_CUE",
            EngineError::UnknownScene(_) => "E_UNKNOWN_SCENE",
            EngineError::UnknownDevice(_) => "E_UNKNOWN_DEVICE",
            EngineError::AlreadyCompleted(_) => "E_ALREADY_COMPLETED",
            EngineError::AlreadySkipped(_) => "E_ALREADY_SKIPPED",
            EngineError::NotFireable { .. } => "E_NOT_FIREABLE",
            EngineError::NotInScene(_) => "E_NOT_IN_SCENE",
            EngineError::BackwardJump(_) => "E_BACKWARD_JUMP",
            EngineError::AlreadyHeld => "E_ALREADY_HELD",
            EngineError::NotHeld => "E_NOT_HELD",
        }
    }
}

/// Media the engine believes is playing, used to build snapshots.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ActiveMedia {
    pub cue: CueId,
    pub asset: AssetId,
    pub targets: Vec<DeviceId>,
    /// Server time at which the asset's position 0 would have played.
    pub origin: Millis,
    /// Expected end in server time.
    pub ends_at: Millis,
    pub blocking: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct DeferredFire {
    pub cue: CueId,
    pub cause: Cause,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct EngineState {
    pub current_scene: usize,
    pub cue_states: BTreeMap<CueId, CueState>,
    pub media_pending: BTreeMap<CueId, BTreeSet<(DeviceId, AssetId)>>,
    pub active_media: Vec<ActiveMedia>,
    pub timers: BTreeSet<Timer>,
    pub held: bool,
    pub deferred: VecDeque<DeferredFire>,
    pub logical_now: Millis,
    pub last_seq: Option<u64>,
    pub finished: bool,
    pub joined: BTreeSet<DeviceId>,
    /// Devices that have joined at least once.
    pub seen: BTreeSet<DeviceId>,
    next_timer: u64,
    next_command: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct CueSummary {
    pub id: CueId,
    pub trigger: &'static str,
    pub blocking: bool,
    pub state: CueState,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct SceneSummary {
    pub id: SceneId,
    pub phase: Phase,
    pub cues: Vec<CueSummary>,
}

/// Read-only view for operators.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct EngineSummary {
    pub title: String,
    pub current_scene: SceneId,
    pub held: bool,
    pub finished: bool,
    pub logical_now: Millis,
    pub last_seq: Option<u64>,
    pub scenes: Vec<SceneSummary>,
    pub media_pending: BTreeMap<CueId, Vec<(DeviceId, AssetId)>>,
    pub timers: Vec<Timer>,
    pub deferred: Vec<CueId>,
    pub joined: Vec<DeviceId>,
}

#[derive(Clone, Debug)]
pub struct Engine {
    graph: Arc<CueGraph>,
    config: EngineConfig,
    state: EngineState,
    /// Seq of the event being handled, stamped on records.
    ctx_seq: u64,
}

impl Engine {
    /// Build the engine and enter the first scene at `start_at`.
    pub fn init(graph: Arc<CueGraph>, config: EngineConfig, start_at: Millis) -> Result<(Engine, Output), EngineError> {
        if graph.scenes.is_empty() || graph.cue_count() == 0 {
            return Err(EngineError::EmptyGraph);
        }
        let cue_states = graph.cue_ids().map(|id| (id.clone(), CueState::Idle)).collect();
        let mut engine = Engine {
            graph,
            config,
            state: EngineState {
                current_scene: 0,
                cue_states,
                media_pending: BTreeMap::new(),
                active_media: Vec::new(),
                timers: BTreeSet::new(),
                held: false,
                deferred: VecDeque::new(),
                logical_now: start_at,
                last_seq: None,
                finished: false,
                joined: BTreeSet::new(),
                seen: BTreeSet::new(),
                next_timer: 1,
                next_command: 1,
            },
            ctx_seq: 0,
        };
        let mut out = Output::default();
        engine.enter_scene(0, &Cause::Init, &mut out);
        engine.check_scene_done(&Cause::Init, &mut out);
        Ok((engine, out))
    }

    pub fn graph(&self) -> &Arc<CueGraph> {
        &self.graph
    }

    pub fn config(&self) -> EngineConfig {
        self.config
    }

    pub fn state(&self) -> &EngineState {
        &self.state
    }

    pub fn cue_state(&self, cue: &str) -> Option<CueState> {
        self.state.cue_states.get(cue).copied()
    }

    pub fn is_finished(&self) -> bool {
        self.state.finished
    }

    pub fn current_scene(&self) -> &SceneId {
        &self.graph.scenes[self.state.current_scene].id
    }

    /// Earliest pending timer, or `None` while held or finished.
    pub fn next_deadline(&self) -> Option<Millis> {
        if self.state.held || self.state.finished {
            return None;
        }
        self.state.timers.first().map(|t| t.fire_at)
    }

    /// Apply one event. Fails only for an out-of-order seq, which leaves the
    /// engine untouched; anything else unusable becomes an `ignored` record.
    pub fn handle_event(&mut self, ev: &Event) -> Result<Output, EngineError> {
        if let Some(last) = self.state.last_seq {
            if ev.seq <= last {
                return Err(EngineError::StaleSeq { seq: ev.seq, last });
            }
        }
        self.state.last_seq = Some(ev.seq);
        self.state.logical_now = self.state.logical_now.max(ev.at);
        self.ctx_seq = ev.seq;
        let cause = Cause::Event(ev.seq);
        let mut out = Output::default();
        if self.state.finished {
            self.ignore(ev.seq, IgnoreReason::ShowFinished, &mut out);
            return Ok(out);
        }
        match &ev.kind {
            EventKind::ButtonPress { device, button } => self.on_button(ev.seq, device, button, &cause, &mut out),
            EventKind::MediaEnded { device, asset, cue } => {
                self.on_media_ended(ev.seq, device, asset, cue, &cause, &mut out)
            }
            EventKind::ColliderTransition { collider, device, crossing } => {
                if self.graph.role_of(device.as_str()).is_none() {
                    self.ignore(ev.seq, IgnoreReason::UnknownDevice { device: device.clone() }, &mut out);
                } else {
                    let graph = Arc::clone(&self.graph);
                    let scene = self.state.current_scene;
                    let hits: Vec<usize> = graph.scenes[scene]
                        .cues
                        .iter()
                        .enumerate()
                        .filter(|(_, c)| match (&c.trigger, crossing) {
                            (Trigger::ColliderEnter { collider: id }, Crossing::Enter)
                            | (Trigger::ColliderExit { collider: id }, Crossing::Exit) => id == collider,
                            _ => false,
                        })
                        .filter(|(_, c)| self.available(&c.id))
                        .map(|(i, _)| i)
                        .collect();
                    if hits.is_empty() {
                        let detail = format!("no armed cue waits for {crossing:?} of `{collider}`").to_lowercase();
                        self.ignore(ev.seq, IgnoreReason::NoArmedCue { detail }, &mut out);
                    }
                    for pos in hits {
                        // An earlier hit may have advanced the scene or ended the show.
                        let id = &graph.scenes[scene].cues[pos].id;
                        if self.state.current_scene == scene && !self.state.finished && self.available(id) {
                            self.trigger_fire(CueRef { scene, pos }, &cause, &mut out);
                        }
                    }
                }
            }
            EventKind::DeviceJoined { device } => match self.graph.role_of(device.as_str()) {
                None => self.ignore(ev.seq, IgnoreReason::UnknownDevice { device: device.clone() }, &mut out),
                Some(role) => {
                    self.state.joined.insert(device.clone());
                    let rejoin = !self.state.seen.insert(device.clone());
                    let payload = self.snapshot(device).expect("roster device");
                    // A first join with nothing playing needs no catch-up.
                    if role == Role::Hmd && (rejoin || !payload.media.is_empty()) {
                        self.emit(
                            &cause,
                            None,
                            CommandKind::Snapshot { device: device.clone(), payload },
                            &mut out,
                        );
                    }
                }
            },
            EventKind::DeviceLeft { device } => {
                if self.graph.role_of(device.as_str()).is_none() {
                    self.ignore(ev.seq, IgnoreReason::UnknownDevice { device: device.clone() }, &mut out);
                } else {
                    self.state.joined.remove(device);
                }
            }
            EventKind::OperatorCmd(cmd) => {
                if let Err(e) = self.apply_operator(cmd, &cause, &mut out) {
                    let reason = IgnoreReason::Rejected { code: e.code().to_owned(), message: e.to_string() };
                    self.ignore(ev.seq, reason, &mut out);
                }
            }
        }
        self.check_scene_done(&cause, &mut out);
        Ok(out)
    }

    /// Apply an operator command directly. Unlike commands inside
    /// `handle_event`, refusals are returned as errors.
    pub fn operator_command(&mut self, cmd: &OperatorCmd, cause: Cause) -> Result<Output, EngineError> {
        let mut out = Output::default();
        self.apply_operator(cmd, &cause, &mut out)?;
        self.check_scene_done(&cause, &mut out);
        Ok(out)
    }

    /// Advance logical time to `now`, firing every due timer in order.
    /// Times earlier than the current logical time are clamped.
    pub fn tick(&mut self, now: Millis) -> Output {
        let now = now.max(self.state.logical_now);
        let mut out = Output::default();
        if !self.state.held && !self.state.finished {
            self.run_due_timers(now, &mut out);
        }
        self.state.logical_now = now;
        self.state.active_media.retain(|m| m.blocking || m.ends_at > now);
        if !self.state.finished {
            let cause = Cause::Event(self.ctx_seq);
            self.check_scene_done(&cause, &mut out);
        }
        out
    }

    /// What a (re)joining HMD should be doing right now.
    pub fn snapshot(&self, device: &DeviceId) -> Result<SnapshotPayload, EngineError> {
        if self.graph.role_of(device.as_str()).is_none() {
            return Err(EngineError::UnknownDevice(device.clone()));
        }
        let now = self.state.logical_now;
        let media = self
            .state
            .active_media
            .iter()
            .filter(|m| m.targets.contains(device))
            .filter(|m| {
                if m.blocking {
                    self.state
                        .media_pending
                        .get(&m.cue)
                        .is_some_and(|p| p.contains(&(device.clone(), m.asset.clone())))
                } else {
                    m.ends_at > now
                }
            })
            .map(|m| SnapshotMedia { cue: m.cue.clone(), asset: m.asset.clone(), seek_offset: now - m.origin })
            .collect();
        Ok(SnapshotPayload { scene: self.current_scene().clone(), media })
    }

    pub fn summary(&self) -> EngineSummary {
        let scenes = self
            .graph
            .scenes
            .iter()
            .map(|s| SceneSummary {
                id: s.id.clone(),
                phase: s.phase,
                cues: s
                    .cues
                    .iter()
                    .map(|c| CueSummary {
                        id: c.id.clone(),
                        trigger: c.trigger.kind_str(),
                        blocking: c.blocking,
                        state: self.state.cue_states[&c.id],
                    })
                    .collect(),
            })
            .collect();
        EngineSummary {
            title: self.graph.title.clone(),
            current_scene: self.current_scene().clone(),
            held: self.state.held,
            finished: self.state.finished,
            logical_now: self.state.logical_now,
            last_seq: self.state.last_seq,
            scenes,
            media_pending: self
                .state
                .media_pending
                .iter()
                .map(|(k, v)| (k.clone(), v.iter().cloned().collect()))
                .collect(),
            timers: self.state.timers.iter().cloned().collect(),
            deferred: self.state.deferred.iter().map(|d| d.cue.clone()).collect(),
            joined: self.state.joined.iter().cloned().collect(),
        }
    }

    // ---- event handlers ----

    fn on_button(&mut self, seq: u64, device: &DeviceId, button: &str, cause: &Cause, out: &mut Output) {
        match self.graph.role_of(device.as_str()) {
            None => return self.ignore(seq, IgnoreReason::UnknownDevice { device: device.clone() }, out),
            Some(Role::Hmd) => {
                let detail = "button presses must come from a wearable".to_owned();
                return self.ignore(seq, IgnoreReason::RoleViolation { device: device.clone(), detail }, out);
            }
            Some(Role::Wearable) => {}
        }
        let scene = self.state.current_scene;
        let graph = Arc::clone(&self.graph);
        let hit = graph.scenes[scene].cues.iter().position(|c| {
            matches!(&c.trigger, Trigger::Manual { device: d, button: b } if d == device && b == button)
                && self.available(&c.id)
        });
        match hit {
            Some(pos) => self.trigger_fire(CueRef { scene, pos }, cause, out),
            None => {
                let detail = format!("no armed cue waits for `{button}` on `{device}`");
                self.ignore(seq, IgnoreReason::NoArmedCue { detail }, out);
            }
        }
    }

    fn on_media_ended(
        &mut self,
        seq: u64,
        device: &DeviceId,
        asset: &AssetId,
        cue: &CueId,
        cause: &Cause,
        out: &mut Output,
    ) {
        match self.graph.role_of(device.as_str()) {
            None => return self.ignore(seq, IgnoreReason::UnknownDevice { device: device.clone() }, out),
            Some(Role::Wearable) => {
                let detail = "media reports must come from an hmd".to_owned();
                return self.ignore(seq, IgnoreReason::RoleViolation { device: device.clone(), detail }, out);
            }
            Some(Role::Hmd) => {}
        }
        let key = (device.clone(), asset.clone());
        let resolved = self
            .state
            .media_pending
            .get_mut(cue)
            .and_then(|pending| pending.remove(&key).then(|| pending.is_empty()));
        match resolved {
            None => {
                let detail = format!("`{asset}` on `{device}` is not pending for cue `{cue}`");
                self.ignore(seq, IgnoreReason::NotPending { detail }, out);
            }
            Some(false) => {}
            Some(true) => {
                let at = self.graph.locate(cue.as_str()).expect("pending cue exists");
                self.complete(at, cause, out);
            }
        }
    }

    fn apply_operator(&mut self, cmd: &OperatorCmd, cause: &Cause, out: &mut Output) -> Result<(), EngineError> {
        match cmd {
            OperatorCmd::Fire { cue } => {
                let at = self.in_scene(cue)?;
                match self.state.cue_states[cue] {
                    CueState::Completed => return Err(EngineError::AlreadyCompleted(cue.clone())),
                    s @ (CueState::Running | CueState::Skipped) => {
                        return Err(EngineError::NotFireable { cue: cue.clone(), state: s })
                    }
                    CueState::Idle => {
                        // Unmet predecessor is skipped, which arms this cue.
                        let pred = self.graph.cue(at).predecessor.expect("idle cue in current scene has a predecessor");
                        self.skip(CueRef { scene: at.scene, pos: pred }, cause, true, out);
                    }
                    CueState::Armed => {}
                }
                self.state.deferred.retain(|d| &d.cue != cue);
                self.fire(at, cause, out);
            }
            OperatorCmd::Skip { cue } => {
                let at = self.in_scene(cue)?;
                match self.state.cue_states[cue] {
                    CueState::Completed => return Err(EngineError::AlreadyCompleted(cue.clone())),
                    CueState::Skipped => return Err(EngineError::AlreadySkipped(cue.clone())),
                    _ => self.skip(at, cause, true, out),
                }
            }
            OperatorCmd::Hold => {
                if self.state.held {
                    return Err(EngineError::AlreadyHeld);
                }
                self.state.held = true;
            }
            OperatorCmd::Resume => {
                if !self.state.held {
                    return Err(EngineError::NotHeld);
                }
                self.state.held = false;
                while let Some(d) = self.state.deferred.pop_front() {
                    if self.state.finished {
                        break;
                    }
                    match self.graph.locate(d.cue.as_str()) {
                        Some(at)
                            if at.scene == self.state.current_scene
                                && self.state.cue_states[&d.cue] == CueState::Armed =>
                        {
                            self.fire(at, &d.cause, out)
                        }
                        _ => {
                            let seq = self.ctx_seq;
                            self.ignore(seq, IgnoreReason::StaleFire { cue: d.cue }, out);
                        }
                    }
                    self.check_scene_done(cause, out);
                }
                let now = self.state.logical_now;
                if !self.state.finished {
                    self.run_due_timers(now, out);
                }
            }
            OperatorCmd::JumpToScene { scene } => {
                let target = self.graph.scene_index(scene.as_str()).ok_or_else(|| EngineError::UnknownScene(scene.clone()))?;
                if target <= self.state.current_scene {
                    return Err(EngineError::BackwardJump(scene.clone()));
                }
                for s in self.state.current_scene..target {
                    self.exit_scene(s, cause, out);
                }
                self.enter_scene(target, cause, out);
            }
        }
        Ok(())
    }

    fn in_scene(&self, cue: &CueId) -> Result<CueRef, EngineError> {
        let at = self.graph.locate(cue.as_str()).ok_or_else(|| EngineError::UnknownCue(cue.clone()))?;
        if at.scene != self.state.current_scene {
            return Err(EngineError::NotInScene(cue.clone()));
        }
        Ok(at)
    }

    // ---- lifecycle ----

    /// Armed and not already waiting in the hold queue.
    fn available(&self, cue: &CueId) -> bool {
        self.state.cue_states[cue] == CueState::Armed && !self.state.deferred.iter().any(|d| &d.cue == cue)
    }

    fn set_state(&mut self, cue: &CueId, to: CueState, out: &mut Output) {
        let from = self.state.cue_states[cue];
        debug_assert!(from.can_become(to), "illegal transition {from} -> {to} for {cue}");
        self.state.cue_states.insert(cue.clone(), to);
        self.record(RecordKind::CueState { cue: cue.clone(), from, to }, out);
    }

    fn trigger_fire(&mut self, at: CueRef, cause: &Cause, out: &mut Output) {
        if self.state.held {
            let cue = self.graph.cue(at).id.clone();
            self.record(RecordKind::Deferred { cue: cue.clone(), cause: cause.clone() }, out);
            self.state.deferred.push_back(DeferredFire { cue, cause: cause.clone() });
        } else {
            self.fire(at, cause, out);
        }
    }

    fn fire(&mut self, at: CueRef, cause: &Cause, out: &mut Output) {
        let graph = Arc::clone(&self.graph);
        let cue = graph.cue(at);
        self.cancel_timers(&cue.id, Some(TimerKind::AutoAfter));
        self.set_state(&cue.id, CueState::Running, out);
        let now = self.state.logical_now;
        let mut deadline: Option<Millis> = None;
        for action in &cue.actions {
            match action {
                ResolvedAction::PlayMedia { asset, targets, start_offset_ms, duration_ms } => {
                    let start_at = now + self.config.lead_ms;
                    let remaining = (duration_ms - start_offset_ms).max(0);
                    let kind = CommandKind::StartMedia {
                        asset: asset.clone(),
                        targets: targets.clone(),
                        start_at,
                        seek_offset: *start_offset_ms,
                    };
                    self.emit(cause, Some(&cue.id), kind, out);
                    self.state.active_media.push(ActiveMedia {
                        cue: cue.id.clone(),
                        asset: asset.clone(),
                        targets: targets.clone(),
                        origin: start_at - start_offset_ms,
                        ends_at: start_at + remaining,
                        blocking: cue.blocking,
                    });
                    deadline = Some(deadline.unwrap_or(Millis::MIN).max(start_at + remaining));
                }
                ResolvedAction::StopMedia { asset, targets } => {
                    let kind = CommandKind::StopMedia { asset: asset.clone(), targets: targets.clone() };
                    self.emit(cause, Some(&cue.id), kind, out);
                    self.stop_playing(asset, targets);
                }
                ResolvedAction::Buzz { device, pattern } => {
                    let kind = CommandKind::Buzz { device: device.clone(), pattern: *pattern };
                    self.emit(cause, Some(&cue.id), kind, out);
                }
                ResolvedAction::AdvanceScene => {}
            }
        }
        if cue.blocking && !cue.media_set.is_empty() {
            self.state.media_pending.insert(cue.id.clone(), cue.media_set.clone());
            let fire_at = deadline.expect("blocking media cue plays media") + self.config.grace_ms + 1;
            self.schedule(&cue.id, TimerKind::MediaDeadline, fire_at, cause, out);
        } else {
            self.complete(at, cause, out);
        }
    }

    /// Forget playback of `asset` on `targets` for snapshot purposes.
    /// Blocking cues still wait for the devices' own end reports, which
    /// clients send when they stop a clip.
    fn stop_playing(&mut self, asset: &AssetId, targets: &[DeviceId]) {
        for m in &mut self.state.active_media {
            if &m.asset == asset {
                m.targets.retain(|d| !targets.contains(d));
            }
        }
        self.state.active_media.retain(|m| !m.targets.is_empty());
    }

    fn complete(&mut self, at: CueRef, cause: &Cause, out: &mut Output) {
        let graph = Arc::clone(&self.graph);
        let cue = graph.cue(at);
        self.set_state(&cue.id, CueState::Completed, out);
        self.drop_media(&cue.id);
        self.cancel_timers(&cue.id, None);
        for &succ in &cue.successors {
            let sref = CueRef { scene: at.scene, pos: succ };
            let scue = graph.cue(sref);
            if self.state.current_scene != at.scene || self.state.cue_states[&scue.id] != CueState::Idle {
                continue;
            }
            self.set_state(&scue.id, CueState::Armed, out);
            match &scue.trigger {
                Trigger::ContentEnd { .. } | Trigger::AutoAfter { delay_ms: 0, .. } => self.trigger_fire(sref, cause, out),
                Trigger::AutoAfter { delay_ms, .. } => {
                    let fire_at = self.state.logical_now + delay_ms;
                    self.schedule(&scue.id, TimerKind::AutoAfter, fire_at, cause, out);
                }
                _ => {}
            }
        }
        if cue.advances_scene() && self.state.current_scene == at.scene && !self.state.finished {
            self.advance_scene(cause, out);
        }
    }

    /// Skip a cue. With `arm_successors`, idle successors become armed
    /// without being fired or scheduled.
    fn skip(&mut self, at: CueRef, cause: &Cause, arm_successors: bool, out: &mut Output) {
        let graph = Arc::clone(&self.graph);
        let cue = graph.cue(at);
        let prev = self.state.cue_states[&cue.id];
        self.set_state(&cue.id, CueState::Skipped, out);
        self.cancel_timers(&cue.id, None);
        self.state.deferred.retain(|d| d.cue != cue.id);
        if prev == CueState::Running {
            if let Some(pending) = self.state.media_pending.get(&cue.id) {
                let mut by_asset: BTreeMap<AssetId, Vec<DeviceId>> = BTreeMap::new();
                for (d, a) in pending {
                    by_asset.entry(a.clone()).or_default().push(d.clone());
                }
                for (asset, targets) in by_asset {
                    self.emit(cause, Some(&cue.id), CommandKind::StopMedia { asset, targets }, out);
                }
            }
        }
        self.drop_media(&cue.id);
        if arm_successors {
            for &succ in &cue.successors {
                let id = &graph.cue(CueRef { scene: at.scene, pos: succ }).id;
                if self.state.cue_states[id] == CueState::Idle {
                    self.set_state(id, CueState::Armed, out);
                }
            }
        }
    }

    fn drop_media(&mut self, cue: &CueId) {
        self.state.media_pending.remove(cue);
        self.state.active_media.retain(|m| !(m.blocking && &m.cue == cue));
    }

    // ---- scenes ----

    fn enter_scene(&mut self, idx: usize, cause: &Cause, out: &mut Output) {
        let graph = Arc::clone(&self.graph);
        self.state.current_scene = idx;
        let scene = &graph.scenes[idx];
        self.record(RecordKind::SceneEntered { scene: scene.id.clone() }, out);
        let mut immediate = Vec::new();
        for &pos in &scene.roots {
            let cue = &scene.cues[pos];
            self.set_state(&cue.id, CueState::Armed, out);
            if let Trigger::AutoAfter { after: None, delay_ms } = cue.trigger {
                if delay_ms == 0 {
                    immediate.push(pos);
                } else {
                    let fire_at = self.state.logical_now + delay_ms;
                    self.schedule(&cue.id, TimerKind::AutoAfter, fire_at, cause, out);
                }
            }
        }
        for pos in immediate {
            if self.state.current_scene == idx && self.state.cue_states[&scene.cues[pos].id] == CueState::Armed {
                self.trigger_fire(CueRef { scene: idx, pos }, cause, out);
            }
        }
    }

    fn exit_scene(&mut self, idx: usize, cause: &Cause, out: &mut Output) {
        let graph = Arc::clone(&self.graph);
        for pos in 0..graph.scenes[idx].cues.len() {
            if !self.state.cue_states[&graph.scenes[idx].cues[pos].id].is_terminal() {
                self.skip(CueRef { scene: idx, pos }, cause, false, out);
            }
        }
    }

    fn advance_scene(&mut self, cause: &Cause, out: &mut Output) {
        let cur = self.state.current_scene;
        self.exit_scene(cur, cause, out);
        if cur + 1 < self.graph.scenes.len() {
            self.enter_scene(cur + 1, cause, out);
        } else {
            self.finish(out);
        }
    }

    /// Move past scenes whose cues are all terminal.
    fn check_scene_done(&mut self, cause: &Cause, out: &mut Output) {
        while !self.state.finished {
            let scene = &self.graph.scenes[self.state.current_scene];
            if !scene.cues.iter().all(|c| self.state.cue_states[&c.id].is_terminal()) {
                break;
            }
            self.advance_scene(cause, out);
        }
    }

    fn finish(&mut self, out: &mut Output) {
        if self.state.finished {
            return;
        }
        self.state.finished = true;
        self.state.timers.clear();
        self.state.deferred.clear();
        self.record(RecordKind::ShowFinished, out);
    }

    // ---- timers ----

    fn schedule(&mut self, cue: &CueId, kind: TimerKind, fire_at: Millis, cause: &Cause, out: &mut Output) {
        let id = self.state.next_timer;
        self.state.next_timer += 1;
        self.state.timers.insert(Timer { fire_at, cue: cue.clone(), kind, id });
        self.record(
            RecordKind::TimerScheduled { timer: id, fire_at, cue: cue.clone(), purpose: kind, cause: cause.clone() },
            out,
        );
    }

    fn cancel_timers(&mut self, cue: &CueId, kind: Option<TimerKind>) {
        self.state.timers.retain(|t| !(&t.cue == cue && kind.is_none_or(|k| k == t.kind)));
    }

    fn run_due_timers(&mut self, limit: Millis, out: &mut Output) {
        while !self.state.finished && !self.state.held {
            let Some(t) = self.state.timers.first().cloned() else { break };
            if t.fire_at > limit {
                break;
            }
            self.state.timers.remove(&t);
            self.state.logical_now = self.state.logical_now.max(t.fire_at);
            let Some(at) = self.graph.locate(t.cue.as_str()) else { continue };
            if at.scene != self.state.current_scene {
                continue;
            }
            let cause = Cause::Timer(t.id);
            match t.kind {
                TimerKind::AutoAfter => {
                    if self.state.cue_states[&t.cue] == CueState::Armed {
                        self.state.deferred.retain(|d| d.cue != t.cue);
                        self.fire(at, &cause, out);
                    }
                }
                TimerKind::MediaDeadline => {
                    if self.state.cue_states[&t.cue] == CueState::Running {
                        let missing: Vec<_> =
                            self.state.media_pending.get(&t.cue).map(|p| p.iter().cloned().collect()).unwrap_or_default();
                        self.record(RecordKind::MediaTimeout { cue: t.cue.clone(), missing }, out);
                        self.complete(at, &Cause::MediaTimeout(t.cue.clone()), out);
                    }
                }
            }
            self.check_scene_done(&cause, out);
        }
    }

    // ---- output ----

    fn emit(&mut self, cause: &Cause, cue: Option<&CueId>, kind: CommandKind, out: &mut Output) {
        let id = self.state.next_command;
        self.state.next_command += 1;
        out.commands.push(Command {
            id,
            issued_at: self.state.logical_now,
            cause: cause.clone(),
            cue: cue.cloned(),
            kind,
        });
    }

    fn record(&mut self, kind: RecordKind, out: &mut Output) {
        out.records.push(Record { seq: self.ctx_seq, at: self.state.logical_now, kind });
    }

    fn ignore(&mut self, event: u64, reason: IgnoreReason, out: &mut Output) {
        self.record(RecordKind::Ignored { event, reason }, out);
    }
}
