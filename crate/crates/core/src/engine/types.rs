use std::fmt;

use serde::{Deserialize, Serialize};

use crate::ids::{AssetId, ColliderId, CueId, DeviceId, Millis, SceneId};
use crate::script::BuzzPattern;
use crate::spatial::Crossing;

/// Lifecycle of a cue. Transitions only move forward along
/// `Idle -> Armed -> Running -> Completed`; `Skipped` is reachable from any
/// non-terminal state.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CueState {
    Idle,
    Armed,
    Running,
    Completed,
    Skipped,
}

impl CueState {
    pub fn is_terminal(self) -> bool {
        matches!(self, CueState::Completed | CueState::Skipped)
    }

    /// Whether `self -> to` is a legal lifecycle step.
    pub fn can_become(self, to: CueState) -> bool {
        match to {
            CueState::Skipped => !self.is_terminal(),
            _ => !self.is_terminal() && to > self,
        }
    }
}

impl fmt::Display for CueState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            CueState::Idle => "idle",
            CueState::Armed => "armed",
            CueState::Running => "running",
            CueState::Completed => "completed",
            CueState::Skipped => "skipped",
        };
        f.write_str(s)
    }
}

/// Live operator intervention. JSON form: `{"cmd": "fire", "cue": "c1"}`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "cmd", rename_all = "snake_case", deny_unknown_fields)]
pub enum OperatorCmd {
    Fire { cue: CueId },
    Skip { cue: CueId },
    Hold,
    Resume,
    JumpToScene { scene: SceneId },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    ButtonPress { device: DeviceId, button: String },
    MediaEnded { device: DeviceId, asset: AssetId, cue: CueId },
    ColliderTransition { collider: ColliderId, device: DeviceId, crossing: Crossing },
    DeviceJoined { device: DeviceId },
    DeviceLeft { device: DeviceId },
    OperatorCmd(OperatorCmd),
}

/// An inbound occurrence, totally ordered by `seq` (assigned by the gateway).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Event {
    pub seq: u64,
    pub at: Millis,
    pub kind: EventKind,
}

/// Why a command was issued.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Cause {
    /// Engine initialization (scene-start cues with zero delay).
    Init,
    /// The event with this seq.
    Event(u64),
    /// The timer with this id; its `timer_scheduled` record names its own cause.
    Timer(u64),
    /// A blocking cue's media deadline passed.
    MediaTimeout(CueId),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SnapshotMedia {
    pub cue: CueId,
    pub asset: AssetId,
    /// Playback position the device should seek to, in ms.
    pub seek_offset: Millis,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SnapshotPayload {
    pub scene: SceneId,
    pub media: Vec<SnapshotMedia>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CommandKind {
    /// Start `asset` on every target at server time `start_at`, positioned at `seek_offset`.
    StartMedia { asset: AssetId, targets: Vec<DeviceId>, start_at: Millis, seek_offset: Millis },
    StopMedia { asset: AssetId, targets: Vec<DeviceId> },
    Buzz { device: DeviceId, pattern: BuzzPattern },
    Snapshot { device: DeviceId, payload: SnapshotPayload },
}

impl CommandKind {
    pub fn name(&self) -> &'static str {
        match self {
            CommandKind::StartMedia { .. } => "start_media",
            CommandKind::StopMedia { .. } => "stop_media",
            CommandKind::Buzz { .. } => "buzz",
            CommandKind::Snapshot { .. } => "snapshot",
        }
    }

    /// Devices this command addresses.
    pub fn targets(&self) -> Vec<DeviceId> {
        match self {
            CommandKind::StartMedia { targets, .. } | CommandKind::StopMedia { targets, .. } => targets.clone(),
            CommandKind::Buzz { device, .. } | CommandKind::Snapshot { device, .. } => vec![device.clone()],
        }
    }
}

/// An outbound instruction. Serialized with `seq` (command number) and `at`
/// (issue time) so run-log lines share one shape.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Command {
    #[serde(rename = "seq")]
    pub id: u64,
    #[serde(rename = "at")]
    pub issued_at: Millis,
    pub cause: Cause,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cue: Option<CueId>,
    pub kind: CommandKind,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimerKind {
    /// Fire an armed `auto_after` cue.
    AutoAfter,
    /// Force-complete a blocking cue whose media never reported an end.
    MediaDeadline,
}

/// Pending timer. Ordered by fire time, then cue id, so simultaneous timers
/// fire in a total order.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Timer {
    pub fire_at: Millis,
    pub cue: CueId,
    pub kind: TimerKind,
    pub id: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "reason", rename_all = "snake_case")]
pub enum IgnoreReason {
    UnknownDevice { device: DeviceId },
    RoleViolation { device: DeviceId, detail: String },
    NoArmedCue { detail: String },
    NotPending { detail: String },
    ShowFinished,
    /// Operator command refused; `code` is the engine error code.
    Rejected { code: String, message: String },
    /// A deferred fire whose cue is no longer armed at resume time.
    StaleFire { cue: CueId },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordKind {
    CueState { cue: CueId, from: CueState, to: CueState },
    Ignored { event: u64, #[serde(flatten)] reason: IgnoreReason },
    MediaTimeout { cue: CueId, missing: Vec<(DeviceId, AssetId)> },
    TimerScheduled { timer: u64, fire_at: Millis, cue: CueId, purpose: TimerKind, cause: Cause },
    Deferred { cue: CueId, cause: Cause },
    SceneEntered { scene: SceneId },
    ShowFinished,
}

/// Engine bookkeeping that is not a command: state changes, ignored
/// events, timeouts. `seq` is the seq of the event being handled (0 before
/// the first event).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Record {
    pub seq: u64,
    pub at: Millis,
    pub kind: RecordKind,
}

/// Everything one engine operation produced, in emission order.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Output {
    pub commands: Vec<Command>,
    pub records: Vec<Record>,
}

impl Output {
    pub fn is_empty(&self) -> bool {
        self.commands.is_empty() && self.records.is_empty()
    }

    pub fn extend(&mut self, other: Output) {
        self.commands.extend(other.commands);
        self.records.extend(other.records);
    }
}
