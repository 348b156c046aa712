//! The run log: one JSON object per line, tagged by `type`.
//!
//! A log holds a header, every event the engine handled, every tick that
//! produced output, every command and record, and gateway notes. Events
//! and ticks are enough to re-run the engine; commands are what the replay
//! is compared against. Simulated runs add device playback lines.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::{replay, Command, EngineConfig, EngineError, Event, Record, ReplayInput};
use crate::gateway::Note;
use crate::ids::{AssetId, CueId, DeviceId, Millis};
use crate::script::CueGraph;

pub const LOG_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Header {
    pub version: u32,
    pub title: String,
    pub start_at: Millis,
    pub lead_ms: Millis,
    pub grace_ms: Millis,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl Header {
    pub fn config(&self) -> EngineConfig {
        EngineConfig { lead_ms: self.lead_ms, grace_ms: self.grace_ms }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GatewayLine {
    pub at: Millis,
    #[serde(flatten)]
    pub note: Note,
}

/// A simulated device began playing media. `origin` is the true server
/// time at which asset position 0 plays on that device.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlaybackLine {
    pub at: Millis,
    pub device: DeviceId,
    pub cue: CueId,
    pub asset: AssetId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub command: Option<u64>,
    pub origin: Millis,
    pub from_snapshot: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LogLine {
    Header(Header),
    Event(Event),
    Tick { at: Millis },
    Command(Command),
    Record(Record),
    Gateway(GatewayLine),
    Playback(PlaybackLine),
}

impl LogLine {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("log lines serialize")
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum LogError {
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("the log has no header line")]
    MissingHeader,
}

impl LogError {
    pub fn code(&self) -> &'static str {
        "E_MALFORMED_LOG"
    }
}

/// Render lines as JSON Lines text.
pub fn to_jsonl(lines: &[LogLine]) -> String {
    let mut out = String::new();
    for l in lines {
        out.push_str(&l.to_json());
        out.push('\n');
    }
    out
}

/// Parse JSON Lines text. Blank lines are skipped; line numbers are 1-based.
/// Event lines must have strictly increasing `seq` and non-decreasing `at`.
pub fn parse_log(text: &str) -> Result<Vec<LogLine>, LogError> {
    let mut lines = Vec::new();
    let mut last: Option<(u64, Millis)> = None;
    for (i, l) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let malformed = |message: String| LogError::Malformed { line: i + 1, message };
        let line: LogLine = serde_json::from_str(l).map_err(|e| malformed(e.to_string()))?;
        if let LogLine::Event(e) = &line {
            if let Some((seq, at)) = last {
                if e.seq <= seq {
                    return Err(malformed(format!("event seq {} does not follow {seq}", e.seq)));
                }
                if e.at < at {
                    return Err(malformed(format!("event seq {} goes back in time ({} < {at})", e.seq, e.at)));
                }
            }
            last = Some((e.seq, e.at));
        }
        lines.push(line);
    }
    Ok(lines)
}

pub fn header(lines: &[LogLine]) -> Result<&Header, LogError> {
    lines
        .iter()
        .find_map(|l| match l {
            LogLine::Header(h) => Some(h),
            _ => None,
        })
        .ok_or(LogError::MissingHeader)
}

/// Events and ticks in log order.
pub fn replay_inputs(lines: &[LogLine]) -> Vec<ReplayInput> {
    lines
        .iter()
        .filter_map(|l| match l {
            LogLine::Event(e) => Some(ReplayInput::Event(e.clone())),
            LogLine::Tick { at } => Some(ReplayInput::Tick(*at)),
            _ => None,
        })
        .collect()
}

pub fn commands(lines: &[LogLine]) -> Vec<Command> {
    lines
        .iter()
        .filter_map(|l| match l {
            LogLine::Command(c) => Some(c.clone()),
            _ => None,
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ReplayOutcome {
    /// The replay reproduced every logged command.
    Pass { commands: usize },
    /// First mismatch; `seq` is the command number where the streams part.
    Divergence { seq: u64, logged: Option<Box<Command>>, replayed: Option<Box<Command>> },
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum ReplayError {
    #[error(transparent)]
    Log(#[from] LogError),
    #[error("engine: {0}")]
    Engine(#[from] EngineError),
}

/// Re-run the engine over a log's inputs and compare command streams.
pub fn replay_check(graph: Arc<CueGraph>, lines: &[LogLine]) -> Result<ReplayOutcome, ReplayError> {
    let h = header(lines)?;
    let replayed = replay(graph, h.config(), h.start_at, &replay_inputs(lines))?;
    let logged = commands(lines);
    let n = logged.len().max(replayed.len());
    for i in 0..n {
        let (a, b) = (logged.get(i), replayed.get(i));
        if a != b {
            let seq = a.or(b).map_or(i as u64 + 1, |c| c.id);
            return Ok(ReplayOutcome::Divergence {
                seq,
                logged: a.cloned().map(Box::new),
                replayed: b.cloned().map(Box::new),
            });
        }
    }
    Ok(ReplayOutcome::Pass { commands: logged.len() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{Cause, CommandKind, EventKind};

    #[test]
    fn lines_round_trip() {
        let lines = vec![
            LogLine::Header(Header { version: 1, title: "t".into(), start_at: 0, lead_ms: 150, grace_ms: 2000, seed: Some(3) }),
            LogLine::Event(Event { seq: 1, at: 5, kind: EventKind::DeviceJoined { device: "h1".into() } }),
            LogLine::Tick { at: 9 },
            LogLine::Command(Command {
                id: 1,
                issued_at: 5,
                cause: Cause::Event(1),
                cue: Some("c".into()),
                kind: CommandKind::StopMedia { asset: "a".into(), targets: vec!["h1".into()] },
            }),
            LogLine::Gateway(GatewayLine {
                at: 5,
                note: Note::Dispatched { command: 1, device: "h1".into(), device_start_at: None, confidence: Some(4) },
            }),
        ];
        let text = to_jsonl(&lines);
        assert!(text.starts_with("{\"type\":\"header\""));
        assert_eq!(parse_log(&text).unwrap(), lines);
    }

    #[test]
    fn malformed_line_is_reported_with_number() {
        let err = parse_log("{\"type\":\"tick\",\"at\":1}\n\nnope\n").unwrap_err();
        assert!(matches!(err, LogError::Malformed { line: 3, .. }));
        assert_eq!(err.code(), "E_MALFORMED_LOG");
    }
}
