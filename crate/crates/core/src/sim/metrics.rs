//! Run reports computed from a run log and the scenario that produced it.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use super::scenario::Scenario;
use crate::engine::{Cause, CommandKind, CueState, RecordKind};
use crate::gateway::Note;
use crate::ids::{AssetId, CueId, DeviceId, Millis};
use crate::runlog::{header, LogError, LogLine};

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct LatencyStats {
    pub count: usize,
    pub max_ms: Millis,
    pub mean_ms: f64,
}

/// Start-time spread of one `start_media` command across its targets, in
/// true (server) time.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct SkewSample {
    pub command: u64,
    pub cue: Option<CueId>,
    pub asset: AssetId,
    pub devices: usize,
    pub skew_ms: Millis,
    /// Largest offset-confidence among the targets; `None` if any target
    /// had no clock estimate yet.
    pub max_confidence: Option<Millis>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct SnapshotSample {
    pub command: u64,
    pub at: Millis,
    pub device: DeviceId,
    pub media: Vec<(CueId, AssetId, Millis)>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct TimelineEntry {
    pub at: Millis,
    pub cue: CueId,
    pub state: CueState,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunReport {
    pub title: String,
    pub seed: Option<u64>,
    pub finished: bool,
    pub finished_at: Option<Millis>,
    pub events: usize,
    pub commands: BTreeMap<String, usize>,
    pub ignored: usize,
    pub undeliverable: usize,
    pub media_timeouts: usize,
    /// Issue time minus triggering event time, for event-caused commands.
    pub latency: LatencyStats,
    /// Per cue whose first command was event-caused: issue time minus the
    /// event time.
    pub cue_latency: BTreeMap<CueId, Millis>,
    pub skew: Vec<SkewSample>,
    pub max_skew_ms: Option<Millis>,
    pub snapshots: Vec<SnapshotSample>,
    pub timeline: Vec<TimelineEntry>,
}

pub fn compute_metrics(lines: &[LogLine], sc: &Scenario) -> Result<RunReport, LogError> {
    let h = header(lines)?;
    let mut report = RunReport {
        title: h.title.clone(),
        seed: h.seed,
        finished: false,
        finished_at: None,
        events: 0,
        commands: BTreeMap::new(),
        ignored: 0,
        undeliverable: 0,
        media_timeouts: 0,
        latency: LatencyStats::default(),
        cue_latency: BTreeMap::new(),
        skew: Vec::new(),
        max_skew_ms: None,
        snapshots: Vec::new(),
        timeline: Vec::new(),
    };
    let mut event_at = BTreeMap::new();
    let mut starts = Vec::new();
    // command -> device -> (device_start_at, confidence)
    let mut dispatched: BTreeMap<u64, BTreeMap<DeviceId, (Option<Millis>, Option<Millis>)>> = BTreeMap::new();
    let mut latency_sum = 0i64;
    let mut commanded = BTreeSet::new();
    for line in lines {
        match line {
            LogLine::Event(e) => {
                report.events += 1;
                event_at.insert(e.seq, e.at);
            }
            LogLine::Command(c) => {
                *report.commands.entry(c.kind.name().to_owned()).or_default() += 1;
                if let Cause::Event(seq) = c.cause {
                    if let Some(at) = event_at.get(&seq) {
                        let l = c.issued_at - at;
                        report.latency.count += 1;
                        report.latency.max_ms = report.latency.max_ms.max(l);
                        latency_sum += l;
                        if let Some(cue) = c.cue.as_ref().filter(|c| !commanded.contains(*c)) {
                            report.cue_latency.insert(cue.clone(), l);
                        }
                    }
                }
                if let Some(cue) = &c.cue {
                    commanded.insert(cue.clone());
                }
                match &c.kind {
                    CommandKind::StartMedia { asset, .. } => starts.push((c.id, c.cue.clone(), asset.clone())),
                    CommandKind::Snapshot { device, payload } => report.snapshots.push(SnapshotSample {
                        command: c.id,
                        at: c.issued_at,
                        device: device.clone(),
                        media: payload.media.iter().map(|m| (m.cue.clone(), m.asset.clone(), m.seek_offset)).collect(),
                    }),
                    _ => {}
                }
            }
            LogLine::Record(r) => match &r.kind {
                RecordKind::Ignored { .. } => report.ignored += 1,
                RecordKind::MediaTimeout { .. } => report.media_timeouts += 1,
                RecordKind::ShowFinished => {
                    report.finished = true;
                    report.finished_at = Some(r.at);
                }
                RecordKind::CueState { cue, to, .. } => {
                    report.timeline.push(TimelineEntry { at: r.at, cue: cue.clone(), state: *to })
                }
                _ => {}
            },
            LogLine::Gateway(g) => match &g.note {
                Note::Ignored { .. } | Note::Rejected { .. } => report.ignored += 1,
                Note::Undeliverable { .. } => report.undeliverable += 1,
                Note::Dispatched { command, device, device_start_at, confidence } => {
                    dispatched.entry(*command).or_default().insert(device.clone(), (*device_start_at, *confidence));
                }
                _ => {}
            },
            LogLine::Header(_) | LogLine::Tick { .. } | LogLine::Playback(_) => {}
        }
    }
    if report.latency.count > 0 {
        report.latency.mean_ms = latency_sum as f64 / report.latency.count as f64;
    }
    for (command, cue, asset) in starts {
        let Some(targets) = dispatched.get(&command) else { continue };
        let true_starts: Vec<Millis> = targets
            .iter()
            .filter_map(|(d, (start, _))| start.map(|s| s - sc.clock_offset(d.as_str())))
            .collect();
        if true_starts.is_empty() {
            continue;
        }
        let skew = true_starts.iter().max().unwrap() - true_starts.iter().min().unwrap();
        let max_confidence =
            targets.values().map(|(_, c)| *c).try_fold(0, |acc, c| c.map(|c| acc.max(c)));
        report.skew.push(SkewSample { command, cue, asset, devices: true_starts.len(), skew_ms: skew, max_confidence });
    }
    report.max_skew_ms = report.skew.iter().map(|s| s.skew_ms).max();
    Ok(report)
}
