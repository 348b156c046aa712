use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use proptest::prelude::*;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stagelink_core::engine::{
    replay, Cause, Command, CommandKind, CueState, Engine, EngineConfig, Event, EventKind, OperatorCmd, RecordKind,
};
use stagelink_core::runlog::{commands, replay_check, replay_inputs, to_jsonl, LogLine, ReplayOutcome};
use stagelink_core::script::{compile_timeline, parse_script_text, CueGraph, Role, ShowScript, Trigger};
use stagelink_core::sim::{random_case, simulate_graph, SimRun};
use stagelink_core::spatial::Crossing;

fn run(seed: u64) -> (ShowScript, Arc<CueGraph>, SimRun) {
    let (script, sc) = random_case(seed);
    let graph = Arc::new(compile_timeline(&script).unwrap());
    let run = simulate_graph(graph.clone(), &sc).unwrap();
    (script, graph, run)
}

fn events(log: &[LogLine]) -> BTreeMap<u64, &Event> {
    log.iter()
        .filter_map(|l| match l {
            LogLine::Event(e) => Some((e.seq, e)),
            _ => None,
        })
        .collect()
}

/// Per cue, every state it passed through, in order.
fn state_chains(log: &[LogLine]) -> BTreeMap<String, Vec<(CueState, CueState)>> {
    let mut chains: BTreeMap<String, Vec<(CueState, CueState)>> = BTreeMap::new();
    for l in log {
        if let LogLine::Record(r) = l {
            if let RecordKind::CueState { cue, from, to } = &r.kind {
                chains.entry(cue.to_string()).or_default().push((*from, *to));
            }
        }
    }
    chains
}

#[test]
fn button_press_for_armed_cue_emits_exactly_its_actions() {
    let doc = "[roster]\nh1 hmd\nh2 hmd\nw1 wearable\n[assets]\nclip spatial-media duration=3000 uri=\"c\"\n\
               [scene s]\ncue a manual w1 go\n  play_media clip\n  buzz w1 double\ncue z operator_only\n  buzz w1 long\n";
    let graph = Arc::new(compile_timeline(&parse_script_text(doc).unwrap()).unwrap());
    let press = Event { seq: 1, at: 400, kind: EventKind::ButtonPress { device: "w1".into(), button: "go".into() } };
    let cmds = replay(graph, EngineConfig::default(), 0, &[stagelink_core::engine::ReplayInput::Event(press)]).unwrap();
    assert_eq!(cmds.len(), 2);
    assert!(cmds.iter().all(|c| c.cause == Cause::Event(1) && c.cue.as_ref().unwrap().as_str() == "a"));
    assert_eq!(
        cmds[0].kind,
        CommandKind::StartMedia {
            asset: "clip".into(),
            targets: vec!["h1".into(), "h2".into()],
            start_at: 550,
            seek_offset: 0
        }
    );
    assert_eq!(cmds[1].kind, CommandKind::Buzz { device: "w1".into(), pattern: stagelink_core::script::BuzzPattern::Double });
}

#[test]
fn empty_log_yields_init_commands_only() {
    let doc = "[roster]\nh1 hmd\n[assets]\nx audio duration=500 uri=\"x\"\n[scene s]\ncue a auto_after @start 0\n  play_media x\n";
    let graph = Arc::new(compile_timeline(&parse_script_text(doc).unwrap()).unwrap());
    let (_, init) = Engine::init(graph.clone(), EngineConfig::default(), 0).unwrap();
    let cmds = replay(graph, EngineConfig::default(), 0, &[]).unwrap();
    assert_eq!(cmds, init.commands);
    assert_eq!(cmds.len(), 1);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn replay_is_deterministic_and_matches_the_run(seed in any::<u64>()) {
        let (_, graph, run) = run(seed);
        let header = match &run.log[0] { LogLine::Header(h) => h.clone(), _ => unreachable!() };
        let inputs = replay_inputs(&run.log);
        let a = replay(graph.clone(), header.config(), header.start_at, &inputs).unwrap();
        let b = replay(graph.clone(), header.config(), header.start_at, &inputs).unwrap();
        prop_assert_eq!(&a, &b);
        prop_assert_eq!(&a, &commands(&run.log));
        prop_assert_eq!(replay_check(graph, &run.log).unwrap(), ReplayOutcome::Pass { commands: a.len() });
    }

    #[test]
    fn same_seed_same_bytes(seed in any::<u64>()) {
        let (_, _, a) = run(seed);
        let (_, _, b) = run(seed);
        prop_assert_eq!(to_jsonl(&a.log), to_jsonl(&b.log));
    }

    #[test]
    fn lifecycle_only_moves_forward(seed in any::<u64>()) {
        let (_, graph, run) = run(seed);
        for (cue, chain) in state_chains(&run.log) {
            let mut cur = CueState::Idle;
            for (from, to) in chain {
                prop_assert_eq!(from, cur, "cue {} record does not continue its chain", cue);
                prop_assert!(from.can_become(to), "cue {}: {} -> {}", cue, from, to);
                cur = to;
            }
        }
        if run.finished {
            let chains = state_chains(&run.log);
            for id in graph.cue_ids() {
                let last = chains.get(id.as_str()).and_then(|c| c.last()).map_or(CueState::Idle, |t| t.1);
                prop_assert!(
                    matches!(last, CueState::Completed | CueState::Skipped),
                    "finished show left `{}` {}", id, last
                );
            }
        }
    }

    #[test]
    fn sequence_numbers_and_times(seed in any::<u64>()) {
        let (_, _, run) = run(seed);
        let mut last_event: Option<(u64, i64)> = None;
        let mut last_cmd = 0;
        for l in &run.log {
            match l {
                LogLine::Event(e) => {
                    if let Some((s, at)) = last_event {
                        prop_assert!(e.seq > s);
                        prop_assert!(e.at >= at);
                    }
                    last_event = Some((e.seq, e.at));
                }
                LogLine::Command(c) => {
                    prop_assert!(c.id > last_cmd);
                    last_cmd = c.id;
                    if let CommandKind::StartMedia { start_at, .. } = c.kind {
                        prop_assert!(start_at >= c.issued_at);
                    }
                }
                _ => {}
            }
        }
    }

    #[test]
    fn content_end_buzzes_follow_the_final_media_end(seed in any::<u64>()) {
        let (_, graph, run) = run(seed);
        let evs = events(&run.log);
        for (i, l) in run.log.iter().enumerate() {
            let LogLine::Command(c) = l else { continue };
            if !matches!(c.kind, CommandKind::Buzz { .. }) { continue }
            let Some(cue) = &c.cue else { continue };
            let Trigger::ContentEnd { after } = &graph.cue_by_id(cue.as_str()).unwrap().trigger else { continue };
            match &c.cause {
                Cause::MediaTimeout(p) => prop_assert_eq!(p, after),
                Cause::Event(s) => match &evs[s].kind {
                    EventKind::OperatorCmd(_) => {}
                    EventKind::MediaEnded { cue: p, .. } => {
                        prop_assert_eq!(p, after);
                        // The predecessor completes while that event is processed,
                        // so it was the last report it was waiting for.
                        let start = run.log.iter().position(|l| matches!(l, LogLine::Event(e) if e.seq == *s)).unwrap();
                        let completed = run.log[start..i].iter().any(|l| matches!(l,
                            LogLine::Record(r) if matches!(&r.kind,
                                RecordKind::CueState { cue, to: CueState::Completed, .. } if cue == after)));
                        prop_assert!(completed, "buzz {} caused by a non-final media end", c.id);
                    }
                    other => prop_assert!(false, "buzz {} of content_end cue caused by {:?}", c.id, other),
                },
                other => prop_assert!(false, "buzz {} of content_end cue caused by {:?}", c.id, other),
            }
        }
    }

    #[test]
    fn each_started_clip_resolves_at_most_once_per_device(seed in any::<u64>()) {
        let (_, _, run) = run(seed);
        let ignored: BTreeSet<u64> = run.log.iter().filter_map(|l| match l {
            LogLine::Record(r) => match &r.kind { RecordKind::Ignored { event, .. } => Some(*event), _ => None },
            _ => None,
        }).collect();
        let mut started: BTreeSet<(String, String, String)> = BTreeSet::new();
        let mut resolutions: BTreeMap<(String, String, String), usize> = BTreeMap::new();
        let mut states: BTreeMap<String, CueState> = BTreeMap::new();
        for l in &run.log {
            match l {
                LogLine::Command(c) => match (&c.kind, &c.cue) {
                    (CommandKind::StartMedia { asset, targets, .. }, Some(cue)) => {
                        for d in targets {
                            started.insert((cue.to_string(), asset.to_string(), d.to_string()));
                        }
                    }
                    // Only a skip resolves pending media by stopping it; a
                    // stop_media action is a request the device answers with
                    // its own end report.
                    (CommandKind::StopMedia { asset, targets }, Some(cue))
                        if states.get(cue.as_str()) == Some(&CueState::Skipped) =>
                    {
                        for d in targets {
                            let key = (cue.to_string(), asset.to_string(), d.to_string());
                            if started.contains(&key) {
                                *resolutions.entry(key).or_default() += 1;
                            }
                        }
                    }
                    _ => {}
                },
                LogLine::Event(e) if !ignored.contains(&e.seq) => {
                    if let EventKind::MediaEnded { device, asset, cue } = &e.kind {
                        *resolutions.entry((cue.to_string(), asset.to_string(), device.to_string())).or_default() += 1;
                    }
                }
                LogLine::Record(r) => match &r.kind {
                    RecordKind::MediaTimeout { cue, missing } => {
                        for (d, a) in missing {
                            *resolutions.entry((cue.to_string(), a.to_string(), d.to_string())).or_default() += 1;
                        }
                    }
                    RecordKind::CueState { cue, to, .. } => {
                        states.insert(cue.to_string(), *to);
                    }
                    _ => {}
                },
                _ => {}
            }
        }
        for (key, n) in resolutions {
            prop_assert!(n <= 1, "{:?} resolved {} times", key, n);
        }
    }
}

/// Commands with their identity and time of issue stripped; `start_at` is
/// kept relative to issue.
fn normalized(cmds: &[Command]) -> Vec<String> {
    let mut v: Vec<String> = cmds
        .iter()
        .map(|c| {
            let kind = match &c.kind {
                CommandKind::StartMedia { asset, targets, start_at, seek_offset } => CommandKind::StartMedia {
                    asset: asset.clone(),
                    targets: targets.clone(),
                    start_at: start_at - c.issued_at,
                    seek_offset: *seek_offset,
                },
                k => k.clone(),
            };
            format!("{:?} {:?} {:?}", c.cause, c.cue, kind)
        })
        .collect();
    v.sort();
    v
}

fn trigger_events(script: &ShowScript, seed: u64) -> Vec<Event> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let wearables: Vec<_> = script.roster.iter().filter(|d| d.role == Role::Wearable).collect();
    let hmds: Vec<_> = script.hmds().collect();
    let mut at = 0;
    (0..rng.random_range(1..=12))
        .map(|i| {
            at += rng.random_range(1..=400);
            let kind = if script.colliders.is_empty() || rng.random_bool(0.6) {
                EventKind::ButtonPress {
                    device: wearables.choose(&mut rng).unwrap().id.clone(),
                    button: ["go", "next"].choose(&mut rng).unwrap().to_string(),
                }
            } else {
                EventKind::ColliderTransition {
                    collider: script.colliders.choose(&mut rng).unwrap().id.clone(),
                    device: hmds.choose(&mut rng).unwrap().id.clone(),
                    crossing: if rng.random_bool(0.5) { Crossing::Enter } else { Crossing::Exit },
                }
            };
            // seq 1 is reserved for the hold in the held run
            Event { seq: i + 2, at, kind }
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    /// Hold, trigger events, Resume: the same commands as without the hold,
    /// up to the resume. The window stops before any timer falls due or any
    /// scene change in the unheld run, where timing would leak in.
    #[test]
    fn hold_then_resume_is_transparent(seed in any::<u64>(), ev_seed in any::<u64>()) {
        let (script, _) = random_case(seed);
        let graph = Arc::new(compile_timeline(&script).unwrap());
        let cfg = EngineConfig::default();
        let evs = trigger_events(&script, ev_seed);

        let (mut plain, init) = Engine::init(graph.clone(), cfg, 0).unwrap();
        let mut plain_cmds = init.commands.clone();
        let mut window = 0;
        for ev in &evs {
            if plain.is_finished() || plain.next_deadline().is_some_and(|d| d <= ev.at) {
                break;
            }
            let before = plain.current_scene().clone();
            let mut probe = plain.clone();
            probe.tick(ev.at);
            let out = probe.handle_event(ev).unwrap();
            if probe.current_scene() != &before || probe.is_finished()
                || probe.next_deadline().is_some_and(|d| d <= ev.at) {
                break;
            }
            plain = probe;
            plain_cmds.extend(out.commands);
            window += 1;
        }
        let resume_at = if window == 0 { 0 } else { evs[window - 1].at };

        let (mut held, init) = Engine::init(graph, cfg, 0).unwrap();
        let mut held_cmds = init.commands;
        let hold = Event { seq: 1, at: 0, kind: EventKind::OperatorCmd(OperatorCmd::Hold) };
        held_cmds.extend(held.handle_event(&hold).unwrap().commands);
        for ev in &evs[..window] {
            held_cmds.extend(held.tick(ev.at).commands);
            held_cmds.extend(held.handle_event(ev).unwrap().commands);
        }
        let resume = Event { seq: 100, at: resume_at, kind: EventKind::OperatorCmd(OperatorCmd::Resume) };
        held_cmds.extend(held.tick(resume_at).commands);
        held_cmds.extend(held.handle_event(&resume).unwrap().commands);

        prop_assert_eq!(normalized(&held_cmds), normalized(&plain_cmds));
        prop_assert_eq!(&held.state().cue_states, &plain.state().cue_states);
    }
}
