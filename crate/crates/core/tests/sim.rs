use std::path::{Path, PathBuf};
use std::sync::Arc;

use proptest::prelude::*;
use stagelink_core::engine::{Cause, Command, CommandKind, CueState, EventKind, OperatorCmd, RecordKind};
use stagelink_core::gateway::Note;
use stagelink_core::runlog::{parse_log, replay_check, to_jsonl, GatewayLine, Header, LogError, LogLine, ReplayOutcome};
use stagelink_core::script::{compile_timeline, load_script, parse_script};
use stagelink_core::sim::{
    compute_metrics, load_scenario, parse_scenario, random_case, scenario_to_text, simulate, OperatorAction, Scenario,
};

const SMOKE: &str = r#"title "Smoke"

[roster]
h1 hmd

[assets]
clip spatial-media duration=1000 uri="clip.glb"

[scene only]
cue go operator_only blocking
  play_media clip
"#;

fn smoke_scenario() -> Scenario {
    let mut sc = parse_scenario("script \"smoke.show\"\nnetwork delay=10 jitter=0\n").unwrap();
    sc.operator.push(OperatorAction { at: 1000, cmd: OperatorCmd::Fire { cue: "go".into() } });
    sc
}

fn shows() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../shows")
}

/// One operator fire, one honest HMD on a 10 ms link: the hello lands at
/// 10, the fire at 1000 starts the clip at 1150 (lead 150), it ends at
/// 2150 and the report lands at 2160.
#[test]
fn smoke_run_holds_exactly_the_expected_lines() {
    let run = simulate(&parse_script(SMOKE).unwrap(), &smoke_scenario()).unwrap();
    assert!(run.finished);
    assert_eq!(run.end_at, 2160);

    let events: Vec<_> = run
        .log
        .iter()
        .filter_map(|l| match l {
            LogLine::Event(e) => Some((e.seq, e.at, e.kind.clone())),
            _ => None,
        })
        .collect();
    assert_eq!(
        events,
        vec![
            (1, 10, EventKind::DeviceJoined { device: "h1".into() }),
            (2, 1000, EventKind::OperatorCmd(OperatorCmd::Fire { cue: "go".into() })),
            (3, 2160, EventKind::MediaEnded { device: "h1".into(), asset: "clip".into(), cue: "go".into() }),
        ]
    );

    let commands: Vec<_> = run.log.iter().filter_map(|l| if let LogLine::Command(c) = l { Some(c.clone()) } else { None }).collect();
    assert_eq!(
        commands,
        vec![Command {
            id: 1,
            issued_at: 1000,
            cause: Cause::Event(2),
            cue: Some("go".into()),
            kind: CommandKind::StartMedia { asset: "clip".into(), targets: vec!["h1".into()], start_at: 1150, seek_offset: 0 },
        }]
    );

    let states: Vec<_> = run
        .log
        .iter()
        .filter_map(|l| match l {
            LogLine::Record(r) => match &r.kind {
                RecordKind::CueState { to, .. } => Some((r.at, *to)),
                RecordKind::ShowFinished => Some((r.at, CueState::Completed)),
                _ => None,
            },
            _ => None,
        })
        .collect();
    assert_eq!(
        states,
        [(0, CueState::Armed), (1000, CueState::Running), (2160, CueState::Completed), (2160, CueState::Completed)]
    );
    assert!(run.log.iter().all(|l| !matches!(l, LogLine::Record(r) if matches!(r.kind, RecordKind::Ignored { .. }))));
}

#[test]
fn demo_shows_run_twice_to_identical_bytes_and_replay() {
    for (scenario, script) in
        [("house_visit.scenario", "house_visit.show"), ("manor_tour.scenario.json", "manor_tour.show.json")]
    {
        let sc = load_scenario(&shows().join(scenario)).unwrap();
        let script = load_script(&shows().join(script)).unwrap();
        let a = simulate(&script, &sc).unwrap();
        let b = simulate(&script, &sc).unwrap();
        assert!(a.finished, "{scenario}");
        assert_eq!(to_jsonl(&a.log), to_jsonl(&b.log), "{scenario}");
        let graph = Arc::new(compile_timeline(&script).unwrap());
        assert!(matches!(replay_check(graph, &a.log).unwrap(), ReplayOutcome::Pass { .. }), "{scenario}");
    }
}

fn header() -> LogLine {
    LogLine::Header(Header { version: 1, title: "t".into(), start_at: 0, lead_ms: 150, grace_ms: 2000, seed: None })
}

fn start(id: u64, targets: &[&str], start_at: i64) -> LogLine {
    LogLine::Command(Command {
        id,
        issued_at: start_at - 150,
        cause: Cause::Init,
        cue: Some("c".into()),
        kind: CommandKind::StartMedia {
            asset: "a".into(),
            targets: targets.iter().map(|&t| t.into()).collect(),
            start_at,
            seek_offset: 0,
        },
    })
}

fn dispatched(command: u64, device: &str, device_start_at: i64, confidence: i64) -> LogLine {
    LogLine::Gateway(GatewayLine {
        at: 0,
        note: Note::Dispatched {
            command,
            device: device.into(),
            device_start_at: Some(device_start_at),
            confidence: Some(confidence),
        },
    })
}

#[test]
fn single_target_start_has_no_spread() {
    let lines = vec![header(), start(1, &["h1"], 5000), dispatched(1, "h1", 5000, 3)];
    let r = compute_metrics(&lines, &Scenario::new("x")).unwrap();
    assert_eq!(r.skew.len(), 1);
    assert_eq!((r.skew[0].devices, r.skew[0].skew_ms), (1, 0));
    assert_eq!(r.max_skew_ms, Some(0));
}

#[test]
fn perfectly_corrected_starts_have_zero_skew() {
    let sc = parse_scenario(
        "script \"x\"\n[device h1]\nclock_offset 120\n[device h2]\nclock_offset -300\n[device h3]\nclock_offset 0\n",
    )
    .unwrap();
    // each device_start_at is 5000 plus that device's injected offset
    let lines = vec![
        header(),
        start(1, &["h1", "h2", "h3"], 5000),
        dispatched(1, "h1", 5120, 4),
        dispatched(1, "h2", 4700, 6),
        dispatched(1, "h3", 5000, 5),
    ];
    let r = compute_metrics(&lines, &sc).unwrap();
    assert_eq!(r.skew.len(), 1);
    assert_eq!(r.skew[0].skew_ms, 0);
    assert_eq!(r.skew[0].devices, 3);
    assert_eq!(r.skew[0].max_confidence, Some(6));

    // a device told 7 ms late shows up as 7 ms of skew
    let mut late = lines.clone();
    late[4] = dispatched(1, "h3", 5007, 5);
    assert_eq!(compute_metrics(&late, &sc).unwrap().max_skew_ms, Some(7));
}

fn smoke_log() -> String {
    to_jsonl(&simulate(&parse_script(SMOKE).unwrap(), &smoke_scenario()).unwrap().log)
}

#[test]
fn truncated_line_is_malformed_with_its_number() {
    let text = smoke_log();
    let mut lines: Vec<&str> = text.lines().collect();
    let cut = &lines[4][..lines[4].len() / 2];
    lines[4] = cut;
    let err = parse_log(&lines.join("\n")).unwrap_err();
    assert_eq!(err.code(), "E_MALFORMED_LOG");
    assert!(matches!(err, LogError::Malformed { line: 5, .. }), "{err:?}");
}

#[test]
fn replay_passes_then_finds_the_edited_command() {
    let graph = Arc::new(compile_timeline(&parse_script(SMOKE).unwrap()).unwrap());
    let lines = parse_log(&smoke_log()).unwrap();
    assert_eq!(replay_check(graph.clone(), &lines).unwrap(), ReplayOutcome::Pass { commands: 1 });

    let edited: Vec<LogLine> = lines
        .into_iter()
        .map(|l| match l {
            LogLine::Command(mut c) => {
                if let CommandKind::StartMedia { start_at, .. } = &mut c.kind {
                    *start_at += 1;
                }
                LogLine::Command(c)
            }
            other => other,
        })
        .collect();
    let reparsed = parse_log(&to_jsonl(&edited)).unwrap();
    match replay_check(graph, &reparsed).unwrap() {
        ReplayOutcome::Divergence { seq, logged, replayed } => {
            assert_eq!(seq, 1);
            assert_ne!(logged, replayed);
        }
        other => panic!("expected a divergence, got {other:?}"),
    }
}

#[test]
fn events_out_of_order_are_malformed() {
    let text = smoke_log();
    let mut lines: Vec<&str> = text.lines().collect();
    let events: Vec<usize> = (0..lines.len()).filter(|&i| lines[i].starts_with("{\"type\":\"event\"")).collect();
    lines.swap(events[0], events[1]);
    let err = parse_log(&lines.join("\n")).unwrap_err();
    assert!(matches!(err, LogError::Malformed { line, .. } if line == events[1] + 1), "{err:?}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn scenario_text_and_json_round_trip(seed in any::<u64>()) {
        let (_, sc) = random_case(seed);
        let text = scenario_to_text(&sc);
        prop_assert_eq!(&parse_scenario(&text).unwrap(), &sc);
        prop_assert_eq!(scenario_to_text(&parse_scenario(&text).unwrap()), text);
        prop_assert_eq!(parse_scenario(&serde_json::to_string(&sc).unwrap()).unwrap(), sc);
    }
}
