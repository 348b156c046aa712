use super::*;
use crate::engine::{Cause, SnapshotPayload};
use crate::script::{Shape, Role};
use crate::spatial::Crossing;

fn roster() -> Vec<DeviceDecl> {
    vec![
        DeviceDecl { id: "h1".into(), role: Role::Hmd, label: String::new(), loc: Default::default() },
        DeviceDecl { id: "w1".into(), role: Role::Wearable, label: String::new(), loc: Default::default() },
    ]
}

fn gateway() -> Gateway {
    let mut ball = ColliderDecl::new("ball", Shape::Sphere { center: [0.0; 3], radius: 1.0 });
    ball.debounce_ms = 0;
    Gateway::new(&roster(), vec![ball], GatewayConfig::default())
}

fn hello(id: &str, role: &str) -> Message {
    Message::new(1, 0, Body::Hello { device_id: id.into(), role: role.into() })
}

fn rejected(out: &GatewayOutput) -> Vec<&str> {
    out.notes
        .iter()
        .filter_map(|n| match n {
            Note::Rejected { code, .. } | Note::Ignored { code, .. } => Some(code.as_str()),
            _ => None,
        })
        .collect()
}

#[test]
fn registration_checks_roster_and_role() {
    let mut g = gateway();
    assert_eq!(rejected(&g.inbound(1, hello("h1", "pilot"), 0)), ["E_UNKNOWN_ROLE"]);
    assert_eq!(rejected(&g.inbound(1, hello("h9", "hmd"), 0)), ["E_ROSTER_MISMATCH"]);
    assert_eq!(rejected(&g.inbound(1, hello("w1", "hmd"), 0)), ["E_ROSTER_MISMATCH"]);
    let ok = g.inbound(1, hello("h1", "hmd"), 0);
    assert_eq!(ok.events[0].kind, EventKind::DeviceJoined { device: "h1".into() });
    let op = g.inbound(2, hello("desk", "operator"), 0);
    assert!(op.events.is_empty());
    assert!(rejected(&op).is_empty());
}

#[test]
fn messages_before_hello_are_ignored() {
    let mut g = gateway();
    let out = g.inbound(1, Message::new(1, 0, Body::Button { button_id: "go".into() }), 0);
    assert_eq!(rejected(&out), ["E_NOT_REGISTERED"]);
    assert!(out.events.is_empty());
}

#[test]
fn seq_is_global_and_increasing() {
    let mut g = gateway();
    let a = g.inbound(1, hello("h1", "hmd"), 0).events[0].seq;
    let b = g.inbound(2, hello("w1", "wearable"), 1).events[0].seq;
    let c = g.inbound(2, Message::new(2, 2, Body::Button { button_id: "go".into() }), 2).events[0].seq;
    let d = g.submit_operator(OperatorCmd::Hold, 3).seq;
    assert!(a < b && b < c && c < d);
}

#[test]
fn pose_becomes_collider_transition() {
    let mut g = gateway();
    g.inbound(1, hello("h1", "hmd"), 0);
    let out = g.inbound(1, Message::new(2, 0, Body::Pose { x: 0.0, y: 0.0, z: 0.0 }), 10);
    assert_eq!(
        out.events[0].kind,
        EventKind::ColliderTransition { collider: "ball".into(), device: "h1".into(), crossing: Crossing::Enter }
    );
}

#[test]
fn liveness_is_edge_triggered() {
    let mut g = gateway();
    g.inbound(1, hello("h1", "hmd"), 0);
    assert!(g.liveness_sweep(3000).events.is_empty());
    let out = g.liveness_sweep(3001);
    assert_eq!(out.events[0].kind, EventKind::DeviceLeft { device: "h1".into() });
    assert!(g.liveness_sweep(5000).events.is_empty());
    let back = g.inbound(1, Message::new(2, 0, Body::Heartbeat), 5100);
    assert_eq!(back.events[0].kind, EventKind::DeviceJoined { device: "h1".into() });
}

#[test]
fn ping_burst_then_slow() {
    let mut g = gateway();
    g.inbound(1, hello("h1", "hmd"), 0);
    let mut times = Vec::new();
    let mut now = 0;
    while times.len() < 9 {
        now = g.next_deadline().unwrap().max(now);
        for o in g.poll(now).outbound {
            if let Body::Ping { t0 } = o.msg.body {
                times.push(t0);
            }
        }
        // keep the session alive
        g.inbound(1, Message::new(0, 0, Body::Heartbeat), now);
    }
    assert_eq!(times, [0, 50, 100, 150, 200, 250, 300, 350, 10_350]);
}

#[test]
fn dispatch_shifts_start_into_device_clock() {
    let mut g = gateway();
    g.inbound(1, hello("h1", "hmd"), 0);
    g.inbound(1, Message::new(2, 0, Body::Pong { t0: 100, t1: 420, t2: 420 }), 140);
    let cmd = Command {
        id: 7,
        issued_at: 200,
        cause: Cause::Init,
        cue: Some("c".into()),
        kind: CommandKind::StartMedia { asset: "a".into(), targets: vec!["h1".into(), "h2".into()], start_at: 350, seek_offset: 0 },
    };
    let out = g.dispatch(&cmd, 200);
    match &out.outbound[0].msg.body {
        Body::StartMedia { start_at, .. } => assert_eq!(*start_at, 650),
        other => panic!("{other:?}"),
    }
    assert!(out.notes.contains(&Note::Dispatched {
        command: 7,
        device: "h1".into(),
        device_start_at: Some(650),
        confidence: Some(20)
    }));
    assert!(matches!(&out.notes[1], Note::Undeliverable { device, .. } if device.as_str() == "h2"));
    assert!(!out.notes.iter().any(|n| matches!(n, Note::NoTargets { .. })));
}

#[test]
fn nobody_connected_is_no_targets() {
    let mut g = gateway();
    let cmd = Command {
        id: 3,
        issued_at: 0,
        cause: Cause::Init,
        cue: Some("c".into()),
        kind: CommandKind::StartMedia { asset: "a".into(), targets: vec!["h1".into(), "h2".into()], start_at: 150, seek_offset: 0 },
    };
    let out = g.dispatch(&cmd, 0);
    assert!(out.outbound.is_empty());
    assert_eq!(out.notes.len(), 3);
    assert!(out.notes[..2].iter().all(|n| matches!(n, Note::Undeliverable { .. })));
    assert_eq!(out.notes[2], Note::NoTargets { command: 3 });
}

#[test]
fn snapshot_reaches_device() {
    let mut g = gateway();
    g.inbound(1, hello("h1", "hmd"), 0);
    let cmd = Command {
        id: 1,
        issued_at: 0,
        cause: Cause::Event(1),
        cue: None,
        kind: CommandKind::Snapshot { device: "h1".into(), payload: SnapshotPayload { scene: "s".into(), media: vec![] } },
    };
    let out = g.dispatch(&cmd, 0);
    assert_eq!(out.outbound[0].msg.body.type_name(), "snapshot");
}

#[test]
fn disconnect_and_reconnect() {
    let mut g = gateway();
    g.inbound(1, hello("h1", "hmd"), 0);
    let out = g.disconnect(1, 10);
    assert_eq!(out.events[0].kind, EventKind::DeviceLeft { device: "h1".into() });
    let back = g.inbound(2, hello("h1", "hmd"), 20);
    assert!(matches!(back.notes[0], Note::Registered { reconnect: true, .. }));
    assert_eq!(g.device_of(2).map(|d| d.as_str()), Some("h1"));
    assert!(g.disconnect(1, 30).events.is_empty());
}
