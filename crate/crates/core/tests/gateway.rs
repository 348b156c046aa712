use proptest::prelude::*;
use stagelink_core::engine::{Cause, Command, CommandKind, EventKind};
use stagelink_core::gateway::{estimate, ClockSample, Disposition, Gateway, GatewayConfig, Note};
use stagelink_core::protocol::{decode, encode, frame, Body, FrameDecoder, FrameError, Message, SnapshotEntry, MAX_FRAME};
use stagelink_core::script::{DeviceDecl, Role};

fn decl(id: &str, role: Role) -> DeviceDecl {
    DeviceDecl { id: id.into(), role, label: String::new(), loc: Default::default() }
}

fn roster() -> Vec<DeviceDecl> {
    vec![decl("h1", Role::Hmd), decl("h2", Role::Hmd), decl("h3", Role::Hmd), decl("h4", Role::Hmd), decl("w1", Role::Wearable)]
}

fn hello(id: &str, role: &str) -> Message {
    Message::new(1, 0, Body::Hello { device_id: id.into(), role: role.into() })
}

#[test]
fn empty_object_names_type_first() {
    let err = decode(&frame(b"{}").unwrap()).unwrap_err();
    assert_eq!(err, FrameError::MissingField("type"));
    assert_eq!(err.code(), "E_MISSING_FIELD");
}

#[test]
fn oversize_header_is_refused() {
    let mut buf = ((MAX_FRAME + 1) as u32).to_be_bytes().to_vec();
    buf.extend_from_slice(b"{}");
    assert_eq!(decode(&buf).unwrap_err().code(), "E_OVERSIZE");
}

#[test]
fn symmetric_exchange_recovers_the_injected_offset() {
    let s = ClockSample { t0: 0, t1: 105, t2: 105, t3: 10 };
    assert_eq!(s.offset(), 100);
    assert_eq!(s.rtt(), 10);
}

#[test]
fn minimum_rtt_sample_wins() {
    let mut samples: Vec<ClockSample> = (0..7)
        .map(|i| {
            let t0 = i * 1000;
            // 30 ms up, 10 ms down: offset reads 10 high
            ClockSample { t0, t1: t0 + 30, t2: t0 + 31, t3: t0 + 41 }
        })
        .collect();
    samples.insert(4, ClockSample { t0: 9000, t1: 9042, t2: 9042, t3: 9004 });
    let e = estimate(&samples).unwrap();
    assert_eq!(e.offset, 40);
    assert_eq!(e.rtt, 4);
    assert_eq!(e.confidence, 2);
}

/// Register the four HMDs with the given clock offsets, each answering one
/// ping over a symmetric 5 ms link.
fn synced_gateway(offsets: [i64; 4]) -> Gateway {
    let mut g = Gateway::new(&roster(), Vec::new(), GatewayConfig::default());
    for i in 0..offsets.len() {
        g.inbound(i as u64 + 1, hello(&format!("h{}", i + 1), "hmd"), 0);
    }
    let pings = g.poll(0).outbound;
    assert_eq!(pings.len(), 4);
    for (i, p) in pings.iter().enumerate() {
        let Body::Ping { t0 } = p.msg.body else { panic!() };
        let t1 = t0 + 5 + offsets[i];
        let pong = Message::new(2, t1, Body::Pong { t0, t1, t2: t1 });
        g.inbound(p.conn, pong, t0 + 10);
    }
    g
}

#[test]
fn start_times_shift_into_each_device_clock() {
    let mut g = synced_gateway([0, 20, -15, 5]);
    let targets = ["h1", "h2", "h3", "h4"].map(Into::into).to_vec();
    let cmd = Command {
        id: 1,
        issued_at: 4850,
        cause: Cause::Init,
        cue: Some("c".into()),
        kind: CommandKind::StartMedia { asset: "a".into(), targets, start_at: 5000, seek_offset: 0 },
    };
    let out = g.dispatch(&cmd, 4850);
    let starts: Vec<i64> = out
        .outbound
        .iter()
        .map(|o| match o.msg.body {
            Body::StartMedia { start_at, .. } => start_at,
            _ => panic!(),
        })
        .collect();
    assert_eq!(starts, [5000, 5020, 4985, 5005]);
    for n in &out.notes {
        let Note::Dispatched { confidence, .. } = n else { panic!("{n:?}") };
        assert_eq!(*confidence, Some(5));
    }
}

#[test]
fn second_hello_replaces_the_session() {
    let mut g = Gateway::new(&roster(), Vec::new(), GatewayConfig::default());
    g.inbound(1, hello("h1", "hmd"), 0);
    let out = g.inbound(2, hello("h1", "hmd"), 500);
    assert!(matches!(out.notes[0], Note::Registered { conn: 2, reconnect: true, .. }));
    assert_eq!(out.events[0].kind, EventKind::DeviceJoined { device: "h1".into() });
    assert_eq!(g.session("h1").unwrap().conn, Some(2));
    let stale = g.inbound(1, Message::new(2, 0, Body::Heartbeat), 600);
    assert_eq!(stale.disposition, Some(Disposition::Ignored));
}

#[test]
fn liveness_threshold_boundaries() {
    let mut g = Gateway::new(&roster(), Vec::new(), GatewayConfig::default());
    g.inbound(1, hello("w1", "wearable"), 0);
    assert!(g.liveness_sweep(2999).events.is_empty());
    assert!(g.liveness_sweep(3000).events.is_empty());
    let left = g.liveness_sweep(3001);
    assert_eq!(left.events.len(), 1);
    assert_eq!(left.events[0].kind, EventKind::DeviceLeft { device: "w1".into() });
    assert!(g.liveness_sweep(9000).events.is_empty());
}

fn text() -> impl Strategy<Value = String> {
    "[a-z0-9_é\"\\\\ ]{0,12}"
}

fn body() -> impl Strategy<Value = Body> {
    let t = -1_000_000i64..1_000_000;
    prop_oneof![
        (text(), text()).prop_map(|(device_id, role)| Body::Hello { device_id, role }),
        Just(Body::Heartbeat),
        (t.clone(), t.clone(), t.clone()).prop_map(|(t0, t1, t2)| Body::Pong { t0, t1, t2 }),
        text().prop_map(|button_id| Body::Button { button_id }),
        (-1e6f64..1e6, -1e6f64..1e6, -1e6f64..1e6).prop_map(|(x, y, z)| Body::Pose { x, y, z }),
        (text(), text()).prop_map(|(asset_id, cue_id)| Body::MediaEnded { asset_id, cue_id }),
        any::<u64>().prop_map(|ack_seq| Body::Ack { ack_seq: ack_seq >> 12 }),
        t.clone().prop_map(|t0| Body::Ping { t0 }),
        (text(), text(), t.clone(), 0i64..100_000)
            .prop_map(|(asset_id, cue_id, start_at, seek_offset)| Body::StartMedia { asset_id, cue_id, start_at, seek_offset }),
        (text(), text()).prop_map(|(asset_id, cue_id)| Body::StopMedia { asset_id, cue_id }),
        text().prop_map(|pattern| Body::Buzz { pattern }),
        (text(), prop::collection::vec((text(), text(), 0i64..100_000), 0..4)).prop_map(|(scene_id, m)| Body::Snapshot {
            scene_id,
            media: m.into_iter().map(|(asset_id, cue_id, seek_offset)| SnapshotEntry { asset_id, cue_id, seek_offset }).collect(),
        }),
    ]
}

fn message() -> impl Strategy<Value = Message> {
    (0u64..1 << 40, -1_000_000i64..1_000_000_000, body()).prop_map(|(seq, ts, body)| Message::new(seq, ts, body))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn frames_round_trip(msg in message()) {
        let bytes = encode(&msg).unwrap();
        let (back, used) = decode(&bytes).unwrap();
        prop_assert_eq!(used, bytes.len());
        prop_assert_eq!(back, msg);
    }

    #[test]
    fn stream_decoder_reassembles_any_split(msgs in prop::collection::vec(message(), 1..6), cut in any::<prop::sample::Index>()) {
        let bytes: Vec<u8> = msgs.iter().flat_map(|m| encode(m).unwrap()).collect();
        let at = cut.index(bytes.len() + 1);
        let mut d = FrameDecoder::new();
        let mut got = Vec::new();
        for part in [&bytes[..at], &bytes[at..]] {
            d.push(part);
            while let Some(m) = d.next_message() {
                got.push(m.unwrap());
            }
        }
        prop_assert_eq!(got, msgs);
    }

    #[test]
    fn arbitrary_bytes_never_panic(bytes in prop::collection::vec(any::<u8>(), 0..300)) {
        let _ = decode(&bytes);
        let mut d = FrameDecoder::new();
        d.push(&bytes);
        while d.next_message().is_some() {}
    }

    #[test]
    fn arbitrary_json_objects_are_messages_or_errors(payload in "\\{(\"(type|seq|ts|t0|x|device_id|role)\":(\"[a-z]{0,6}\"|-?[0-9]{1,4}|null|\\[\\]),?){0,5}\\}") {
        let _ = decode(&frame(payload.as_bytes()).unwrap());
    }

    /// Every payload gets exactly one disposition, consistent with the output,
    /// and event seqs stay strictly increasing across interleaved connections.
    #[test]
    fn inbound_is_never_silent(steps in prop::collection::vec((0u64..4, 0usize..9, any::<u8>()), 1..80)) {
        let mut g = Gateway::new(&roster(), Vec::new(), GatewayConfig::default());
        let ids = ["h1", "h2", "w1", "desk"];
        let mut last_seq = 0;
        for (i, (conn, kind, noise)) in steps.into_iter().enumerate() {
            let now = i as i64 * 10;
            let body = match kind {
                0 => Body::Hello {
                    device_id: ids[conn as usize].into(),
                    role: ["hmd", "hmd", "wearable", "operator"][conn as usize].into(),
                },
                1 => Body::Heartbeat,
                2 => Body::Button { button_id: "go".into() },
                3 => Body::Pose { x: noise as f64, y: 0.0, z: 0.0 },
                4 => Body::MediaEnded { asset_id: "a".into(), cue_id: "c".into() },
                5 => Body::Pong { t0: now - 5, t1: now, t2: now },
                6 => Body::Buzz { pattern: "short".into() },
                _ => Body::Ack { ack_seq: noise as u64 },
            };
            let out = if kind == 8 {
                g.inbound_payload(conn, &[noise, b'{'], now)
            } else {
                g.inbound(conn, Message::new(i as u64, now, body), now)
            };
            let d = out.disposition.unwrap();
            let ignored = out.notes.iter().any(|n| matches!(n, Note::Ignored { .. } | Note::Rejected { .. }));
            match d {
                Disposition::Event => prop_assert!(!out.events.is_empty()),
                Disposition::Ignored | Disposition::FrameError => prop_assert!(out.events.is_empty() && ignored),
                Disposition::Absorbed => prop_assert!(out.events.is_empty() && !ignored),
            }
            for e in &out.events {
                prop_assert!(e.seq > last_seq);
                last_seq = e.seq;
            }
        }
    }

    /// With symmetric delays the estimate recovers the injected offset
    /// exactly, and the minimum-RTT sample is the one chosen.
    #[test]
    fn offset_estimate_matches_brute_force(
        offset in -500i64..=500,
        exchanges in prop::collection::vec((0i64..100_000, 0i64..60, 0i64..5), 1..10),
    ) {
        let samples: Vec<ClockSample> = exchanges
            .iter()
            .map(|&(t0, d, hold)| {
                let t1 = t0 + d + offset;
                let t2 = t1 + hold;
                ClockSample { t0, t1, t2, t3: t2 - offset + d }
            })
            .collect();
        let e = estimate(&samples).unwrap();
        prop_assert_eq!(e.offset, offset);
        let best = exchanges.iter().map(|&(_, d, _)| 2 * d).min().unwrap();
        prop_assert_eq!(e.rtt, best);
        prop_assert_eq!(e.confidence, (best + 1) / 2);
    }
}
