//! Seeded random shows and scenarios for sweeps and replay checks.
//!
//! Generated scripts always validate and compile; scenarios exercise
//! clock offsets, jitter, unreliable media reports, outages, button
//! presses, collider paths and operator interventions.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::scenario::{MediaFidelity, Network, OperatorAction, Outage, Press, Scenario, SimDevice, Waypoint};
use crate::engine::OperatorCmd;
use crate::ids::{CueId, DeviceId};
use crate::script::{
    Action, AssetDecl, AssetKind, BuzzPattern, ColliderDecl, Cue, DeviceDecl, Phase, Role, Scene, Shape, ShowScript,
    Targets, Trigger,
};

const BUTTONS: [&str; 2] = ["go", "next"];
pub const GENERATED_SCRIPT: &str = "generated.show";

pub fn random_case(seed: u64) -> (ShowScript, Scenario) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let script = random_script(&mut rng, seed);
    let scenario = random_scenario(&mut rng, &script, seed);
    (script, scenario)
}

fn random_script(rng: &mut ChaCha8Rng, seed: u64) -> ShowScript {
    let hmds: Vec<DeviceId> = (1..=rng.random_range(1..=4)).map(|i| format!("h{i}").into()).collect();
    let wearables: Vec<DeviceId> = (1..=rng.random_range(1..=2)).map(|i| format!("w{i}").into()).collect();
    let roster = hmds
        .iter()
        .map(|id| (id, Role::Hmd))
        .chain(wearables.iter().map(|id| (id, Role::Wearable)))
        .map(|(id, role)| DeviceDecl { id: id.clone(), role, label: String::new(), loc: Default::default() })
        .collect();
    let assets: Vec<AssetDecl> = (1..=rng.random_range(1..=3))
        .map(|i| AssetDecl {
            id: format!("a{i}").into(),
            kind: if rng.random_bool(0.5) { AssetKind::SpatialMedia } else { AssetKind::Audio },
            duration_ms: rng.random_range(500..=8000),
            uri: format!("media/a{i}.bin"),
            loc: Default::default(),
        })
        .collect();
    let colliders: Vec<ColliderDecl> = (1..=rng.random_range(0..=2))
        .map(|i| {
            let c = [rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0), 0.0];
            let shape = if rng.random_bool(0.5) {
                Shape::Sphere { center: c, radius: rng.random_range(0.5..2.0) }
            } else {
                let h = rng.random_range(0.5..2.0);
                Shape::Box { min: [c[0] - h, c[1] - h, -1.0], max: [c[0] + h, c[1] + h, 1.0] }
            };
            ColliderDecl::new(format!("z{i}"), shape)
        })
        .collect();

    let n_scenes: usize = rng.random_range(1..=3);
    let mut scenes = Vec::new();
    let mut cue_no = 0;
    for si in 0..n_scenes {
        let phase = match si {
            0 if n_scenes > 1 && rng.random_bool(0.5) => Phase::Onboarding,
            s if s == n_scenes - 1 && n_scenes > 1 && rng.random_bool(0.5) => Phase::Offboarding,
            _ => Phase::Main,
        };
        let mut cues: Vec<Cue> = Vec::new();
        for _ in 0..rng.random_range(1..=5) {
            cue_no += 1;
            let id: CueId = format!("c{cue_no}").into();
            let blocking_earlier: Vec<CueId> = cues.iter().filter(|c| c.blocking).map(|c| c.id.clone()).collect();
            let trigger = match rng.random_range(0..6) {
                0 => Trigger::Manual {
                    device: wearables.choose(rng).unwrap().clone(),
                    button: BUTTONS.choose(rng).unwrap().to_string(),
                },
                1 | 2 => Trigger::AutoAfter {
                    after: if cues.is_empty() || rng.random_bool(0.3) {
                        None
                    } else {
                        Some(cues.choose(rng).unwrap().id.clone())
                    },
                    delay_ms: if rng.random_bool(0.3) { 0 } else { rng.random_range(1..=3000) },
                },
                3 if !colliders.is_empty() => {
                    let collider = colliders.choose(rng).unwrap().id.clone();
                    if rng.random_bool(0.7) {
                        Trigger::ColliderEnter { collider }
                    } else {
                        Trigger::ColliderExit { collider }
                    }
                }
                4 if !blocking_earlier.is_empty() => Trigger::ContentEnd { after: blocking_earlier.choose(rng).unwrap().clone() },
                _ => Trigger::OperatorOnly,
            };
            let blocking = rng.random_bool(0.4);
            let mut actions = Vec::new();
            for _ in 0..rng.random_range(1..=3) {
                actions.push(random_action(rng, &assets, &hmds, &wearables));
            }
            if blocking && !actions.iter().any(|a| matches!(a, Action::PlayMedia { .. })) {
                actions.push(play(rng, &assets, &hmds));
            }
            if rng.random_bool(0.15) {
                actions.push(Action::AdvanceScene);
            }
            let mut cue = Cue::new(id, trigger, actions);
            cue.blocking = blocking;
            cues.push(cue);
        }
        scenes.push(Scene { id: format!("s{}", si + 1).into(), phase, cues, loc: Default::default() });
    }
    ShowScript { title: format!("Generated show {seed}"), roster, assets, colliders, scenes }
}

fn play(rng: &mut ChaCha8Rng, assets: &[AssetDecl], hmds: &[DeviceId]) -> Action {
    let asset = assets.choose(rng).unwrap();
    let targets = if rng.random_bool(0.6) {
        Targets::AllHmds
    } else {
        let n = rng.random_range(1..=hmds.len());
        Targets::Devices(hmds.choose_multiple(rng, n).cloned().collect())
    };
    let start_offset_ms = if rng.random_bool(0.7) { 0 } else { rng.random_range(0..asset.duration_ms) };
    Action::PlayMedia { asset: asset.id.clone(), targets, start_offset_ms }
}

fn random_action(rng: &mut ChaCha8Rng, assets: &[AssetDecl], hmds: &[DeviceId], wearables: &[DeviceId]) -> Action {
    match rng.random_range(0..5) {
        0 | 1 => play(rng, assets, hmds),
        2 => Action::StopMedia { asset: assets.choose(rng).unwrap().id.clone(), targets: Targets::AllHmds },
        _ => Action::Buzz {
            device: wearables.choose(rng).unwrap().clone(),
            pattern: *[BuzzPattern::Short, BuzzPattern::Long, BuzzPattern::Double].choose(rng).unwrap(),
        },
    }
}

fn random_scenario(rng: &mut ChaCha8Rng, script: &ShowScript, seed: u64) -> Scenario {
    let mut sc = Scenario::new(GENERATED_SCRIPT);
    sc.seed = seed;
    sc.horizon_ms = 120_000;
    sc.network = Network { delay_ms: rng.random_range(5..=40), jitter_ms: rng.random_range(0..=20) };
    let buttons: Vec<&str> = BUTTONS.to_vec();
    for d in &script.roster {
        let mut dev = SimDevice::new(d.id.clone());
        dev.clock_offset_ms = rng.random_range(-500..=500);
        dev.connect_at = if rng.random_bool(0.8) { 0 } else { rng.random_range(0..=5000) };
        if d.role == Role::Hmd {
            dev.media = match rng.random_range(0..5) {
                0 => MediaFidelity::Drop { p: *[0.1, 0.3, 1.0].choose(rng).unwrap() },
                1 => MediaFidelity::Delay { ms: rng.random_range(100..=3000) },
                _ => MediaFidelity::Honest,
            };
            if !script.colliders.is_empty() {
                let mut at = 0;
                for _ in 0..rng.random_range(2..=5) {
                    at += rng.random_range(500..=8000);
                    dev.waypoints.push(Waypoint {
                        at,
                        pos: [rng.random_range(-4.0..4.0), rng.random_range(-4.0..4.0), 0.0],
                    });
                }
            }
        } else {
            let mut at = 0;
            for _ in 0..rng.random_range(0..=6) {
                at += rng.random_range(300..=10_000);
                dev.presses.push(Press { at, button: buttons.choose(rng).unwrap().to_string() });
            }
        }
        if rng.random_bool(0.15) {
            let at = rng.random_range(2000..=40_000);
            let reconnect = rng.random_bool(0.8).then(|| at + rng.random_range(1000..=8000));
            dev.outages.push(Outage { at, reconnect });
        }
        sc.devices.push(dev);
    }
    let cues: Vec<&CueId> = script.scenes.iter().flat_map(|s| s.cues.iter().map(|c| &c.id)).collect();
    let mut at = 0;
    for _ in 0..rng.random_range(0..=4) {
        at += rng.random_range(500..=15_000);
        let cmd = match rng.random_range(0..5) {
            0 => {
                let resume_at = at + rng.random_range(100..=4000);
                sc.operator.push(OperatorAction { at, cmd: OperatorCmd::Hold });
                at = resume_at;
                OperatorCmd::Resume
            }
            1 => OperatorCmd::Skip { cue: (*cues.choose(rng).unwrap()).clone() },
            2 => OperatorCmd::JumpToScene { scene: script.scenes.choose(rng).unwrap().id.clone() },
            _ => OperatorCmd::Fire { cue: (*cues.choose(rng).unwrap()).clone() },
        };
        sc.operator.push(OperatorAction { at, cmd });
    }
    sc
}
