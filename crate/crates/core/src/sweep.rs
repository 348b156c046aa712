//! Batch workloads: scenario sweeps, decoder fuzzing and pose-tracking
//! batches.
//!
//! Every batch is split into independent, individually seeded items, so
//! results are identical whichever executor runs them. With the `parallel`
//! feature (on by default) [`Exec::Parallel`] uses rayon; without it, it
//! degrades to the sequential loop.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::gateway::{Gateway, GatewayConfig};
use crate::ids::Millis;
use crate::protocol::{decode, encode, Body, FrameDecoder, Message};
use crate::runlog::{replay_check, to_jsonl, ReplayOutcome};
use crate::script::{compile_timeline, ColliderDecl, DeviceDecl, Role};
use crate::sim::{random_case, simulate_graph, SimError};
use crate::spatial::{ColliderTransition, Pose, Tracker};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Exec {
    Sequential,
    #[default]
    Parallel,
}

impl Exec {
    pub fn map<T, R, F>(self, items: &[T], f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(&T) -> R + Sync + Send,
    {
        match self {
            #[cfg(feature = "parallel")]
            Exec::Parallel => {
                use rayon::prelude::*;
                items.par_iter().map(f).collect()
            }
            _ => items.iter().map(f).collect(),
        }
    }
}

/// One generated show run end to end, then replayed from its own log.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct CaseOutcome {
    pub seed: u64,
    pub finished: bool,
    pub end_at: Millis,
    pub log_lines: usize,
    pub commands: usize,
    /// The run log, JSONL.
    #[serde(skip)]
    pub log: String,
    /// `None` when replay reproduced every command.
    pub divergence: Option<u64>,
}

#[derive(Debug, thiserror::Error)]
pub enum SweepError {
    #[error("seed {seed}: {source}")]
    Sim {
        seed: u64,
        #[source]
        source: SimError,
    },
    #[error("seed {seed}: replay failed: {message}")]
    Replay { seed: u64, message: String },
}

pub fn run_case(seed: u64) -> Result<CaseOutcome, SweepError> {
    let (script, sc) = random_case(seed);
    let graph = Arc::new(compile_timeline(&script).map_err(|e| SweepError::Sim { seed, source: e.into() })?);
    let run = simulate_graph(graph.clone(), &sc).map_err(|source| SweepError::Sim { seed, source })?;
    let outcome =
        replay_check(graph, &run.log).map_err(|e| SweepError::Replay { seed, message: e.to_string() })?;
    let (commands, divergence) = match outcome {
        ReplayOutcome::Pass { commands } => (commands, None),
        ReplayOutcome::Divergence { seq, .. } => (0, Some(seq)),
    };
    Ok(CaseOutcome {
        seed,
        finished: run.finished,
        end_at: run.end_at,
        log_lines: run.log.len(),
        commands,
        log: to_jsonl(&run.log),
        divergence,
    })
}

pub fn run_scenarios(seeds: &[u64], exec: Exec) -> Vec<Result<CaseOutcome, SweepError>> {
    exec.map(seeds, |&s| run_case(s))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct FuzzSummary {
    pub inputs: u64,
    pub decoded: u64,
    pub rejected: u64,
    pub panics: u64,
}

impl FuzzSummary {
    fn merge(mut self, o: FuzzSummary) -> Self {
        self.inputs += o.inputs;
        self.decoded += o.decoded;
        self.rejected += o.rejected;
        self.panics += o.panics;
        self
    }
}

const FUZZ_CHUNK: u64 = 10_000;

/// Feed `count` malformed or mutated frames through the frame decoder,
/// the streaming decoder and a live gateway, counting panics.
pub fn fuzz_decode(seed: u64, count: u64, exec: Exec) -> FuzzSummary {
    let chunks: Vec<(u64, u64)> = (0..count.div_ceil(FUZZ_CHUNK))
        .map(|i| (i, FUZZ_CHUNK.min(count - i * FUZZ_CHUNK)))
        .collect();
    exec.map(&chunks, |&(i, n)| fuzz_chunk(seed ^ i.wrapping_mul(0x9E37_79B9_7F4A_7C15), n))
        .into_iter()
        .fold(FuzzSummary::default(), FuzzSummary::merge)
}

fn seed_frames() -> Vec<Vec<u8>> {
    let bodies = [
        Body::Hello { device_id: "h1".into(), role: "hmd".into() },
        Body::Heartbeat,
        Body::Pong { t0: 10, t1: 15, t2: 16 },
        Body::Button { button_id: "go".into() },
        Body::Pose { x: 0.5, y: -1.0, z: 0.0 },
        Body::MediaEnded { asset_id: "a1".into(), cue_id: "c1".into() },
        Body::Ack { ack_seq: 3 },
    ];
    bodies.into_iter().enumerate().map(|(i, b)| encode(&Message::new(i as u64, 100, b)).unwrap()).collect()
}

fn mutate(rng: &mut ChaCha8Rng, seeds: &[Vec<u8>]) -> Vec<u8> {
    match rng.random_range(0..6) {
        0 => (0..rng.random_range(0..64)).map(|_| rng.random()).collect(),
        1 => {
            // plausible header, random payload
            let len: usize = rng.random_range(0..200);
            let mut buf = (len as u32).to_be_bytes().to_vec();
            buf.extend((0..rng.random_range(0..=len + 8)).map(|_| rng.random::<u8>()));
            buf
        }
        2 => {
            let mut buf = seeds[rng.random_range(0..seeds.len())].clone();
            for _ in 0..rng.random_range(1..=4) {
                let i = rng.random_range(0..buf.len());
                buf[i] ^= 1 << rng.random_range(0..8);
            }
            buf
        }
        3 => {
            let buf = &seeds[rng.random_range(0..seeds.len())];
            buf[..rng.random_range(0..buf.len())].to_vec()
        }
        4 => {
            let mut buf = rng.random::<u32>().to_be_bytes().to_vec();
            buf.extend_from_slice(&seeds[rng.random_range(0..seeds.len())][4..]);
            buf
        }
        _ => {
            let mut buf = seeds[rng.random_range(0..seeds.len())].clone();
            let i = rng.random_range(4..buf.len());
            buf[i] = *b"{}[]\",:0-e\\".get(rng.random_range(0..11)).unwrap();
            buf
        }
    }
}

fn fuzz_chunk(seed: u64, n: u64) -> FuzzSummary {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let seeds = seed_frames();
    let roster = [DeviceDecl { id: "h1".into(), role: Role::Hmd, label: String::new(), loc: Default::default() }];
    let mut gw = Gateway::new(&roster, Vec::new(), GatewayConfig::default());
    let mut stream = FrameDecoder::new();
    let mut sum = FuzzSummary { inputs: n, ..Default::default() };
    for i in 0..n {
        let buf = mutate(&mut rng, &seeds);
        let r = catch_unwind(AssertUnwindSafe(|| {
            let ok = decode(&buf).is_ok();
            if buf.len() >= 4 {
                gw.inbound_payload(i % 4, &buf[4..], i as Millis);
            }
            stream.push(&buf);
            while let Some(_m) = stream.next_message() {}
            if stream.is_poisoned() {
                stream = FrameDecoder::new();
            }
            ok
        }));
        match r {
            Ok(true) => sum.decoded += 1,
            Ok(false) => sum.rejected += 1,
            Err(_) => {
                sum.panics += 1;
                stream = FrameDecoder::new();
            }
        }
    }
    sum
}

/// Run each pose sequence through a fresh tracker.
pub fn track_batch(
    colliders: &[ColliderDecl],
    sequences: &[(Role, Vec<Pose>)],
    exec: Exec,
) -> Vec<Vec<ColliderTransition>> {
    exec.map(sequences, |(role, poses)| {
        let mut t = Tracker::new();
        poses.iter().flat_map(|p| t.update_pose(p, *role, colliders, p.at)).collect()
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn executors_agree() {
        let seeds: Vec<u64> = (0..12).collect();
        let seq = run_scenarios(&seeds, Exec::Sequential);
        let par = run_scenarios(&seeds, Exec::Parallel);
        for (a, b) in seq.iter().zip(&par) {
            assert_eq!(a.as_ref().unwrap(), b.as_ref().unwrap());
            assert_eq!(a.as_ref().unwrap().divergence, None);
        }
        assert_eq!(fuzz_decode(7, 25_000, Exec::Sequential), fuzz_decode(7, 25_000, Exec::Parallel));
    }

    #[test]
    fn fuzz_mix_exercises_both_paths() {
        let s = fuzz_decode(1, 20_000, Exec::Sequential);
        assert_eq!(s.inputs, 20_000);
        assert_eq!(s.panics, 0);
        assert!(s.decoded > 100, "{s:?}");
        assert!(s.rejected > 10_000, "{s:?}");
    }
}
