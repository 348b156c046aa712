//! Show control for mixed-reality live performances.
//!
//! A show is written as a single script (`.show` text or `.show.json`),
//! compiled into a [`script::CueGraph`] and executed by the deterministic
//! [`engine::Engine`]. The [`gateway::Gateway`] is the sans-IO network
//! boundary that serializes device traffic into one ordered event stream,
//! and [`sim`] drives both against scripted virtual devices in virtual time.

pub mod diag;
pub mod engine;
pub mod gateway;
pub mod ids;
pub mod lex;
pub mod protocol;
pub mod runlog;
pub mod script;
pub mod sim;
pub mod spatial;
pub mod sweep;

pub use ids::{AssetId, ColliderId, CueId, DeviceId, Millis, SceneId};
