//! Discrete-event simulation of a whole installation.
//!
//! A scenario describes simulated devices (clock offsets, network
//! conditions, outages, button presses, walking paths) around a show
//! script. The harness runs the real engine and gateway against those
//! devices in virtual time and records everything to a run log, which
//! [`compute_metrics`] turns into a report.

mod generate;
mod harness;
mod metrics;
pub mod scenario;

pub use generate::{random_case, GENERATED_SCRIPT};
pub use harness::{simulate, simulate_graph, SimError, SimRun};
pub use metrics::{compute_metrics, LatencyStats, RunReport, SkewSample, SnapshotSample, TimelineEntry};
pub use scenario::{
    check_scenario, load_scenario, parse_scenario, scenario_to_text, MediaFidelity, Network, OperatorAction, Outage,
    Press, Scenario, ScenarioLoadError, SimDevice, Waypoint,
};
