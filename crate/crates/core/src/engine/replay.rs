use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{Command, Engine, EngineConfig, EngineError, Event};
use crate::ids::Millis;
use crate::script::CueGraph;

/// One step of an engine input sequence.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReplayInput {
    Event(Event),
    Tick(Millis),
}

/// Re-run an input sequence from scratch and return the full command stream.
/// Each event is preceded by a tick to its timestamp, as in a live run.
pub fn replay(
    graph: Arc<CueGraph>,
    config: EngineConfig,
    start_at: Millis,
    inputs: &[ReplayInput],
) -> Result<Vec<Command>, EngineError> {
    let (mut engine, out) = Engine::init(graph, config, start_at)?;
    let mut commands = out.commands;
    for input in inputs {
        match input {
            ReplayInput::Tick(at) => commands.extend(engine.tick(*at).commands),
            ReplayInput::Event(ev) => {
                commands.extend(engine.tick(ev.at).commands);
                commands.extend(engine.handle_event(ev)?.commands);
            }
        }
    }
    Ok(commands)
}
