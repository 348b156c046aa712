use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};

use serde::Serialize;

use super::*;

/// Position of a cue: scene index and position within that scene.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub struct CueRef {
    pub scene: usize,
    pub pos: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeKind {
    AutoAfter { delay_ms: Millis },
    ContentEnd,
}

/// Dependency edge between two cues of the same scene (positions).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct Edge {
    pub from: usize,
    pub to: usize,
    pub kind: EdgeKind,
}

/// An action with its targets resolved against the roster.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ResolvedAction {
    PlayMedia { asset: AssetId, targets: Vec<DeviceId>, start_offset_ms: Millis, duration_ms: Millis },
    StopMedia { asset: AssetId, targets: Vec<DeviceId> },
    Buzz { device: DeviceId, pattern: BuzzPattern },
    AdvanceScene,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CompiledCue {
    pub id: CueId,
    pub trigger: Trigger,
    pub blocking: bool,
    pub actions: Vec<ResolvedAction>,
    /// Position of the dependency predecessor within the scene.
    pub predecessor: Option<usize>,
    pub successors: Vec<usize>,
    /// (device, asset) pairs whose end a blocking cue waits for. Empty for non-blocking cues.
    pub media_set: BTreeSet<(DeviceId, AssetId)>,
    pub notes: Vec<String>,
}

impl CompiledCue {
    pub fn advances_scene(&self) -> bool {
        self.actions.iter().any(|a| matches!(a, ResolvedAction::AdvanceScene))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CompiledScene {
    pub id: SceneId,
    pub phase: Phase,
    pub cues: Vec<CompiledCue>,
    pub edges: Vec<Edge>,
    /// Cue positions in dependency order; ties broken by script order.
    pub topo_order: Vec<usize>,
    pub roots: Vec<usize>,
}

/// The executable form of a show script.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CueGraph {
    pub title: String,
    pub roster: Vec<DeviceDecl>,
    pub assets: BTreeMap<AssetId, AssetDecl>,
    pub colliders: Vec<ColliderDecl>,
    pub scenes: Vec<CompiledScene>,
    index: BTreeMap<CueId, CueRef>,
}

impl CueGraph {
    pub fn locate(&self, cue: &str) -> Option<CueRef> {
        self.index.get(cue).copied()
    }

    pub fn cue(&self, at: CueRef) -> &CompiledCue {
        &self.scenes[at.scene].cues[at.pos]
    }

    pub fn cue_by_id(&self, cue: &str) -> Option<&CompiledCue> {
        self.locate(cue).map(|r| self.cue(r))
    }

    pub fn scene_index(&self, scene: &str) -> Option<usize> {
        self.scenes.iter().position(|s| s.id.as_str() == scene)
    }

    pub fn role_of(&self, device: &str) -> Option<Role> {
        self.roster.iter().find(|d| d.id.as_str() == device).map(|d| d.role)
    }

    pub fn hmds(&self) -> impl Iterator<Item = &DeviceId> {
        self.roster.iter().filter(|d| d.role == Role::Hmd).map(|d| &d.id)
    }

    pub fn cue_count(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scenes.is_empty()
    }

    pub fn cue_ids(&self) -> impl Iterator<Item = &CueId> {
        self.scenes.iter().flat_map(|s| s.cues.iter().map(|c| &c.id))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum CompileError {
    #[error("E_CYCLE dependency cycle in scene `{scene}` through {}", join(.cues))]
    Cycle { scene: SceneId, cues: Vec<CueId> },
    #[error("E_UNREACHABLE_CUE cue `{cue}` can never be triggered: {reason}")]
    Unreachable { cue: CueId, reason: String },
    #[error("E_UNRESOLVED_REF {0}")]
    Unresolved(String),
}

fn join(ids: &[CueId]) -> String {
    ids.iter().map(|c| format!("`{c}`")).collect::<Vec<_>>().join(", ")
}

impl CompileError {
    pub fn code(&self) -> &'static str {
        match self {
            CompileError::Cycle { .. } => "E_CYCLE",
            CompileError::Unreachable { .. } => "E_UNREACHABLE_CUE",
            CompileError::Unresolved(_) => "E_UNRESOLVED_REF",
        }
    }
}

/// Compile a validated script into a per-scene dependency DAG.
pub fn compile_timeline(script: &ShowScript) -> Result<CueGraph, CompileError> {
    let assets: BTreeMap<AssetId, AssetDecl> =
        script.assets.iter().map(|a| (a.id.clone(), a.clone())).collect();
    let mut index = BTreeMap::new();
    let mut scenes = Vec::with_capacity(script.scenes.len());
    for (si, scene) in script.scenes.iter().enumerate() {
        let mut local: BTreeMap<&str, usize> = BTreeMap::new();
        for (pos, cue) in scene.cues.iter().enumerate() {
            if index.insert(cue.id.clone(), CueRef { scene: si, pos }).is_some() {
                return Err(CompileError::Unresolved(format!("duplicate cue id `{}`", cue.id)));
            }
            local.insert(cue.id.as_str(), pos);
        }

        let mut cues = Vec::with_capacity(scene.cues.len());
        let mut edges = Vec::new();
        for (pos, cue) in scene.cues.iter().enumerate() {
            let actions = cue
                .actions
                .iter()
                .map(|a| resolve_action(script, &assets, a))
                .collect::<Result<Vec<_>, _>>()?;
            let predecessor = match cue.trigger.predecessor() {
                None => None,
                Some(pred) => {
                    let Some(&from) = local.get(pred.as_str()) else {
                        return Err(CompileError::Unreachable {
                            cue: cue.id.clone(),
                            reason: format!("it waits on `{pred}`, which is not in scene `{}`", scene.id),
                        });
                    };
                    let kind = match cue.trigger {
                        Trigger::AutoAfter { delay_ms, .. } => EdgeKind::AutoAfter { delay_ms },
                        _ => {
                            if !scene.cues[from].blocking {
                                return Err(CompileError::Unreachable {
                                    cue: cue.id.clone(),
                                    reason: format!("its predecessor `{pred}` is not blocking, so its content end is never observed"),
                                });
                            }
                            EdgeKind::ContentEnd
                        }
                    };
                    edges.push(Edge { from, to: pos, kind });
                    Some(from)
                }
            };
            let media_set = if cue.blocking {
                actions
                    .iter()
                    .filter_map(|a| match a {
                        ResolvedAction::PlayMedia { asset, targets, .. } => Some((asset, targets)),
                        _ => None,
                    })
                    .flat_map(|(asset, targets)| targets.iter().map(move |d| (d.clone(), asset.clone())))
                    .collect()
            } else {
                BTreeSet::new()
            };
            cues.push(CompiledCue {
                id: cue.id.clone(),
                trigger: cue.trigger.clone(),
                blocking: cue.blocking,
                actions,
                predecessor,
                successors: Vec::new(),
                media_set,
                notes: cue.notes.clone(),
            });
        }
        for e in &edges {
            cues[e.from].successors.push(e.to);
        }

        let topo_order = topological_order(cues.len(), &edges).map_err(|stuck| CompileError::Cycle {
            scene: scene.id.clone(),
            cues: stuck.into_iter().map(|p| cues[p].id.clone()).collect(),
        })?;
        let roots = (0..cues.len()).filter(|&p| cues[p].predecessor.is_none()).collect();
        scenes.push(CompiledScene {
            id: scene.id.clone(),
            phase: scene.phase,
            cues,
            edges,
            topo_order,
            roots,
        });
    }
    Ok(CueGraph {
        title: script.title.clone(),
        roster: script.roster.clone(),
        assets,
        colliders: script.colliders.clone(),
        scenes,
        index,
    })
}

/// Kahn's algorithm, lowest position first. On a cycle returns the
/// positions that could not be ordered.
fn topological_order(n: usize, edges: &[Edge]) -> Result<Vec<usize>, Vec<usize>> {
    let mut indegree = vec![0usize; n];
    let mut out: Vec<Vec<usize>> = vec![Vec::new(); n];
    for e in edges {
        indegree[e.to] += 1;
        out[e.from].push(e.to);
    }
    let mut ready: BinaryHeap<Reverse<usize>> =
        (0..n).filter(|&i| indegree[i] == 0).map(Reverse).collect();
    let mut order = Vec::with_capacity(n);
    while let Some(Reverse(i)) = ready.pop() {
        order.push(i);
        for &j in &out[i] {
            indegree[j] -= 1;
            if indegree[j] == 0 {
                ready.push(Reverse(j));
            }
        }
    }
    if order.len() == n {
        Ok(order)
    } else {
        Err((0..n).filter(|&i| indegree[i] > 0).collect())
    }
}

fn resolve_targets(script: &ShowScript, targets: &Targets) -> Result<Vec<DeviceId>, CompileError> {
    match targets {
        Targets::AllHmds => Ok(script.hmds().map(|d| d.id.clone()).collect()),
        Targets::Devices(list) => {
            for d in list {
                if script.device(d.as_str()).is_none() {
                    return Err(CompileError::Unresolved(format!("unknown device `{d}`")));
                }
            }
            Ok(list.clone())
        }
    }
}

fn resolve_action(
    script: &ShowScript,
    assets: &BTreeMap<AssetId, AssetDecl>,
    action: &Action,
) -> Result<ResolvedAction, CompileError> {
    let asset_of = |id: &AssetId| {
        assets
            .get(id)
            .ok_or_else(|| CompileError::Unresolved(format!("unknown asset `{id}`")))
    };
    Ok(match action {
        Action::PlayMedia { asset, targets, start_offset_ms } => ResolvedAction::PlayMedia {
            asset: asset.clone(),
            targets: resolve_targets(script, targets)?,
            start_offset_ms: *start_offset_ms,
            duration_ms: asset_of(asset)?.duration_ms,
        },
        Action::StopMedia { asset, targets } => {
            asset_of(asset)?;
            ResolvedAction::StopMedia { asset: asset.clone(), targets: resolve_targets(script, targets)? }
        }
        Action::Buzz { device, pattern } => {
            if script.device(device.as_str()).is_none() {
                return Err(CompileError::Unresolved(format!("unknown device `{device}`")));
            }
            ResolvedAction::Buzz { device: device.clone(), pattern: *pattern }
        }
        Action::AdvanceScene => ResolvedAction::AdvanceScene,
    })
}
