//! Show scripts: the declarative description of a performance.
//!
//! One document carries the device roster, the media assets, the spatial
//! colliders and the scenes with their cues. It has two encodings of the
//! same model: the sectioned text format (see [`text`]) and JSON.

mod compile;
mod json;
pub mod text;
mod validate;

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::de::{self, Deserializer, SeqAccess, Visitor};
use serde::ser::Serializer;
use serde::{Deserialize, Serialize};

use crate::diag::{DiagCode, Diagnostic, Diagnostics, Loc};
use crate::ids::{AssetId, ColliderId, CueId, DeviceId, Millis, SceneId};

pub use compile::{
    compile_timeline, CompileError, CompiledCue, CompiledScene, CueGraph, CueRef, Edge, EdgeKind, ResolvedAction,
};
pub use json::{parse_script_json, to_json};
pub use text::{parse_script_text, to_text};
pub use validate::validate_script;

/// Default hysteresis half-width for colliders, meters.
pub const DEFAULT_HYSTERESIS_M: f64 = 0.15;
/// Default enter/exit debounce for colliders.
pub const DEFAULT_DEBOUNCE_MS: Millis = 200;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShowScript {
    #[serde(default)]
    pub title: String,
    #[serde(default)]
    pub roster: Vec<DeviceDecl>,
    #[serde(default)]
    pub assets: Vec<AssetDecl>,
    #[serde(default)]
    pub colliders: Vec<ColliderDecl>,
    #[serde(default)]
    pub scenes: Vec<Scene>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Hmd,
    Wearable,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::Hmd => "hmd",
            Role::Wearable => "wearable",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "hmd" => Some(Role::Hmd),
            "wearable" => Some(Role::Wearable),
            _ => None,
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviceDecl {
    pub id: DeviceId,
    pub role: Role,
    #[serde(default)]
    pub label: String,
    #[serde(skip)]
    pub loc: Loc,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum AssetKind {
    #[serde(rename = "spatial-media")]
    SpatialMedia,
    #[serde(rename = "audio")]
    Audio,
}

impl AssetKind {
    pub fn as_str(self) -> &'static str {
        match self {
            AssetKind::SpatialMedia => "spatial-media",
            AssetKind::Audio => "audio",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "spatial-media" => Some(AssetKind::SpatialMedia),
            "audio" => Some(AssetKind::Audio),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AssetDecl {
    pub id: AssetId,
    pub kind: AssetKind,
    pub duration_ms: Millis,
    pub uri: String,
    #[serde(skip)]
    pub loc: Loc,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Shape {
    Sphere { center: [f64; 3], radius: f64 },
    Box { min: [f64; 3], max: [f64; 3] },
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum SubjectFilter {
    #[default]
    #[serde(rename = "any")]
    Any,
    #[serde(rename = "hmd-only")]
    HmdOnly,
    #[serde(rename = "wearable-only")]
    WearableOnly,
}

impl SubjectFilter {
    pub fn as_str(self) -> &'static str {
        match self {
            SubjectFilter::Any => "any",
            SubjectFilter::HmdOnly => "hmd-only",
            SubjectFilter::WearableOnly => "wearable-only",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "any" => Some(SubjectFilter::Any),
            "hmd-only" => Some(SubjectFilter::HmdOnly),
            "wearable-only" => Some(SubjectFilter::WearableOnly),
            _ => None,
        }
    }

    pub fn admits(self, role: Role) -> bool {
        match self {
            SubjectFilter::Any => true,
            SubjectFilter::HmdOnly => role == Role::Hmd,
            SubjectFilter::WearableOnly => role == Role::Wearable,
        }
    }
}

fn default_hysteresis() -> f64 {
    DEFAULT_HYSTERESIS_M
}

fn default_debounce() -> Millis {
    DEFAULT_DEBOUNCE_MS
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ColliderDecl {
    pub id: ColliderId,
    pub shape: Shape,
    #[serde(default)]
    pub filter: SubjectFilter,
    #[serde(default = "default_hysteresis")]
    pub hysteresis_m: f64,
    #[serde(default = "default_debounce")]
    pub debounce_ms: Millis,
    #[serde(skip)]
    pub loc: Loc,
}

impl ColliderDecl {
    pub fn new(id: impl Into<ColliderId>, shape: Shape) -> Self {
        Self {
            id: id.into(),
            shape,
            filter: SubjectFilter::Any,
            hysteresis_m: DEFAULT_HYSTERESIS_M,
            debounce_ms: DEFAULT_DEBOUNCE_MS,
            loc: Loc::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Onboarding,
    #[default]
    Main,
    Offboarding,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Onboarding => "onboarding",
            Phase::Main => "main",
            Phase::Offboarding => "offboarding",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "onboarding" => Some(Phase::Onboarding),
            "main" => Some(Phase::Main),
            "offboarding" => Some(Phase::Offboarding),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scene {
    pub id: SceneId,
    #[serde(default)]
    pub phase: Phase,
    #[serde(default)]
    pub cues: Vec<Cue>,
    #[serde(skip)]
    pub loc: Loc,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Cue {
    pub id: CueId,
    pub trigger: Trigger,
    pub actions: Vec<Action>,
    #[serde(default)]
    pub blocking: bool,
    /// Free-text annotations (dialogue, performer notes). Not interpreted.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
    #[serde(skip)]
    pub loc: Loc,
    #[serde(skip)]
    pub trigger_loc: Loc,
    #[serde(skip)]
    pub action_locs: SourceLocs,
}

impl Cue {
    pub fn new(id: impl Into<CueId>, trigger: Trigger, actions: Vec<Action>) -> Self {
        Self {
            id: id.into(),
            trigger,
            actions,
            blocking: false,
            notes: Vec::new(),
            loc: Loc::default(),
            trigger_loc: Loc::default(),
            action_locs: SourceLocs::default(),
        }
    }

    pub fn blocking(mut self) -> Self {
        self.blocking = true;
        self
    }

    pub fn action_loc(&self, idx: usize) -> Loc {
        self.action_locs.0.get(idx).copied().unwrap_or(self.loc)
    }
}

/// Per-action source locations. Ignored by equality, like [`Loc`].
#[derive(Clone, Debug, Default)]
pub struct SourceLocs(pub Vec<Loc>);

impl PartialEq for SourceLocs {
    fn eq(&self, _: &Self) -> bool {
        true
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Trigger {
    Manual {
        device: DeviceId,
        button: String,
    },
    /// Fires `delay_ms` after `after` completes; `after: None` means scene start.
    AutoAfter {
        #[serde(default)]
        after: Option<CueId>,
        delay_ms: Millis,
    },
    ColliderEnter {
        collider: ColliderId,
    },
    ColliderExit {
        collider: ColliderId,
    },
    ContentEnd {
        after: CueId,
    },
    OperatorOnly,
}

impl Trigger {
    /// The cue this trigger depends on, if any.
    pub fn predecessor(&self) -> Option<&CueId> {
        match self {
            Trigger::AutoAfter { after, .. } => after.as_ref(),
            Trigger::ContentEnd { after } => Some(after),
            _ => None,
        }
    }

    pub fn kind_str(&self) -> &'static str {
        match self {
            Trigger::Manual { .. } => "manual",
            Trigger::AutoAfter { .. } => "auto_after",
            Trigger::ColliderEnter { .. } => "collider_enter",
            Trigger::ColliderExit { .. } => "collider_exit",
            Trigger::ContentEnd { .. } => "content_end",
            Trigger::OperatorOnly => "operator_only",
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub enum Targets {
    #[default]
    AllHmds,
    Devices(Vec<DeviceId>),
}

const ALL_HMDS: &str = "all-hmds";

impl Serialize for Targets {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Targets::AllHmds => s.serialize_str(ALL_HMDS),
            Targets::Devices(list) => list.serialize(s),
        }
    }
}

impl<'de> Deserialize<'de> for Targets {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        struct TargetsVisitor;

        impl<'de> Visitor<'de> for TargetsVisitor {
            type Value = Targets;

            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("\"all-hmds\" or a list of device ids")
            }

            fn visit_str<E: de::Error>(self, v: &str) -> Result<Targets, E> {
                if v == ALL_HMDS {
                    Ok(Targets::AllHmds)
                } else {
                    Err(E::invalid_value(de::Unexpected::Str(v), &self))
                }
            }

            fn visit_seq<A: SeqAccess<'de>>(self, mut seq: A) -> Result<Targets, A::Error> {
                let mut out = Vec::new();
                while let Some(id) = seq.next_element::<DeviceId>()? {
                    out.push(id);
                }
                Ok(Targets::Devices(out))
            }
        }

        d.deserialize_any(TargetsVisitor)
    }
}

impl Targets {
    pub fn to_text(&self) -> String {
        match self {
            Targets::AllHmds => ALL_HMDS.to_owned(),
            Targets::Devices(list) => list.iter().map(DeviceId::as_str).collect::<Vec<_>>().join(","),
        }
    }

    pub fn parse_text(s: &str) -> Option<Self> {
        if s == ALL_HMDS {
            return Some(Targets::AllHmds);
        }
        let list: Vec<DeviceId> = s.split(',').map(DeviceId::from).collect();
        if list.iter().all(|d| crate::lex::is_identifier(d.as_str())) {
            Some(Targets::Devices(list))
        } else {
            None
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BuzzPattern {
    Short,
    Long,
    Double,
}

impl BuzzPattern {
    pub fn as_str(self) -> &'static str {
        match self {
            BuzzPattern::Short => "short",
            BuzzPattern::Long => "long",
            BuzzPattern::Double => "double",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "short" => Some(BuzzPattern::Short),
            "long" => Some(BuzzPattern::Long),
            "double" => Some(BuzzPattern::Double),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Action {
    PlayMedia {
        asset: AssetId,
        #[serde(default)]
        targets: Targets,
        #[serde(default)]
        start_offset_ms: Millis,
    },
    StopMedia {
        asset: AssetId,
        #[serde(default)]
        targets: Targets,
    },
    Buzz {
        device: DeviceId,
        pattern: BuzzPattern,
    },
    AdvanceScene,
}

impl ShowScript {
    pub fn device(&self, id: &str) -> Option<&DeviceDecl> {
        self.roster.iter().find(|d| d.id.as_str() == id)
    }

    pub fn asset(&self, id: &str) -> Option<&AssetDecl> {
        self.assets.iter().find(|a| a.id.as_str() == id)
    }

    pub fn collider(&self, id: &str) -> Option<&ColliderDecl> {
        self.colliders.iter().find(|c| c.id.as_str() == id)
    }

    pub fn hmds(&self) -> impl Iterator<Item = &DeviceDecl> {
        self.roster.iter().filter(|d| d.role == Role::Hmd)
    }

    pub fn cue_count(&self) -> usize {
        self.scenes.iter().map(|s| s.cues.len()).sum()
    }
}

/// Parse either encoding: documents whose first non-blank character is `{`
/// are JSON, everything else is the text format.
pub fn parse_script(doc: &str) -> Result<ShowScript, Diagnostics> {
    if doc.trim_start().starts_with('{') {
        parse_script_json(doc)
    } else {
        parse_script_text(doc)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum LoadError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Invalid(#[from] Diagnostics),
}

pub fn load_script(path: &Path) -> Result<ShowScript, LoadError> {
    let doc = std::fs::read_to_string(path).map_err(|source| LoadError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Ok(parse_script(&doc)?)
}

/// Every duplicated id (after its first occurrence), per namespace.
pub(crate) fn duplicate_ids(script: &ShowScript) -> Vec<Diagnostic> {
    fn scan<'a>(
        what: &str,
        items: impl Iterator<Item = (&'a str, Loc)>,
        out: &mut Vec<Diagnostic>,
    ) {
        let mut seen: BTreeMap<&str, Loc> = BTreeMap::new();
        for (id, loc) in items {
            if let Some(first) = seen.get(id) {
                out.push(
                    Diagnostic::new(
                        DiagCode::DupId,
                        loc,
                        format!("duplicate {what} id `{id}` (first declared at {}:{})", first.line, first.col),
                    )
                    .with_subject(id),
                );
            } else {
                seen.insert(id, loc);
            }
        }
    }
    let mut out = Vec::new();
    scan("device", script.roster.iter().map(|d| (d.id.as_str(), d.loc)), &mut out);
    scan("asset", script.assets.iter().map(|a| (a.id.as_str(), a.loc)), &mut out);
    scan("collider", script.colliders.iter().map(|c| (c.id.as_str(), c.loc)), &mut out);
    scan("scene", script.scenes.iter().map(|s| (s.id.as_str(), s.loc)), &mut out);
    scan(
        "cue",
        script.scenes.iter().flat_map(|s| s.cues.iter()).map(|c| (c.id.as_str(), c.loc)),
        &mut out,
    );
    out
}

pub(crate) fn no_scenes(script: &ShowScript) -> Option<Diagnostic> {
    script
        .scenes
        .is_empty()
        .then(|| Diagnostic::new(DiagCode::Syntax, Loc::new(1, 1), "no scenes declared"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn targets_json_encoding() {
        assert_eq!(serde_json::to_string(&Targets::AllHmds).unwrap(), "\"all-hmds\"");
        let t: Targets = serde_json::from_str(r#"["h1","h2"]"#).unwrap();
        assert_eq!(t, Targets::Devices(vec!["h1".into(), "h2".into()]));
        assert!(serde_json::from_str::<Targets>("\"everyone\"").is_err());
    }

    #[test]
    fn targets_text_encoding() {
        assert_eq!(Targets::parse_text("all-hmds"), Some(Targets::AllHmds));
        assert_eq!(Targets::parse_text("h1,h2").unwrap().to_text(), "h1,h2");
        assert_eq!(Targets::parse_text("h1,,h2"), None);
    }

    #[test]
    fn subject_filter_by_role() {
        assert!(SubjectFilter::Any.admits(Role::Wearable));
        assert!(!SubjectFilter::HmdOnly.admits(Role::Wearable));
        assert!(SubjectFilter::WearableOnly.admits(Role::Wearable));
    }
}
