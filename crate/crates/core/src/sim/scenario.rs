//! Simulation scenarios (`.scenario` text or JSON).
//!
//! ```text
//! script "house_visit.show"
//! seed 7
//! horizon 120000
//! lead 150
//! network delay=20 jitter=5
//!
//! [device h1]
//! clock_offset 250
//! media drop p=0.1
//! connect at=0
//! outage at=30000 reconnect=36000
//! waypoint at=1000 pos=(0, 0, 0)
//! pose_period 100
//!
//! [device w1]
//! press at=5000 button=go
//!
//! [operator]
//! at 6000 hold
//! at 7000 resume
//! at 8000 fire c3
//! at 9000 skip c4
//! at 9500 jump finale
//! ```
//!
//! Roster devices without a block are simulated with defaults: honest
//! media, no clock offset, connected at time 0.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::diag::{sort_diagnostics, DiagCode, Diagnostic, Diagnostics, Loc};
use crate::engine::{OperatorCmd, DEFAULT_GRACE_MS, DEFAULT_LEAD_MS};
use crate::ids::{DeviceId, Millis};
use crate::lex::{self, fmt_f64, quote, Line};
use crate::script::ShowScript;
use crate::spatial::Vec3;

fn default_horizon() -> Millis {
    600_000
}
fn default_lead() -> Millis {
    DEFAULT_LEAD_MS
}
fn default_grace() -> Millis {
    DEFAULT_GRACE_MS
}
fn default_pose_period() -> Millis {
    100
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Network {
    pub delay_ms: Millis,
    #[serde(default)]
    pub jitter_ms: Millis,
}

impl Default for Network {
    fn default() -> Self {
        Self { delay_ms: 20, jitter_ms: 0 }
    }
}

/// How a simulated HMD reports the end of media.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum MediaFidelity {
    #[default]
    Honest,
    /// Each report is lost with probability `p`.
    Drop { p: f64 },
    /// Each report is sent `ms` late.
    Delay { ms: Millis },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Outage {
    pub at: Millis,
    pub reconnect: Option<Millis>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Press {
    pub at: Millis,
    pub button: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Waypoint {
    pub at: Millis,
    pub pos: Vec3,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimDevice {
    pub id: DeviceId,
    #[serde(default)]
    pub clock_offset_ms: Millis,
    #[serde(default)]
    pub media: MediaFidelity,
    #[serde(default)]
    pub connect_at: Millis,
    #[serde(default)]
    pub outages: Vec<Outage>,
    #[serde(default)]
    pub presses: Vec<Press>,
    #[serde(default)]
    pub waypoints: Vec<Waypoint>,
    #[serde(default = "default_pose_period")]
    pub pose_period_ms: Millis,
    #[serde(skip)]
    pub loc: Loc,
}

impl SimDevice {
    pub fn new(id: impl Into<DeviceId>) -> Self {
        Self {
            id: id.into(),
            clock_offset_ms: 0,
            media: MediaFidelity::Honest,
            connect_at: 0,
            outages: Vec::new(),
            presses: Vec::new(),
            waypoints: Vec::new(),
            pose_period_ms: default_pose_period(),
            loc: Loc::default(),
        }
    }

    /// Linear interpolation along the waypoints, clamped at both ends.
    pub fn position_at(&self, t: Millis) -> Option<Vec3> {
        let first = self.waypoints.first()?;
        if t <= first.at {
            return Some(first.pos);
        }
        for w in self.waypoints.windows(2) {
            let (a, b) = (w[0], w[1]);
            if t <= b.at {
                let span = (b.at - a.at) as f64;
                let f = if span > 0.0 { (t - a.at) as f64 / span } else { 1.0 };
                return Some([0, 1, 2].map(|i| a.pos[i] + (b.pos[i] - a.pos[i]) * f));
            }
        }
        self.waypoints.last().map(|w| w.pos)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OperatorAction {
    pub at: Millis,
    #[serde(flatten)]
    pub cmd: OperatorCmd,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    /// Show script path, relative to the scenario file.
    pub script: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub network: Network,
    #[serde(default = "default_horizon")]
    pub horizon_ms: Millis,
    #[serde(default = "default_lead")]
    pub lead_ms: Millis,
    #[serde(default = "default_grace")]
    pub grace_ms: Millis,
    #[serde(default)]
    pub devices: Vec<SimDevice>,
    #[serde(default)]
    pub operator: Vec<OperatorAction>,
}

impl Scenario {
    pub fn new(script: impl Into<String>) -> Self {
        Self {
            script: script.into(),
            seed: 0,
            network: Network::default(),
            horizon_ms: default_horizon(),
            lead_ms: default_lead(),
            grace_ms: default_grace(),
            devices: Vec::new(),
            operator: Vec::new(),
        }
    }

    pub fn device(&self, id: &str) -> Option<&SimDevice> {
        self.devices.iter().find(|d| d.id.as_str() == id)
    }

    /// Clock offset injected into a device (0 for unlisted devices).
    pub fn clock_offset(&self, id: &str) -> Millis {
        self.device(id).map_or(0, |d| d.clock_offset_ms)
    }
}

/// Parse either encoding; a leading `{` selects JSON.
pub fn parse_scenario(doc: &str) -> Result<Scenario, Diagnostics> {
    if doc.trim_start().starts_with('{') {
        serde_json::from_str(doc).map_err(|e| {
            let text = e.to_string();
            let code = if text.contains("unknown field") || text.contains("unknown variant") {
                DiagCode::UnknownField
            } else {
                DiagCode::Syntax
            };
            let msg = text.split(" at line ").next().unwrap_or(&text).to_owned();
            Diagnostics(vec![Diagnostic::new(code, Loc::new(e.line() as u32, e.column() as u32), msg)])
        })
    } else {
        parse_scenario_text(doc)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ScenarioLoadError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{0}")]
    Invalid(Diagnostics),
}

pub fn load_scenario(path: &Path) -> Result<Scenario, ScenarioLoadError> {
    let doc = std::fs::read_to_string(path)
        .map_err(|source| ScenarioLoadError::Io { path: path.display().to_string(), source })?;
    parse_scenario(&doc).map_err(ScenarioLoadError::Invalid)
}

/// Cross-check a scenario against its script.
pub fn check_scenario(sc: &Scenario, script: &ShowScript) -> Vec<Diagnostic> {
    let mut out = Vec::new();
    let neg = |out: &mut Vec<Diagnostic>, loc: Loc, what: &str, v: Millis| {
        if v < 0 {
            out.push(Diagnostic::new(DiagCode::NegativeTime, loc, format!("{what} must not be negative, got {v}")));
        }
    };
    neg(&mut out, Loc::default(), "network delay", sc.network.delay_ms);
    neg(&mut out, Loc::default(), "network jitter", sc.network.jitter_ms);
    neg(&mut out, Loc::default(), "lead", sc.lead_ms);
    neg(&mut out, Loc::default(), "grace", sc.grace_ms);
    if sc.horizon_ms <= 0 {
        out.push(Diagnostic::new(DiagCode::NegativeTime, Loc::default(), "horizon must be positive"));
    }
    let mut seen = std::collections::BTreeSet::new();
    for d in &sc.devices {
        if !seen.insert(d.id.as_str()) {
            out.push(
                Diagnostic::new(DiagCode::DupId, d.loc, format!("device `{}` has two blocks", d.id)).with_subject(d.id.as_str()),
            );
        }
        if script.device(d.id.as_str()).is_none() {
            out.push(
                Diagnostic::new(DiagCode::UnknownRef, d.loc, format!("device `{}` is not in the script roster", d.id))
                    .with_subject(d.id.as_str()),
            );
        }
        match d.media {
            MediaFidelity::Drop { p } if !(0.0..=1.0).contains(&p) => out.push(Diagnostic::new(
                DiagCode::BadProbability,
                d.loc,
                format!("drop probability must be within [0, 1], got {p}"),
            )),
            MediaFidelity::Delay { ms } => neg(&mut out, d.loc, "media delay", ms),
            _ => {}
        }
        neg(&mut out, d.loc, "connect time", d.connect_at);
        if d.pose_period_ms <= 0 {
            out.push(Diagnostic::new(DiagCode::NegativeTime, d.loc, "pose period must be positive"));
        }
        for o in &d.outages {
            neg(&mut out, d.loc, "outage time", o.at);
            if o.reconnect.is_some_and(|r| r <= o.at) {
                out.push(Diagnostic::new(DiagCode::NegativeTime, d.loc, "reconnect must come after the outage"));
            }
        }
        for p in &d.presses {
            neg(&mut out, d.loc, "press time", p.at);
        }
        if d.waypoints.windows(2).any(|w| w[1].at < w[0].at) {
            out.push(Diagnostic::new(DiagCode::Syntax, d.loc, "waypoints must be in time order"));
        }
        if d.waypoints.iter().any(|w| !w.pos.iter().all(|v| v.is_finite())) {
            out.push(Diagnostic::new(DiagCode::Syntax, d.loc, "waypoint positions must be finite"));
        }
    }
    for a in &sc.operator {
        neg(&mut out, Loc::default(), "operator action time", a.at);
    }
    sort_diagnostics(&mut out);
    out
}

// ---- text encoding ----

fn syntax(loc: Loc, msg: impl Into<String>) -> Diagnostic {
    Diagnostic::new(DiagCode::Syntax, loc, msg)
}

#[derive(PartialEq)]
enum Section {
    Preamble,
    Device,
    Operator,
}

pub fn parse_scenario_text(doc: &str) -> Result<Scenario, Diagnostics> {
    let lines = lex::lex(doc).map_err(Diagnostics)?;
    let mut sc = Scenario::new("");
    let mut script_seen = false;
    let mut section = Section::Preamble;
    let mut errs = Vec::new();
    for line in &lines {
        let r = if line.header {
            header(line, &mut sc, &mut section)
        } else {
            match section {
                Section::Preamble => preamble(line, &mut sc, &mut script_seen),
                Section::Device => device_line(line, sc.devices.last_mut().expect("device section has a device")),
                Section::Operator => operator_line(line, &mut sc),
            }
        };
        if let Err(e) = r {
            errs.push(e);
        }
    }
    if !script_seen && errs.is_empty() {
        errs.push(syntax(Loc::new(1, 1), "missing `script` line"));
    }
    if errs.is_empty() {
        Ok(sc)
    } else {
        sort_diagnostics(&mut errs);
        Err(Diagnostics(errs))
    }
}

fn header(line: &Line, sc: &mut Scenario, section: &mut Section) -> Result<(), Diagnostic> {
    let mut f = line.fields();
    let (name, loc) = f.word("section name")?;
    match name.as_str() {
        "device" => {
            let (id, id_loc) = f.ident("device id")?;
            f.finish()?;
            let mut d = SimDevice::new(id);
            d.loc = id_loc;
            sc.devices.push(d);
            *section = Section::Device;
        }
        "operator" => {
            f.finish()?;
            *section = Section::Operator;
        }
        other => {
            return Err(Diagnostic::new(DiagCode::UnknownField, loc, format!("unknown section `{other}`")).with_subject(other))
        }
    }
    Ok(())
}

fn int(f: &mut lex::Fields<'_>, what: &str) -> Result<i64, Diagnostic> {
    let (w, loc) = f.word(what)?;
    w.parse().map_err(|_| syntax(loc, format!("{what} must be an integer")))
}

fn preamble(line: &Line, sc: &mut Scenario, script_seen: &mut bool) -> Result<(), Diagnostic> {
    let mut f = line.fields();
    let (kw, loc) = f.word("a setting")?;
    match kw.as_str() {
        "script" => {
            sc.script = f.string("script path")?.0;
            *script_seen = true;
        }
        "seed" => {
            let (w, wloc) = f.word("seed")?;
            sc.seed = w.parse().map_err(|_| syntax(wloc, "seed must be a non-negative integer"))?;
        }
        "horizon" => sc.horizon_ms = int(&mut f, "horizon")?,
        "lead" => sc.lead_ms = int(&mut f, "lead")?,
        "grace" => sc.grace_ms = int(&mut f, "grace")?,
        "network" => {
            let mut rest = f.rest(&["delay", "jitter"], &[])?;
            if let Some((v, l)) = rest.take("delay") {
                sc.network.delay_ms = v.as_i64(l, "delay")?;
            }
            if let Some((v, l)) = rest.take("jitter") {
                sc.network.jitter_ms = v.as_i64(l, "jitter")?;
            }
        }
        other => {
            return Err(Diagnostic::new(DiagCode::UnknownField, loc, format!("unknown setting `{other}`")).with_subject(other))
        }
    }
    f.finish()
}

fn device_line(line: &Line, d: &mut SimDevice) -> Result<(), Diagnostic> {
    let mut f = line.fields();
    let (kw, loc) = f.word("a device setting")?;
    match kw.as_str() {
        "clock_offset" => d.clock_offset_ms = int(&mut f, "clock offset")?,
        "pose_period" => d.pose_period_ms = int(&mut f, "pose period")?,
        "media" => {
            let (mode, mloc) = f.word("media mode")?;
            d.media = match mode.as_str() {
                "honest" => MediaFidelity::Honest,
                "drop" => {
                    let mut rest = f.rest(&["p"], &[])?;
                    let (v, l) = rest.require("p", mloc)?;
                    MediaFidelity::Drop { p: v.as_f64(l, "p")? }
                }
                "delay" => {
                    let mut rest = f.rest(&["ms"], &[])?;
                    let (v, l) = rest.require("ms", mloc)?;
                    MediaFidelity::Delay { ms: v.as_i64(l, "ms")? }
                }
                _ => return Err(syntax(mloc, "media mode must be honest, drop or delay")),
            };
        }
        "connect" => {
            let mut rest = f.rest(&["at"], &[])?;
            let (v, l) = rest.require("at", loc)?;
            d.connect_at = v.as_i64(l, "at")?;
        }
        "outage" => {
            let mut rest = f.rest(&["at", "reconnect"], &[])?;
            let (v, l) = rest.require("at", loc)?;
            let at = v.as_i64(l, "at")?;
            let reconnect = match rest.take("reconnect") {
                Some((v, l)) => Some(v.as_i64(l, "reconnect")?),
                None => None,
            };
            d.outages.push(Outage { at, reconnect });
        }
        "press" => {
            let mut rest = f.rest(&["at", "button"], &[])?;
            let (v, l) = rest.require("at", loc)?;
            let at = v.as_i64(l, "at")?;
            let (v, l) = rest.require("button", loc)?;
            d.presses.push(Press { at, button: v.as_text(l, "button")? });
        }
        "waypoint" => {
            let mut rest = f.rest(&["at", "pos"], &[])?;
            let (v, l) = rest.require("at", loc)?;
            let at = v.as_i64(l, "at")?;
            let (v, l) = rest.require("pos", loc)?;
            d.waypoints.push(Waypoint { at, pos: v.as_vec3(l, "pos")? });
        }
        other => {
            return Err(
                Diagnostic::new(DiagCode::UnknownField, loc, format!("unknown device setting `{other}`")).with_subject(other)
            )
        }
    }
    f.finish()
}

fn operator_line(line: &Line, sc: &mut Scenario) -> Result<(), Diagnostic> {
    let mut f = line.fields();
    let (kw, loc) = f.word("`at`")?;
    if kw != "at" {
        return Err(syntax(loc, "operator lines look like `at TIME COMMAND [ID]`"));
    }
    let at = int(&mut f, "time")?;
    let (cmd, cloc) = f.word("operator command")?;
    let cmd = match cmd.as_str() {
        "hold" => OperatorCmd::Hold,
        "resume" => OperatorCmd::Resume,
        "fire" => OperatorCmd::Fire { cue: f.ident("cue id")?.0.into() },
        "skip" => OperatorCmd::Skip { cue: f.ident("cue id")?.0.into() },
        "jump" => OperatorCmd::JumpToScene { scene: f.ident("scene id")?.0.into() },
        other => {
            return Err(
                Diagnostic::new(DiagCode::UnknownField, cloc, format!("unknown operator command `{other}`")).with_subject(other)
            )
        }
    };
    f.finish()?;
    sc.operator.push(OperatorAction { at, cmd });
    Ok(())
}

/// Write the text encoding; it parses back to an equal scenario.
pub fn scenario_to_text(sc: &Scenario) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "script {}", quote(&sc.script));
    let _ = writeln!(s, "seed {}", sc.seed);
    let _ = writeln!(s, "horizon {}", sc.horizon_ms);
    let _ = writeln!(s, "lead {}", sc.lead_ms);
    let _ = writeln!(s, "grace {}", sc.grace_ms);
    let _ = writeln!(s, "network delay={} jitter={}", sc.network.delay_ms, sc.network.jitter_ms);
    for d in &sc.devices {
        let _ = writeln!(s, "\n[device {}]", d.id);
        let _ = writeln!(s, "clock_offset {}", d.clock_offset_ms);
        match d.media {
            MediaFidelity::Honest => s.push_str("media honest\n"),
            MediaFidelity::Drop { p } => {
                let _ = writeln!(s, "media drop p={}", fmt_f64(p));
            }
            MediaFidelity::Delay { ms } => {
                let _ = writeln!(s, "media delay ms={ms}");
            }
        }
        let _ = writeln!(s, "connect at={}", d.connect_at);
        let _ = writeln!(s, "pose_period {}", d.pose_period_ms);
        for o in &d.outages {
            match o.reconnect {
                Some(r) => {
                    let _ = writeln!(s, "outage at={} reconnect={r}", o.at);
                }
                None => {
                    let _ = writeln!(s, "outage at={}", o.at);
                }
            }
        }
        for p in &d.presses {
            let _ = writeln!(s, "press at={} button={}", p.at, quote(&p.button));
        }
        for w in &d.waypoints {
            let [x, y, z] = w.pos.map(fmt_f64);
            let _ = writeln!(s, "waypoint at={} pos=({x}, {y}, {z})", w.at);
        }
    }
    if !sc.operator.is_empty() {
        s.push_str("\n[operator]\n");
        for a in &sc.operator {
            let cmd = match &a.cmd {
                OperatorCmd::Hold => "hold".to_owned(),
                OperatorCmd::Resume => "resume".to_owned(),
                OperatorCmd::Fire { cue } => format!("fire {cue}"),
                OperatorCmd::Skip { cue } => format!("skip {cue}"),
                OperatorCmd::JumpToScene { scene } => format!("jump {scene}"),
            };
            let _ = writeln!(s, "at {} {cmd}", a.at);
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    const DOC: &str = r#"
script "show.show"   # relative to this file
seed 9
network delay=15 jitter=4

[device h1]
clock_offset -120
media drop p=0.25
outage at=3000 reconnect=5000
waypoint at=0 pos=(0, 0, 0)
waypoint at=1000 pos=(2, 0, 0)

[device w1]
press at=1500 button=go

[operator]
at 2000 hold
at 2100 fire intro
"#;

    #[test]
    fn parses_text() {
        let sc = parse_scenario(DOC).unwrap();
        assert_eq!(sc.script, "show.show");
        assert_eq!(sc.network, Network { delay_ms: 15, jitter_ms: 4 });
        assert_eq!(sc.devices[0].media, MediaFidelity::Drop { p: 0.25 });
        assert_eq!(sc.devices[0].outages, vec![Outage { at: 3000, reconnect: Some(5000) }]);
        assert_eq!(sc.devices[1].presses[0].button, "go");
        assert_eq!(sc.operator[1].cmd, OperatorCmd::Fire { cue: "intro".into() });
        assert_eq!(sc.devices[0].position_at(500), Some([1.0, 0.0, 0.0]));
        assert_eq!(sc.devices[0].position_at(9000), Some([2.0, 0.0, 0.0]));
    }

    #[test]
    fn text_and_json_round_trip() {
        let sc = parse_scenario(DOC).unwrap();
        assert_eq!(parse_scenario(&scenario_to_text(&sc)).unwrap(), sc);
        let json = serde_json::to_string(&sc).unwrap();
        assert_eq!(parse_scenario(&json).unwrap(), sc);
    }

    #[test]
    fn unknown_setting_is_reported() {
        let err = parse_scenario("script \"x\"\n[device h1]\nwobble 3\n").unwrap_err();
        assert_eq!(err.codes(), vec![DiagCode::UnknownField]);
        assert_eq!(err.0[0].line, 3);
    }

    #[test]
    fn bad_probability_is_checked() {
        let sc = parse_scenario("script \"x\"\n[device h1]\nmedia drop p=1.5\n").unwrap();
        let script = crate::script::parse_script_text("[roster]\nh1 hmd\n[scene s]\ncue a operator_only\n advance_scene\n").unwrap();
        let diags = check_scenario(&sc, &script);
        assert_eq!(diags.iter().map(|d| d.code).collect::<Vec<_>>(), vec![DiagCode::BadProbability]);
    }
}
