//! The `.show` text encoding.
//!
//! ```text
//! title "House Visit"
//!
//! [roster]
//! h1 hmd "Visitor 1"
//! w1 wearable "Butler"
//!
//! [assets]
//! portrait spatial-media duration=5000 uri="assets/portrait.glb"
//!
//! [colliders]
//! doorway sphere center=(0, 0, 1.5) radius=1.2 filter=hmd-only
//! stairs box min=(0, 0, 0) max=(2, 3, 2) hysteresis=0.1 debounce=250
//!
//! [scene hall phase=onboarding]
//! cue welcome operator_only blocking
//!   play_media portrait targets=all-hmds offset=0
//!   note "Butler greets the group"
//! cue resume content_end welcome
//!   buzz w1 short
//! cue reveal manual w1 btnA
//!   play_media portrait targets=h1,h2
//! cue later auto_after reveal 500
//!   advance_scene
//! ```
//!
//! Triggers: `manual DEVICE BUTTON`, `auto_after CUE|@start DELAY_MS`,
//! `collider_enter COLLIDER`, `collider_exit COLLIDER`, `content_end CUE`,
//! `operator_only`. A trailing `blocking` flag makes the cue complete only
//! when all of its media has ended.

use std::fmt::Write as _;

use crate::diag::{sort_diagnostics, DiagCode, Diagnostic, Diagnostics, Loc};
use crate::lex::{self, fmt_f64, quote, Fields, Line};

use super::*;

/// Reserved predecessor name for `auto_after` meaning "scene start".
pub const SCENE_START: &str = "@start";

enum Section {
    Preamble,
    Roster,
    Assets,
    Colliders,
    Scene,
}

pub fn parse_script_text(doc: &str) -> Result<ShowScript, Diagnostics> {
    let lines = lex::lex(doc).map_err(Diagnostics)?;
    let mut parser = Parser {
        script: ShowScript {
            title: String::new(),
            roster: Vec::new(),
            assets: Vec::new(),
            colliders: Vec::new(),
            scenes: Vec::new(),
        },
        section: Section::Preamble,
        title_seen: false,
        in_cue: false,
        skipping_cue: false,
        diags: Vec::new(),
    };
    for line in &lines {
        if let Err(d) = parser.line(line) {
            parser.diags.push(d);
        }
    }
    let Parser { script, mut diags, .. } = parser;
    if diags.is_empty() {
        if let Some(d) = no_scenes(&script) {
            diags.push(d);
        }
    }
    diags.extend(duplicate_ids(&script));
    if diags.is_empty() {
        Ok(script)
    } else {
        sort_diagnostics(&mut diags);
        Err(Diagnostics(diags))
    }
}

struct Parser {
    script: ShowScript,
    section: Section,
    title_seen: bool,
    in_cue: bool,
    /// Set after a malformed cue header so its actions do not cascade errors.
    skipping_cue: bool,
    diags: Vec<Diagnostic>,
}

fn syntax(loc: Loc, msg: impl Into<String>) -> Diagnostic {
    Diagnostic::new(DiagCode::Syntax, loc, msg)
}

impl Parser {
    fn line(&mut self, line: &Line) -> Result<(), Diagnostic> {
        if line.header {
            return self.header(line);
        }
        match self.section {
            Section::Preamble => self.preamble(line),
            Section::Roster => self.roster(line),
            Section::Assets => self.asset(line),
            Section::Colliders => self.collider(line),
            Section::Scene => self.scene_line(line),
        }
    }

    fn header(&mut self, line: &Line) -> Result<(), Diagnostic> {
        let mut f = line.fields();
        let (name, loc) = f.word("section name")?;
        self.in_cue = false;
        self.skipping_cue = false;
        match name.as_str() {
            "roster" => self.section = Section::Roster,
            "assets" => self.section = Section::Assets,
            "colliders" => self.section = Section::Colliders,
            "scene" => {
                // Keep later lines attached to *a* scene even if this header is bad.
                self.section = Section::Scene;
                let (id, id_loc) = f.ident("scene id")?;
                let mut rest = f.rest(&["phase"], &[])?;
                let phase = match rest.take("phase") {
                    None => Phase::Main,
                    Some((v, vloc)) => v
                        .text()
                        .and_then(Phase::parse)
                        .ok_or_else(|| syntax(vloc, "phase must be onboarding, main or offboarding"))?,
                };
                self.script.scenes.push(Scene { id: id.into(), phase, cues: Vec::new(), loc: id_loc });
                return Ok(());
            }
            other => {
                self.section = Section::Preamble;
                return Err(Diagnostic::new(DiagCode::UnknownField, loc, format!("unknown section `{other}`"))
                    .with_subject(other));
            }
        }
        f.finish()
    }

    fn preamble(&mut self, line: &Line) -> Result<(), Diagnostic> {
        let mut f = line.fields();
        let (kw, loc) = f.word("`title` or a section header")?;
        if kw != "title" {
            return Err(syntax(loc, format!("expected `title` or a section header, found `{kw}`")));
        }
        if self.title_seen {
            return Err(syntax(loc, "title given twice"));
        }
        let (title, _) = f.string("title")?;
        f.finish()?;
        self.script.title = title;
        self.title_seen = true;
        Ok(())
    }

    fn roster(&mut self, line: &Line) -> Result<(), Diagnostic> {
        let mut f = line.fields();
        let (id, loc) = f.ident("device id")?;
        let (role, role_loc) = f.word("device role")?;
        let role = Role::parse(&role)
            .ok_or_else(|| syntax(role_loc, format!("unknown role `{role}` (expected hmd or wearable)")))?;
        let label = f.opt_string().map(|(s, _)| s).unwrap_or_default();
        f.finish()?;
        self.script.roster.push(DeviceDecl { id: id.into(), role, label, loc });
        Ok(())
    }

    fn asset(&mut self, line: &Line) -> Result<(), Diagnostic> {
        let mut f = line.fields();
        let (id, loc) = f.ident("asset id")?;
        let (kind, kind_loc) = f.word("asset kind")?;
        let kind = AssetKind::parse(&kind)
            .ok_or_else(|| syntax(kind_loc, format!("unknown asset kind `{kind}` (expected spatial-media or audio)")))?;
        let mut rest = f.rest(&["duration", "uri"], &[])?;
        let (dur, dloc) = rest.require("duration", loc)?;
        let duration_ms = dur.as_i64(dloc, "duration")?;
        let (uri, uloc) = rest.require("uri", loc)?;
        let uri = uri.as_text(uloc, "uri")?;
        self.script.assets.push(AssetDecl { id: id.into(), kind, duration_ms, uri, loc });
        Ok(())
    }

    fn collider(&mut self, line: &Line) -> Result<(), Diagnostic> {
        let mut f = line.fields();
        let (id, loc) = f.ident("collider id")?;
        let (shape_kw, shape_loc) = f.word("collider shape")?;
        let mut rest = f.rest(
            &["center", "radius", "min", "max", "filter", "hysteresis", "debounce"],
            &[],
        )?;
        let not_for = |rest: &crate::lex::Rest, keys: &[&str], shape: &str| -> Result<(), Diagnostic> {
            for k in keys {
                if let Some((_, kloc)) = rest.pairs.get(*k) {
                    return Err(syntax(*kloc, format!("`{k}` does not apply to a {shape}")));
                }
            }
            Ok(())
        };
        let shape = match shape_kw.as_str() {
            "sphere" => {
                not_for(&rest, &["min", "max"], "sphere")?;
                let (c, cloc) = rest.require("center", loc)?;
                let (r, rloc) = rest.require("radius", loc)?;
                Shape::Sphere { center: c.as_vec3(cloc, "center")?, radius: r.as_f64(rloc, "radius")? }
            }
            "box" => {
                not_for(&rest, &["center", "radius"], "box")?;
                let (lo, lloc) = rest.require("min", loc)?;
                let (hi, hloc) = rest.require("max", loc)?;
                Shape::Box { min: lo.as_vec3(lloc, "min")?, max: hi.as_vec3(hloc, "max")? }
            }
            other => return Err(syntax(shape_loc, format!("unknown shape `{other}` (expected sphere or box)"))),
        };
        let mut decl = ColliderDecl::new(id, shape);
        decl.loc = loc;
        if let Some((v, vloc)) = rest.take("filter") {
            decl.filter = v
                .text()
                .and_then(SubjectFilter::parse)
                .ok_or_else(|| syntax(vloc, "filter must be any, hmd-only or wearable-only"))?;
        }
        if let Some((v, vloc)) = rest.take("hysteresis") {
            decl.hysteresis_m = v.as_f64(vloc, "hysteresis")?;
        }
        if let Some((v, vloc)) = rest.take("debounce") {
            decl.debounce_ms = v.as_i64(vloc, "debounce")?;
        }
        self.script.colliders.push(decl);
        Ok(())
    }

    fn scene_line(&mut self, line: &Line) -> Result<(), Diagnostic> {
        if self.script.scenes.is_empty() {
            // Header was malformed; its error is already reported.
            return Ok(());
        }
        let kw = line.first_word().unwrap_or_default();
        if kw == "cue" {
            self.in_cue = false;
            self.skipping_cue = true;
            let cue = cue_header(line)?;
            self.script.scenes.last_mut().expect("scene").cues.push(cue);
            self.in_cue = true;
            self.skipping_cue = false;
            return Ok(());
        }
        if self.skipping_cue {
            return Ok(());
        }
        if !self.in_cue {
            return Err(syntax(line.loc(), "action outside of a cue"));
        }
        let cue = self
            .script
            .scenes
            .last_mut()
            .and_then(|s| s.cues.last_mut())
            .expect("current cue");
        let mut f = line.fields();
        let (kw, loc) = f.word("action")?;
        let action = match kw.as_str() {
            "play_media" => {
                let (asset, _) = f.ident("asset id")?;
                let mut rest = f.rest(&["targets", "offset"], &[])?;
                let targets = targets(&mut rest)?;
                let start_offset_ms = match rest.take("offset") {
                    Some((v, vloc)) => v.as_i64(vloc, "offset")?,
                    None => 0,
                };
                Action::PlayMedia { asset: asset.into(), targets, start_offset_ms }
            }
            "stop_media" => {
                let (asset, _) = f.ident("asset id")?;
                let mut rest = f.rest(&["targets"], &[])?;
                Action::StopMedia { asset: asset.into(), targets: targets(&mut rest)? }
            }
            "buzz" => {
                let (device, _) = f.ident("device id")?;
                let (pattern, ploc) = f.word("buzz pattern")?;
                let pattern = BuzzPattern::parse(&pattern)
                    .ok_or_else(|| syntax(ploc, format!("unknown buzz pattern `{pattern}`")))?;
                f.finish()?;
                Action::Buzz { device: device.into(), pattern }
            }
            "advance_scene" => {
                f.finish()?;
                Action::AdvanceScene
            }
            "note" => {
                let (text, _) = f.string("note text")?;
                f.finish()?;
                cue.notes.push(text);
                return Ok(());
            }
            other => return Err(syntax(loc, format!("unknown action `{other}`"))),
        };
        cue.actions.push(action);
        cue.action_locs.0.push(loc);
        Ok(())
    }
}

fn targets(rest: &mut crate::lex::Rest) -> Result<Targets, Diagnostic> {
    match rest.take("targets") {
        None => Ok(Targets::AllHmds),
        Some((v, vloc)) => v
            .text()
            .and_then(Targets::parse_text)
            .ok_or_else(|| syntax(vloc, "targets must be all-hmds or a comma-separated device list")),
    }
}

fn cue_header(line: &Line) -> Result<Cue, Diagnostic> {
    let mut f: Fields<'_> = line.fields();
    f.word("cue")?;
    let (id, loc) = f.ident("cue id")?;
    let (kind, trigger_loc) = f.word("trigger")?;
    let trigger = match kind.as_str() {
        "manual" => {
            let (device, _) = f.ident("device id")?;
            let (button, _) = f.word("button id")?;
            Trigger::Manual { device: device.into(), button }
        }
        "auto_after" => {
            let (after, aloc) = f.word("predecessor cue or @start")?;
            let after = if after == SCENE_START {
                None
            } else if lex::is_identifier(&after) {
                Some(CueId::from(after))
            } else {
                return Err(syntax(aloc, format!("invalid predecessor `{after}`")));
            };
            let (delay, dloc) = f.word("delay in ms")?;
            let delay_ms = delay.parse().map_err(|_| syntax(dloc, "delay must be an integer"))?;
            Trigger::AutoAfter { after, delay_ms }
        }
        "collider_enter" => Trigger::ColliderEnter { collider: f.ident("collider id")?.0.into() },
        "collider_exit" => Trigger::ColliderExit { collider: f.ident("collider id")?.0.into() },
        "content_end" => Trigger::ContentEnd { after: f.ident("predecessor cue")?.0.into() },
        "operator_only" => Trigger::OperatorOnly,
        other => return Err(syntax(trigger_loc, format!("unknown trigger `{other}`"))),
    };
    let rest = f.rest(&[], &["blocking"])?;
    let mut cue = Cue::new(id, trigger, Vec::new());
    cue.blocking = rest.flag("blocking");
    cue.loc = loc;
    cue.trigger_loc = trigger_loc;
    Ok(cue)
}

fn fmt_vec3(v: &[f64; 3]) -> String {
    format!("({}, {}, {})", fmt_f64(v[0]), fmt_f64(v[1]), fmt_f64(v[2]))
}

/// Render a script in the text encoding. Parsing the output yields a script
/// equal to the input.
pub fn to_text(script: &ShowScript) -> String {
    let mut out = String::new();
    if !script.title.is_empty() {
        let _ = writeln!(out, "title {}", quote(&script.title));
    }
    if !script.roster.is_empty() {
        out.push_str("\n[roster]\n");
        for d in &script.roster {
            let _ = writeln!(out, "{} {} {}", d.id, d.role, quote(&d.label));
        }
    }
    if !script.assets.is_empty() {
        out.push_str("\n[assets]\n");
        for a in &script.assets {
            let _ = writeln!(out, "{} {} duration={} uri={}", a.id, a.kind.as_str(), a.duration_ms, quote(&a.uri));
        }
    }
    if !script.colliders.is_empty() {
        out.push_str("\n[colliders]\n");
        for c in &script.colliders {
            let shape = match &c.shape {
                Shape::Sphere { center, radius } => {
                    format!("sphere center={} radius={}", fmt_vec3(center), fmt_f64(*radius))
                }
                Shape::Box { min, max } => format!("box min={} max={}", fmt_vec3(min), fmt_vec3(max)),
            };
            let _ = writeln!(
                out,
                "{} {} filter={} hysteresis={} debounce={}",
                c.id,
                shape,
                c.filter.as_str(),
                fmt_f64(c.hysteresis_m),
                c.debounce_ms
            );
        }
    }
    for scene in &script.scenes {
        let _ = writeln!(out, "\n[scene {} phase={}]", scene.id, scene.phase.as_str());
        for cue in &scene.cues {
            let trigger = match &cue.trigger {
                Trigger::Manual { device, button } => format!("manual {device} {button}"),
                Trigger::AutoAfter { after, delay_ms } => format!(
                    "auto_after {} {delay_ms}",
                    after.as_ref().map_or(SCENE_START, |c| c.as_str())
                ),
                Trigger::ColliderEnter { collider } => format!("collider_enter {collider}"),
                Trigger::ColliderExit { collider } => format!("collider_exit {collider}"),
                Trigger::ContentEnd { after } => format!("content_end {after}"),
                Trigger::OperatorOnly => "operator_only".to_owned(),
            };
            let blocking = if cue.blocking { " blocking" } else { "" };
            let _ = writeln!(out, "cue {} {trigger}{blocking}", cue.id);
            for action in &cue.actions {
                let line = match action {
                    Action::PlayMedia { asset, targets, start_offset_ms } => format!(
                        "play_media {asset} targets={} offset={start_offset_ms}",
                        targets.to_text()
                    ),
                    Action::StopMedia { asset, targets } => {
                        format!("stop_media {asset} targets={}", targets.to_text())
                    }
                    Action::Buzz { device, pattern } => format!("buzz {device} {}", pattern.as_str()),
                    Action::AdvanceScene => "advance_scene".to_owned(),
                };
                let _ = writeln!(out, "  {line}");
            }
            for note in &cue.notes {
                let _ = writeln!(out, "  note {}", quote(note));
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
title "Minimal"
[roster]
h1 hmd "Visitor"
[assets]
x spatial-media duration=5000 uri="x.glb"
[scene only]
cue c1 operator_only
  play_media x
"#;

    #[test]
    fn empty_document_has_no_scenes() {
        let err = parse_script_text("").unwrap_err();
        assert_eq!(err.codes(), vec![DiagCode::Syntax]);
        assert_eq!(err.0[0].message, "no scenes declared");
    }

    #[test]
    fn minimal_script() {
        let s = parse_script_text(MINIMAL).unwrap();
        assert_eq!(s.scenes.len(), 1);
        assert_eq!(s.cue_count(), 1);
        assert_eq!(s.assets[0].duration_ms, 5000);
        assert_eq!(s.scenes[0].phase, Phase::Main);
        assert_eq!(s.scenes[0].cues[0].trigger, Trigger::OperatorOnly);
        assert_eq!(s.scenes[0].cues[0].loc, Loc::new(8, 5));
        assert_eq!(s.scenes[0].cues[0].action_locs.0[0].line, 9);
    }

    #[test]
    fn four_hmds_two_wearables() {
        let doc = r#"
[roster]
h1 hmd "Visitor 1"
h2 hmd "Visitor 2"
h3 hmd "Visitor 3"
h4 hmd "Visitor 4"
w1 wearable "Actor in the hall"
w2 wearable "Actor in the parlour"
[assets]
x audio duration=1000 uri="x.ogg"
[scene s]
cue c operator_only
  buzz w1 short
"#;
        let s = parse_script_text(doc).unwrap();
        assert_eq!(s.roster.len(), 6);
        assert_eq!(s.hmds().count(), 4);
    }

    #[test]
    fn reports_every_duplicate() {
        let doc = r#"
[roster]
h1 hmd
h1 hmd
h1 hmd
[scene s]
cue c operator_only
  advance_scene
cue c operator_only
  advance_scene
"#;
        let err = parse_script_text(doc).unwrap_err();
        assert_eq!(err.codes(), vec![DiagCode::DupId; 3]);
        let lines: Vec<u32> = err.0.iter().map(|d| d.line).collect();
        assert_eq!(lines, vec![4, 5, 9]);
    }

    #[test]
    fn unknown_fields_and_sections() {
        let err = parse_script_text("[props]\n[scene s]\ncue c operator_only\n advance_scene\n").unwrap_err();
        assert_eq!(err.codes(), vec![DiagCode::UnknownField]);
        let err = parse_script_text(
            "[assets]\nx audio duration=1 uri=\"u\" loop=true\n[scene s]\ncue c operator_only\n advance_scene\n",
        )
        .unwrap_err();
        assert_eq!(err.codes(), vec![DiagCode::UnknownField]);
        assert_eq!((err.0[0].line, err.0[0].col), (2, 28));
    }

    #[test]
    fn malformed_cue_does_not_cascade() {
        let doc = "[scene s]\ncue c teleport\n  advance_scene\n  advance_scene\ncue d operator_only\n  advance_scene\n";
        let err = parse_script_text(doc).unwrap_err();
        assert_eq!(err.codes(), vec![DiagCode::Syntax]);
        assert_eq!((err.0[0].line, err.0[0].col), (2, 7));
    }

    #[test]
    fn scene_start_predecessor() {
        let doc = "[scene s]\ncue a auto_after @start 250\n  advance_scene\ncue b auto_after a 0 blocking\n  advance_scene\n";
        let s = parse_script_text(doc).unwrap();
        assert_eq!(s.scenes[0].cues[0].trigger, Trigger::AutoAfter { after: None, delay_ms: 250 });
        assert_eq!(
            s.scenes[0].cues[1].trigger,
            Trigger::AutoAfter { after: Some("a".into()), delay_ms: 0 }
        );
        assert!(s.scenes[0].cues[1].blocking);
    }

    #[test]
    fn text_round_trip_on_minimal() {
        let s = parse_script_text(MINIMAL).unwrap();
        let again = parse_script_text(&to_text(&s)).unwrap();
        assert_eq!(s, again);
    }
}
