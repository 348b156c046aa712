use std::collections::BTreeMap;

use crate::diag::{sort_diagnostics, DiagCode, Diagnostic, Loc};

use super::*;

/// Check every structural and cross-reference rule. Empty means valid.
pub fn validate_script(script: &ShowScript) -> Vec<Diagnostic> {
    let mut v = Validator { script, out: Vec::new(), cue_pos: BTreeMap::new() };
    v.out.extend(no_scenes(script));
    v.out.extend(duplicate_ids(script));
    for (si, scene) in script.scenes.iter().enumerate() {
        for (ci, cue) in scene.cues.iter().enumerate() {
            v.cue_pos.entry(cue.id.as_str()).or_insert((si, ci));
        }
    }
    v.assets();
    v.colliders();
    v.phases();
    for (si, scene) in script.scenes.iter().enumerate() {
        for (ci, cue) in scene.cues.iter().enumerate() {
            v.cue(si, ci, cue);
        }
    }
    let mut out = v.out;
    sort_diagnostics(&mut out);
    out
}

struct Validator<'a> {
    script: &'a ShowScript,
    out: Vec<Diagnostic>,
    /// First occurrence of each cue id: (scene index, position in scene).
    cue_pos: BTreeMap<&'a str, (usize, usize)>,
}

impl<'a> Validator<'a> {
    fn push(&mut self, code: DiagCode, loc: Loc, subject: &str, msg: String) {
        self.out.push(Diagnostic::new(code, loc, msg).with_subject(subject));
    }

    fn assets(&mut self) {
        for a in &self.script.assets {
            if a.duration_ms <= 0 {
                self.push(
                    DiagCode::BadDuration,
                    a.loc,
                    a.id.as_str(),
                    format!("asset `{}` duration must be positive, got {} ms", a.id, a.duration_ms),
                );
            }
            if a.uri.trim().is_empty() {
                self.push(DiagCode::EmptyUri, a.loc, a.id.as_str(), format!("asset `{}` has an empty uri", a.id));
            }
        }
    }

    fn colliders(&mut self) {
        for c in &self.script.colliders {
            let finite = |v: &[f64; 3]| v.iter().all(|x| x.is_finite());
            let problem = match &c.shape {
                Shape::Sphere { center, radius } => {
                    if !finite(center) || !radius.is_finite() {
                        Some("sphere has non-finite coordinates".to_owned())
                    } else if *radius <= 0.0 {
                        Some(format!("sphere radius must be positive, got {radius}"))
                    } else {
                        None
                    }
                }
                Shape::Box { min, max } => {
                    if !finite(min) || !finite(max) {
                        Some("box has non-finite coordinates".to_owned())
                    } else if (0..3).any(|i| min[i] >= max[i]) {
                        Some("box min must be strictly below max on every axis".to_owned())
                    } else {
                        None
                    }
                }
            };
            let problem = problem.or_else(|| {
                (!(c.hysteresis_m.is_finite() && c.hysteresis_m >= 0.0))
                    .then(|| format!("hysteresis must be a non-negative distance, got {}", c.hysteresis_m))
            });
            if let Some(msg) = problem {
                self.push(DiagCode::DegenerateShape, c.loc, c.id.as_str(), format!("collider `{}`: {msg}", c.id));
            }
            if c.debounce_ms < 0 {
                self.push(
                    DiagCode::NegativeTime,
                    c.loc,
                    c.id.as_str(),
                    format!("collider `{}` debounce must not be negative", c.id),
                );
            }
        }
    }

    fn phases(&mut self) {
        let last = self.script.scenes.len().saturating_sub(1);
        let mut seen_on = false;
        let mut seen_off = false;
        for (i, s) in self.script.scenes.iter().enumerate() {
            let msg = match s.phase {
                Phase::Onboarding if seen_on => Some("only one onboarding scene is allowed"),
                Phase::Onboarding if i != 0 => Some("the onboarding scene must come first"),
                Phase::Offboarding if seen_off => Some("only one offboarding scene is allowed"),
                Phase::Offboarding if i != last => Some("the offboarding scene must come last"),
                _ => None,
            };
            seen_on |= s.phase == Phase::Onboarding;
            seen_off |= s.phase == Phase::Offboarding;
            if let Some(msg) = msg {
                self.push(DiagCode::PhaseOrder, s.loc, s.id.as_str(), format!("scene `{}`: {msg}", s.id));
            }
        }
    }

    fn device(&mut self, id: &DeviceId, want: Role, loc: Loc, usage: &str) {
        match self.script.device(id.as_str()) {
            None => self.push(DiagCode::UnknownRef, loc, id.as_str(), format!("unknown device `{id}`")),
            Some(d) if d.role != want => self.push(
                DiagCode::RoleMismatch,
                loc,
                id.as_str(),
                format!("{usage} needs a {want}, but `{id}` is a {}", d.role),
            ),
            Some(_) => {}
        }
    }

    fn targets(&mut self, targets: &Targets, loc: Loc, usage: &str) {
        if let Targets::Devices(list) = targets {
            if list.is_empty() {
                self.push(DiagCode::UnknownRef, loc, "", format!("{usage} has an empty target list"));
            }
            for d in list {
                self.device(d, Role::Hmd, loc, usage);
            }
        }
    }

    fn asset(&mut self, id: &AssetId, loc: Loc) {
        if self.script.asset(id.as_str()).is_none() {
            self.push(DiagCode::UnknownRef, loc, id.as_str(), format!("unknown asset `{id}`"));
        }
    }

    fn predecessor(&mut self, si: usize, ci: usize, cue: &Cue, pred: &CueId) -> Option<&'a Cue> {
        let loc = cue.trigger_loc;
        match self.cue_pos.get(pred.as_str()).copied() {
            None => {
                self.push(DiagCode::UnknownRef, loc, pred.as_str(), format!("unknown cue `{pred}`"));
                None
            }
            Some((psi, _)) if psi != si => {
                self.push(
                    DiagCode::CrossSceneRef,
                    loc,
                    pred.as_str(),
                    format!("cue `{}` waits on `{pred}` from another scene", cue.id),
                );
                None
            }
            Some((_, pci)) if pci >= ci => {
                self.push(
                    DiagCode::ForwardRef,
                    loc,
                    pred.as_str(),
                    format!("cue `{}` waits on `{pred}`, which is not earlier in the scene", cue.id),
                );
                None
            }
            Some((psi, pci)) => {
                let script: &'a ShowScript = self.script;
                Some(&script.scenes[psi].cues[pci])
            }
        }
    }

    fn cue(&mut self, si: usize, ci: usize, cue: &Cue) {
        if cue.actions.is_empty() {
            self.push(DiagCode::NoActions, cue.loc, cue.id.as_str(), format!("cue `{}` has no actions", cue.id));
        }
        match &cue.trigger {
            Trigger::Manual { device, .. } => self.device(device, Role::Wearable, cue.trigger_loc, "manual trigger"),
            Trigger::AutoAfter { after, delay_ms } => {
                if *delay_ms < 0 {
                    self.push(
                        DiagCode::NegativeTime,
                        cue.trigger_loc,
                        cue.id.as_str(),
                        format!("cue `{}` delay must not be negative", cue.id),
                    );
                }
                if let Some(pred) = after {
                    self.predecessor(si, ci, cue, pred);
                }
            }
            Trigger::ColliderEnter { collider } | Trigger::ColliderExit { collider } => {
                if self.script.collider(collider.as_str()).is_none() {
                    self.push(
                        DiagCode::UnknownRef,
                        cue.trigger_loc,
                        collider.as_str(),
                        format!("unknown collider `{collider}`"),
                    );
                }
            }
            Trigger::ContentEnd { after } => {
                if let Some(pred) = self.predecessor(si, ci, cue, after) {
                    if !pred.blocking {
                        self.push(
                            DiagCode::NotBlocking,
                            cue.trigger_loc,
                            after.as_str(),
                            format!("content_end waits on `{after}`, which is not a blocking cue"),
                        );
                    }
                }
            }
            Trigger::OperatorOnly => {}
        }
        for (i, action) in cue.actions.iter().enumerate() {
            let loc = cue.action_loc(i);
            match action {
                Action::PlayMedia { asset, targets, start_offset_ms } => {
                    self.asset(asset, loc);
                    self.targets(targets, loc, "play_media");
                    if *start_offset_ms < 0 {
                        self.push(
                            DiagCode::NegativeTime,
                            loc,
                            asset.as_str(),
                            "play_media offset must not be negative".to_owned(),
                        );
                    }
                }
                Action::StopMedia { asset, targets } => {
                    self.asset(asset, loc);
                    self.targets(targets, loc, "stop_media");
                }
                Action::Buzz { device, .. } => self.device(device, Role::Wearable, loc, "buzz"),
                Action::AdvanceScene => {}
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::script::parse_script_text;

    fn codes(doc: &str) -> Vec<(DiagCode, u32)> {
        let s = parse_script_text(doc).unwrap();
        validate_script(&s).into_iter().map(|d| (d.code, d.line)).collect()
    }

    const HEAD: &str = "[roster]\nh1 hmd\nw1 wearable\n[assets]\nx audio duration=1000 uri=\"x\"\n[colliders]\nball sphere center=(0,0,0) radius=1\n";

    #[test]
    fn valid_script_is_clean() {
        let doc = format!(
            "{HEAD}[scene s]\ncue a operator_only blocking\n play_media x\ncue b content_end a\n buzz w1 short\ncue c collider_enter ball\n advance_scene\n"
        );
        assert_eq!(codes(&doc), vec![]);
    }

    #[test]
    fn forward_and_self_reference() {
        let doc = format!("{HEAD}[scene s]\ncue a auto_after b 0\n buzz w1 short\ncue b operator_only\n buzz w1 short\n");
        assert_eq!(codes(&doc), vec![(DiagCode::ForwardRef, 9)]);
        let doc = format!("{HEAD}[scene s]\ncue a auto_after a 0\n buzz w1 short\n");
        assert_eq!(codes(&doc), vec![(DiagCode::ForwardRef, 9)]);
    }

    #[test]
    fn buzz_on_hmd_is_role_mismatch() {
        let doc = format!("{HEAD}[scene s]\ncue a operator_only\n buzz h1 long\n");
        assert_eq!(codes(&doc), vec![(DiagCode::RoleMismatch, 10)]);
    }

    #[test]
    fn zero_radius_is_degenerate() {
        let doc = HEAD.replace("radius=1", "radius=0") + "[scene s]\ncue a operator_only\n buzz w1 long\n";
        assert_eq!(codes(&doc), vec![(DiagCode::DegenerateShape, 7)]);
    }

    #[test]
    fn manual_cues_may_reference_later_cues_freely() {
        // Roots carry no ordering constraint.
        let doc = format!("{HEAD}[scene s]\ncue a manual w1 go\n buzz w1 short\ncue b manual w1 go\n buzz w1 short\n");
        assert_eq!(codes(&doc), vec![]);
    }

    #[test]
    fn content_end_needs_blocking_predecessor() {
        let doc = format!("{HEAD}[scene s]\ncue a operator_only\n play_media x\ncue b content_end a\n buzz w1 short\n");
        assert_eq!(codes(&doc), vec![(DiagCode::NotBlocking, 11)]);
    }

    #[test]
    fn phase_order() {
        let doc = format!(
            "{HEAD}[scene a]\ncue a1 operator_only\n advance_scene\n[scene b phase=onboarding]\ncue b1 operator_only\n advance_scene\n"
        );
        assert_eq!(codes(&doc), vec![(DiagCode::PhaseOrder, 11)]);
    }
}
