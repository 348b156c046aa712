use crate::diag::{sort_diagnostics, DiagCode, Diagnostic, Diagnostics, Loc};

use super::{duplicate_ids, no_scenes, ShowScript};

/// Parse the JSON encoding (`.show.json`).
///
/// JSON carries no per-item positions through serde, so item locations are
/// recovered by matching `"id": "<value>"` occurrences in document order.
pub fn parse_script_json(doc: &str) -> Result<ShowScript, Diagnostics> {
    let mut script: ShowScript = serde_json::from_str(doc).map_err(|e| {
        let text = e.to_string();
        let code = if text.contains("unknown field") || text.contains("unknown variant") {
            DiagCode::UnknownField
        } else {
            DiagCode::Syntax
        };
        let msg = text.split(" at line ").next().unwrap_or(&text).to_owned();
        Diagnostics(vec![Diagnostic::new(code, Loc::new(e.line() as u32, e.column() as u32), msg)])
    })?;
    locate_ids(doc, &mut script);
    let mut diags = Vec::new();
    diags.extend(no_scenes(&script));
    diags.extend(duplicate_ids(&script));
    if diags.is_empty() {
        Ok(script)
    } else {
        sort_diagnostics(&mut diags);
        Err(Diagnostics(diags))
    }
}

pub fn to_json(script: &ShowScript) -> String {
    serde_json::to_string_pretty(script).expect("show scripts always serialize")
}

/// Positions of every `"id": "<value>"` in the document, in order.
fn id_positions(doc: &str) -> Vec<(String, Loc)> {
    let mut out = Vec::new();
    let bytes = doc.as_bytes();
    let mut search = 0;
    while let Some(rel) = doc[search..].find("\"id\"") {
        let at = search + rel;
        search = at + 4;
        let mut i = search;
        while i < bytes.len() && bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        if i >= bytes.len() || bytes[i] != b':' {
            continue;
        }
        i += 1;
        while i < bytes.len() && bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        if i >= bytes.len() || bytes[i] != b'"' {
            continue;
        }
        let start = i + 1;
        let Some(len) = doc[start..].find('"') else { break };
        let value = doc[start..start + len].to_owned();
        let line = doc[..at].matches('\n').count() as u32 + 1;
        let col = doc[..at].rsplit('\n').next().map_or(0, |l| l.chars().count()) as u32 + 1;
        out.push((value, Loc::new(line, col)));
    }
    out
}

fn locate_ids(doc: &str, script: &mut ShowScript) {
    let positions = id_positions(doc);
    let mut used = vec![false; positions.len()];
    let mut find = |id: &str| -> Loc {
        for (i, (value, loc)) in positions.iter().enumerate() {
            if !used[i] && value == id {
                used[i] = true;
                return *loc;
            }
        }
        Loc::default()
    };
    for d in &mut script.roster {
        d.loc = find(d.id.as_str());
    }
    for a in &mut script.assets {
        a.loc = find(a.id.as_str());
    }
    for c in &mut script.colliders {
        c.loc = find(c.id.as_str());
    }
    for s in &mut script.scenes {
        s.loc = find(s.id.as_str());
        for cue in &mut s.cues {
            cue.loc = find(cue.id.as_str());
            cue.trigger_loc = cue.loc;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::script::{parse_script, Trigger};

    const DOC: &str = r#"{
  "title": "Json show",
  "roster": [{"id": "h1", "role": "hmd"}, {"id": "w1", "role": "wearable", "label": "Actor"}],
  "assets": [{"id": "x", "kind": "audio", "duration_ms": 1200, "uri": "x.ogg"}],
  "scenes": [
    {"id": "s1", "phase": "onboarding", "cues": [
      {"id": "c1", "trigger": "operator_only", "blocking": true,
       "actions": [{"play_media": {"asset": "x"}}]},
      {"id": "c2", "trigger": {"content_end": {"after": "c1"}},
       "actions": [{"buzz": {"device": "w1", "pattern": "double"}}]}
    ]}
  ]
}"#;

    #[test]
    fn parses_and_locates() {
        let s = parse_script(DOC).unwrap();
        assert_eq!(s.roster.len(), 2);
        assert_eq!(s.scenes[0].cues[1].trigger, Trigger::ContentEnd { after: "c1".into() });
        assert_eq!(s.scenes[0].cues[1].loc.line, 9);
        assert_eq!(s.roster[1].loc.line, 3);
    }

    #[test]
    fn unknown_field_in_json() {
        let doc = DOC.replace("\"uri\"", "\"loop\": true, \"uri\"");
        let err = parse_script_json(&doc).unwrap_err();
        assert_eq!(err.codes(), vec![DiagCode::UnknownField]);
        assert_eq!(err.0[0].line, 4);
    }

    #[test]
    fn duplicate_ids_in_json() {
        let doc = DOC.replace("\"id\": \"w1\"", "\"id\": \"h1\"");
        let err = parse_script_json(&doc).unwrap_err();
        assert_eq!(err.codes(), vec![DiagCode::DupId]);
        assert_eq!(err.0[0].line, 3);
    }

    #[test]
    fn json_round_trip() {
        let s = parse_script(DOC).unwrap();
        assert_eq!(parse_script(&to_json(&s)).unwrap(), s);
    }
}
