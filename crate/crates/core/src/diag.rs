//! Diagnostics shared by the show-script and scenario front ends.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

/// Source position (1-based). `Loc::default()` means "unknown".
///
/// Locations never participate in equality: two scripts that differ only
/// in layout compare equal.
#[derive(Clone, Copy, Debug, Default, Serialize, Deserialize)]
pub struct Loc {
    pub line: u32,
    pub col: u32,
}

impl Loc {
    pub fn new(line: u32, col: u32) -> Self {
        Self { line, col }
    }
}

impl PartialEq for Loc {
    fn eq(&self, _: &Self) -> bool {
        true
    }
}

impl Eq for Loc {}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum DiagCode {
    #[serde(rename = "E_SYNTAX")]
    Syntax,
    #[serde(rename = "E_DUP_ID")]
    DupId,
    #[serde(rename = "E_UNKNOWN_FIELD")]
    UnknownField,
    #[serde(rename = "E_UNKNOWN_REF")]
    UnknownRef,
    #[serde(rename = "E_FORWARD_REF")]
    ForwardRef,
    #[serde(rename = "E_CROSS_SCENE_REF")]
    CrossSceneRef,
    #[serde(rename = "E_ROLE_MISMATCH")]
    RoleMismatch,
    #[serde(rename = "E_DEGENERATE_SHAPE")]
    DegenerateShape,
    #[serde(rename = "E_BAD_DURATION")]
    BadDuration,
    #[serde(rename = "E_NEGATIVE_TIME")]
    NegativeTime,
    #[serde(rename = "E_EMPTY_URI")]
    EmptyUri,
    #[serde(rename = "E_NO_ACTIONS")]
    NoActions,
    #[serde(rename = "E_PHASE_ORDER")]
    PhaseOrder,
    #[serde(rename = "E_NOT_BLOCKING")]
    NotBlocking,
    #[serde(rename = "E_BAD_PROBABILITY")]
    BadProbability,
}

impl DiagCode {
    pub fn as_str(self) -> &'static str {
        match self {
            DiagCode::Syntax => "E_SYNTAX",
            DiagCode::DupId => "E_DUP_ID",
            DiagCode::UnknownField => "E_UNKNOWN_FIELD",
            DiagCode::UnknownRef => "E_UNKNOWN_REF",
            DiagCode::ForwardRef => "E_FORWARD_REF",
            DiagCode::CrossSceneRef => "E_CROSS_SCENE_REF",
            DiagCode::RoleMismatch => "E_ROLE_MISMATCH",
            DiagCode::DegenerateShape => "E_DEGENERATE_SHAPE",
            DiagCode::BadDuration => "E_BAD_DURATION",
            DiagCode::NegativeTime => "E_NEGATIVE_TIME",
            DiagCode::EmptyUri => "E_EMPTY_URI",
            DiagCode::NoActions => "E_NO_ACTIONS",
            DiagCode::PhaseOrder => "E_PHASE_ORDER",
            DiagCode::NotBlocking => "E_NOT_BLOCKING",
            DiagCode::BadProbability => "E_BAD_PROBABILITY",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        serde_json::from_value(serde_json::Value::String(s.to_owned())).ok()
    }
}

impl fmt::Display for DiagCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub code: DiagCode,
    pub line: u32,
    pub col: u32,
    /// Offending id, when the rule is about a named item.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subject: Option<String>,
    pub message: String,
}

impl Diagnostic {
    pub fn new(code: DiagCode, loc: Loc, message: impl Into<String>) -> Self {
        Self {
            code,
            line: loc.line,
            col: loc.col,
            subject: None,
            message: message.into(),
        }
    }

    pub fn with_subject(mut self, subject: impl fmt::Display) -> Self {
        self.subject = Some(subject.to_string());
        self
    }

    /// `path:line:col: CODE message`
    pub fn render(&self, path: &Path) -> String {
        format!(
            "{}:{}:{}: {} {}",
            path.display(),
            self.line,
            self.col,
            self.code,
            self.message
        )
    }
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}: {} {}", self.line, self.col, self.code, self.message)
    }
}

/// A non-empty list of diagnostics, returned when a document cannot be loaded.
#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
#[error("{} diagnostic(s), first: {}", .0.len(), .0[0])]
pub struct Diagnostics(pub Vec<Diagnostic>);

impl Diagnostics {
    pub fn codes(&self) -> Vec<DiagCode> {
        self.0.iter().map(|d| d.code).collect()
    }
}

/// Sort diagnostics into document order; stable for equal positions.
pub fn sort_diagnostics(diags: &mut [Diagnostic]) {
    diags.sort_by_key(|d| (d.line, d.col));
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn render_matches_compiler_style() {
        let d = Diagnostic::new(DiagCode::ForwardRef, Loc::new(12, 5), "cue `b` waits on later cue `c`");
        assert_eq!(
            d.render(Path::new("show.show")),
            "show.show:12:5: E_FORWARD_REF cue `b` waits on later cue `c`"
        );
    }

    #[test]
    fn codes_round_trip_through_text() {
        for code in [DiagCode::Syntax, DiagCode::NotBlocking, DiagCode::BadProbability] {
            assert_eq!(DiagCode::parse(code.as_str()), Some(code));
        }
        assert_eq!(DiagCode::parse("E_NOPE"), None);
    }

    #[test]
    fn locations_do_not_affect_equality() {
        assert_eq!(Loc::new(1, 1), Loc::new(9, 9));
    }
}
