//! Line tokenizer for the sectioned text formats (`.show`, `.scenario`).
//!
//! A document is a sequence of lines. `#` starts a comment outside quotes.
//! A line is either a section header `[name args...]` or a list of tokens:
//! bare words, quoted strings, and `key=value` pairs whose value is a bare
//! word, a quoted string, or a parenthesized tuple `(x, y, z)`.

use std::collections::BTreeMap;

use crate::diag::{DiagCode, Diagnostic, Loc};

#[derive(Clone, Debug, PartialEq)]
pub enum Value {
    Word(String),
    Str(String),
    Tuple(Vec<String>),
}

#[derive(Clone, Debug, PartialEq)]
pub enum TokenKind {
    Word(String),
    Str(String),
    Pair { key: String, value: Value, value_col: u32 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Token {
    pub col: u32,
    pub kind: TokenKind,
}

#[derive(Clone, Debug)]
pub struct Line {
    pub number: u32,
    pub indent: u32,
    /// True for `[ ... ]` section headers; tokens are the bracket contents.
    pub header: bool,
    pub tokens: Vec<Token>,
}

impl Line {
    pub fn loc(&self) -> Loc {
        Loc::new(self.number, self.tokens.first().map_or(1, |t| t.col))
    }

    pub fn fields(&self) -> Fields<'_> {
        Fields { line: self, pos: 0 }
    }

    pub fn first_word(&self) -> Option<&str> {
        match self.tokens.first().map(|t| &t.kind) {
            Some(TokenKind::Word(w)) => Some(w),
            _ => None,
        }
    }
}

fn is_word_char(c: char) -> bool {
    !c.is_whitespace() && !matches!(c, '"' | '=' | '(' | ')' | '#' | '[' | ']')
}

pub fn is_identifier(s: &str) -> bool {
    !s.is_empty()
        && s
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.'))
}

/// Tokenize a whole document. Blank and comment-only lines are dropped.
pub fn lex(doc: &str) -> Result<Vec<Line>, Vec<Diagnostic>> {
    let mut lines = Vec::new();
    let mut errors = Vec::new();
    for (idx, raw) in doc.lines().enumerate() {
        let number = idx as u32 + 1;
        match lex_line(raw, number) {
            Ok(Some(line)) => lines.push(line),
            Ok(None) => {}
            Err(d) => errors.push(d),
        }
    }
    if errors.is_empty() {
        Ok(lines)
    } else {
        Err(errors)
    }
}

struct Scanner<'a> {
    chars: Vec<char>,
    pos: usize,
    line: u32,
    _src: &'a str,
}

impl Scanner<'_> {
    fn peek(&self) -> Option<char> {
        self.chars.get(self.pos).copied()
    }

    fn col(&self) -> u32 {
        self.pos as u32 + 1
    }

    fn err(&self, message: impl Into<String>) -> Diagnostic {
        Diagnostic::new(DiagCode::Syntax, Loc::new(self.line, self.col()), message)
    }

    fn skip_ws(&mut self) {
        while matches!(self.peek(), Some(c) if c.is_whitespace()) {
            self.pos += 1;
        }
    }

    fn at_end(&self) -> bool {
        matches!(self.peek(), None | Some('#'))
    }

    fn word(&mut self) -> String {
        let start = self.pos;
        while matches!(self.peek(), Some(c) if is_word_char(c)) {
            self.pos += 1;
        }
        self.chars[start..self.pos].iter().collect()
    }

    fn quoted(&mut self) -> Result<String, Diagnostic> {
        let open = self.col();
        self.pos += 1;
        let mut out = String::new();
        loop {
            match self.peek() {
                None => {
                    return Err(Diagnostic::new(
                        DiagCode::Syntax,
                        Loc::new(self.line, open),
                        "unterminated string",
                    ))
                }
                Some('"') => {
                    self.pos += 1;
                    return Ok(out);
                }
                Some('\\') => {
                    self.pos += 1;
                    let esc = self.peek().ok_or_else(|| self.err("dangling escape"))?;
                    out.push(match esc {
                        'n' => '\n',
                        't' => '\t',
                        '"' => '"',
                        '\\' => '\\',
                        other => return Err(self.err(format!("unknown escape `\\{other}`"))),
                    });
                    self.pos += 1;
                }
                Some(c) => {
                    out.push(c);
                    self.pos += 1;
                }
            }
        }
    }

    fn tuple(&mut self) -> Result<Vec<String>, Diagnostic> {
        let open = self.col();
        self.pos += 1;
        let mut body = String::new();
        loop {
            match self.peek() {
                None => {
                    return Err(Diagnostic::new(
                        DiagCode::Syntax,
                        Loc::new(self.line, open),
                        "unterminated tuple",
                    ))
                }
                Some(')') => {
                    self.pos += 1;
                    break;
                }
                Some(c) => {
                    body.push(c);
                    self.pos += 1;
                }
            }
        }
        Ok(body.split(',').map(|s| s.trim().to_owned()).collect())
    }

    fn token(&mut self) -> Result<Token, Diagnostic> {
        let col = self.col();
        match self.peek() {
            Some('"') => Ok(Token { col, kind: TokenKind::Str(self.quoted()?) }),
            Some(c) if is_word_char(c) => {
                let word = self.word();
                if self.peek() != Some('=') {
                    return Ok(Token { col, kind: TokenKind::Word(word) });
                }
                self.pos += 1;
                let value_col = self.col();
                let value = match self.peek() {
                    Some('"') => Value::Str(self.quoted()?),
                    Some('(') => Value::Tuple(self.tuple()?),
                    Some(c) if is_word_char(c) => Value::Word(self.word()),
                    _ => return Err(self.err(format!("missing value for `{word}`"))),
                };
                Ok(Token { col, kind: TokenKind::Pair { key: word, value, value_col } })
            }
            Some(c) => Err(self.err(format!("unexpected character `{c}`"))),
            None => Err(self.err("unexpected end of line")),
        }
    }
}

fn lex_line(raw: &str, number: u32) -> Result<Option<Line>, Diagnostic> {
    let mut s = Scanner { chars: raw.chars().collect(), pos: 0, line: number, _src: raw };
    s.skip_ws();
    let indent = s.pos as u32;
    if s.at_end() {
        return Ok(None);
    }
    let header = s.peek() == Some('[');
    if header {
        s.pos += 1;
    }
    let mut tokens = Vec::new();
    loop {
        s.skip_ws();
        if header && s.peek() == Some(']') {
            s.pos += 1;
            s.skip_ws();
            if !s.at_end() {
                return Err(s.err("unexpected text after section header"));
            }
            if tokens.is_empty() {
                return Err(Diagnostic::new(DiagCode::Syntax, Loc::new(number, indent + 1), "empty section header"));
            }
            break;
        }
        if s.at_end() {
            if header {
                return Err(s.err("missing `]`"));
            }
            break;
        }
        tokens.push(s.token()?);
    }
    Ok(Some(Line { number, indent, header, tokens }))
}

/// Cursor over a line's tokens: positional words first, then `key=value`
/// pairs and bare flags in any order.
pub struct Fields<'a> {
    line: &'a Line,
    pos: usize,
}

/// Parsed tail of a line.
#[derive(Debug, Default)]
pub struct Rest {
    pub pairs: BTreeMap<String, (Value, Loc)>,
    pub flags: BTreeMap<String, Loc>,
}

impl<'a> Fields<'a> {
    fn end_loc(&self) -> Loc {
        let col = self
            .line
            .tokens
            .last()
            .map_or(self.line.indent + 1, |t| t.col);
        Loc::new(self.line.number, col)
    }

    pub fn loc(&self) -> Loc {
        match self.line.tokens.get(self.pos) {
            Some(t) => Loc::new(self.line.number, t.col),
            None => self.end_loc(),
        }
    }

    /// A positional bare word.
    pub fn word(&mut self, what: &str) -> Result<(String, Loc), Diagnostic> {
        match self.line.tokens.get(self.pos) {
            Some(Token { col, kind: TokenKind::Word(w) }) => {
                self.pos += 1;
                Ok((w.clone(), Loc::new(self.line.number, *col)))
            }
            Some(t) => Err(Diagnostic::new(
                DiagCode::Syntax,
                Loc::new(self.line.number, t.col),
                format!("expected {what}"),
            )),
            None => Err(Diagnostic::new(DiagCode::Syntax, self.end_loc(), format!("missing {what}"))),
        }
    }

    /// A positional identifier (`[A-Za-z0-9_.-]+`).
    pub fn ident(&mut self, what: &str) -> Result<(String, Loc), Diagnostic> {
        let (w, loc) = self.word(what)?;
        if is_identifier(&w) {
            Ok((w, loc))
        } else {
            Err(Diagnostic::new(DiagCode::Syntax, loc, format!("invalid {what} `{w}`")))
        }
    }

    /// A positional quoted string, if present.
    pub fn opt_string(&mut self) -> Option<(String, Loc)> {
        match self.line.tokens.get(self.pos) {
            Some(Token { col, kind: TokenKind::Str(s) }) => {
                self.pos += 1;
                Some((s.clone(), Loc::new(self.line.number, *col)))
            }
            _ => None,
        }
    }

    pub fn string(&mut self, what: &str) -> Result<(String, Loc), Diagnostic> {
        let loc = self.loc();
        self.opt_string()
            .ok_or_else(|| Diagnostic::new(DiagCode::Syntax, loc, format!("expected quoted {what}")))
    }

    /// Consume the remaining tokens as pairs and flags, rejecting unknown names.
    pub fn rest(&mut self, keys: &[&str], flags: &[&str]) -> Result<Rest, Diagnostic> {
        let mut rest = Rest::default();
        while let Some(tok) = self.line.tokens.get(self.pos) {
            self.pos += 1;
            let loc = Loc::new(self.line.number, tok.col);
            match &tok.kind {
                TokenKind::Pair { key, value, value_col } => {
                    if !keys.contains(&key.as_str()) {
                        return Err(Diagnostic::new(DiagCode::UnknownField, loc, format!("unknown field `{key}`"))
                            .with_subject(key));
                    }
                    let vloc = Loc::new(self.line.number, *value_col);
                    if rest.pairs.insert(key.clone(), (value.clone(), vloc)).is_some() {
                        return Err(Diagnostic::new(DiagCode::Syntax, loc, format!("field `{key}` given twice")));
                    }
                }
                TokenKind::Word(w) => {
                    if !flags.contains(&w.as_str()) {
                        return Err(Diagnostic::new(DiagCode::UnknownField, loc, format!("unknown field `{w}`"))
                            .with_subject(w));
                    }
                    rest.flags.insert(w.clone(), loc);
                }
                TokenKind::Str(_) => {
                    return Err(Diagnostic::new(DiagCode::Syntax, loc, "unexpected string"));
                }
            }
        }
        Ok(rest)
    }

    /// Fail if any token is left over.
    pub fn finish(&self) -> Result<(), Diagnostic> {
        match self.line.tokens.get(self.pos) {
            None => Ok(()),
            Some(t) => Err(Diagnostic::new(
                DiagCode::Syntax,
                Loc::new(self.line.number, t.col),
                "unexpected trailing token",
            )),
        }
    }
}

impl Rest {
    pub fn take(&mut self, key: &str) -> Option<(Value, Loc)> {
        self.pairs.remove(key)
    }

    pub fn require(&mut self, key: &str, at: Loc) -> Result<(Value, Loc), Diagnostic> {
        self.take(key)
            .ok_or_else(|| Diagnostic::new(DiagCode::Syntax, at, format!("missing field `{key}`")))
    }

    pub fn flag(&self, name: &str) -> bool {
        self.flags.contains_key(name)
    }
}

impl Value {
    pub fn text(&self) -> Option<&str> {
        match self {
            Value::Word(s) | Value::Str(s) => Some(s),
            Value::Tuple(_) => None,
        }
    }

    pub fn as_i64(&self, loc: Loc, key: &str) -> Result<i64, Diagnostic> {
        match self {
            Value::Word(w) => w
                .parse()
                .map_err(|_| Diagnostic::new(DiagCode::Syntax, loc, format!("`{key}` must be an integer"))),
            _ => Err(Diagnostic::new(DiagCode::Syntax, loc, format!("`{key}` must be an integer"))),
        }
    }

    pub fn as_f64(&self, loc: Loc, key: &str) -> Result<f64, Diagnostic> {
        match self {
            Value::Word(w) => parse_f64(w)
                .ok_or_else(|| Diagnostic::new(DiagCode::Syntax, loc, format!("`{key}` must be a number"))),
            _ => Err(Diagnostic::new(DiagCode::Syntax, loc, format!("`{key}` must be a number"))),
        }
    }

    pub fn as_vec3(&self, loc: Loc, key: &str) -> Result<[f64; 3], Diagnostic> {
        let bad = || Diagnostic::new(DiagCode::Syntax, loc, format!("`{key}` must be a tuple (x, y, z)"));
        match self {
            Value::Tuple(parts) if parts.len() == 3 => {
                let mut out = [0.0; 3];
                for (slot, p) in out.iter_mut().zip(parts) {
                    *slot = parse_f64(p).ok_or_else(bad)?;
                }
                Ok(out)
            }
            _ => Err(bad()),
        }
    }

    pub fn as_text(&self, loc: Loc, key: &str) -> Result<String, Diagnostic> {
        self.text()
            .map(str::to_owned)
            .ok_or_else(|| Diagnostic::new(DiagCode::Syntax, loc, format!("`{key}` must be text")))
    }
}

/// Decimal number; also accepts `inf`/`nan` spellings so validation (not
/// the lexer) owns the finiteness rule.
pub fn parse_f64(s: &str) -> Option<f64> {
    s.parse().ok()
}

/// Quote a string for the text formats.
pub fn quote(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    out.push('"');
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\t' => out.push_str("\\t"),
            c => out.push(c),
        }
    }
    out.push('"');
    out
}

/// Format a float so it parses back to the identical value.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lexes_pairs_tuples_and_comments() {
        let lines = lex("  hall sphere center=(0, 1.5,-2) radius=1 # door\n\n# only comment\n").unwrap();
        assert_eq!(lines.len(), 1);
        let l = &lines[0];
        assert_eq!(l.indent, 2);
        assert_eq!(l.tokens[0], Token { col: 3, kind: TokenKind::Word("hall".into()) });
        match &l.tokens[2].kind {
            TokenKind::Pair { key, value: Value::Tuple(parts), .. } => {
                assert_eq!(key, "center");
                assert_eq!(parts, &["0", "1.5", "-2"]);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn quoted_strings_keep_hash_and_escapes() {
        let lines = lex(r#"title "Act #1 \"Hall\"""#).unwrap();
        assert_eq!(lines[0].tokens[1].kind, TokenKind::Str("Act #1 \"Hall\"".into()));
    }

    #[test]
    fn headers_and_errors() {
        let lines = lex("[scene intro phase=onboarding]").unwrap();
        assert!(lines[0].header);
        assert_eq!(lines[0].tokens.len(), 3);

        let errs = lex("[scene intro\nx \"open").unwrap_err();
        assert_eq!(errs.len(), 2);
        assert!(errs.iter().all(|d| d.code == DiagCode::Syntax));
        assert_eq!((errs[1].line, errs[1].col), (2, 3));
    }

    #[test]
    fn rest_rejects_unknown_keys() {
        let lines = lex("a b=1 colour=red").unwrap();
        let mut f = lines[0].fields();
        f.word("id").unwrap();
        let err = f.rest(&["b"], &[]).unwrap_err();
        assert_eq!(err.code, DiagCode::UnknownField);
        assert_eq!(err.col, 7);
    }

    #[test]
    fn float_formatting_round_trips() {
        for v in [0.1, -2.5e-7, 1.0, 12345.678] {
            assert_eq!(parse_f64(&fmt_f64(v)), Some(v));
        }
    }
}
