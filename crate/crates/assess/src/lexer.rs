//! Minimal C tokenizer: enough to find calls, arguments, declarations and
//! block structure. Preprocessor lines are dropped except object-like
//! `#define NAME <integer>`, which feeds the declared-size table.

use std::collections::BTreeMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TokenKind {
    Ident,
    Number,
    Str,
    Char,
    Punct,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub kind: TokenKind,
    pub text: String,
    pub line: u32,
}

impl Token {
    pub fn is(&self, text: &str) -> bool {
        self.text == text && matches!(self.kind, TokenKind::Punct | TokenKind::Ident)
    }

    pub fn is_ident(&self) -> bool {
        self.kind == TokenKind::Ident
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LexProblem {
    UnterminatedComment { line: u32 },
    UnterminatedString { line: u32 },
}

#[derive(Debug, Clone, Default)]
pub struct Lexed {
    pub tokens: Vec<Token>,
    pub defines: BTreeMap<String, u64>,
    pub problems: Vec<LexProblem>,
}

const PUNCT3: [&str; 4] = ["<<=", ">>=", "...", "->*"];
const PUNCT2: [&str; 19] = [
    "->", "++", "--", "<<", ">>", "<=", ">=", "==", "!=", "&&", "||", "+=", "-=", "*=", "/=",
    "%=", "&=", "|=", "^=",
];

/// Parses a C integer literal (decimal, hex, octal, with suffixes).
pub fn parse_int(text: &str) -> Option<u64> {
    let t = text.trim_end_matches(['u', 'U', 'l', 'L']);
    if let Some(hex) = t.strip_prefix("0x").or_else(|| t.strip_prefix("0X")) {
        u64::from_str_radix(hex, 16).ok()
    } else if t.len() > 1 && t.starts_with('0') {
        u64::from_str_radix(&t[1..], 8).ok()
    } else {
        t.parse().ok()
    }
}

pub fn lex(src: &str) -> Lexed {
    let bytes = src.as_bytes();
    let mut out = Lexed::default();
    let mut i = 0;
    let mut line = 1u32;
    let mut at_line_start = true;

    while i < bytes.len() {
        let c = bytes[i];
        match c {
            b'\n' => {
                line += 1;
                at_line_start = true;
                i += 1;
            }
            b' ' | b'\t' | b'\r' | b'\x0b' | b'\x0c' => i += 1,
            b'\\' if bytes.get(i + 1) == Some(&b'\n') => {
                line += 1;
                i += 2;
            }
            b'/' if bytes.get(i + 1) == Some(&b'/') => {
                while i < bytes.len() && bytes[i] != b'\n' {
                    i += 1;
                }
            }
            b'/' if bytes.get(i + 1) == Some(&b'*') => {
                let start = line;
                i += 2;
                let mut closed = false;
                while i < bytes.len() {
                    if bytes[i] == b'*' && bytes.get(i + 1) == Some(&b'/') {
                        i += 2;
                        closed = true;
                        break;
                    }
                    if bytes[i] == b'\n' {
                        line += 1;
                    }
                    i += 1;
                }
                if !closed {
                    out.problems.push(LexProblem::UnterminatedComment { line: start });
                }
            }
            b'#' if at_line_start => {
                let start = i;
                // Directive runs to the first newline not escaped by a backslash.
                while i < bytes.len() && bytes[i] != b'\n' {
                    if bytes[i] == b'\\' && bytes.get(i + 1) == Some(&b'\n') {
                        line += 1;
                        i += 1;
                    }
                    i += 1;
                }
                record_define(&src[start..i], &mut out.defines);
            }
            b'"' | b'\'' => {
                let start = i;
                let start_line = line;
                i += 1;
                let mut closed = false;
                while i < bytes.len() {
                    match bytes[i] {
                        b'\\' => i += 2,
                        b'\n' => break,
                        q if q == c => {
                            i += 1;
                            closed = true;
                            break;
                        }
                        _ => i += 1,
                    }
                }
                let i_end = i.min(bytes.len());
                if !closed {
                    out.problems.push(LexProblem::UnterminatedString { line: start_line });
                }
                out.tokens.push(Token {
                    kind: if c == b'"' { TokenKind::Str } else { TokenKind::Char },
                    text: src[start..i_end].to_string(),
                    line: start_line,
                });
                i = i_end;
                at_line_start = false;
            }
            c if c.is_ascii_alphabetic() || c == b'_' => {
                let start = i;
                while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                    i += 1;
                }
                // String prefixes such as L"..." or u8"..." belong to the literal.
                if i < bytes.len() && bytes[i] == b'"' && matches!(&src[start..i], "L" | "u" | "U" | "u8") {
                    continue;
                }
                out.tokens.push(Token {
                    kind: TokenKind::Ident,
                    text: src[start..i].to_string(),
                    line,
                });
                at_line_start = false;
            }
            c if c.is_ascii_digit() || (c == b'.' && bytes.get(i + 1).is_some_and(u8::is_ascii_digit)) => {
                let start = i;
                while i < bytes.len()
                    && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'.' || bytes[i] == b'_')
                {
                    i += 1;
                }
                out.tokens.push(Token {
                    kind: TokenKind::Number,
                    text: src[start..i].to_string(),
                    line,
                });
                at_line_start = false;
            }
            _ => {
                let rest = &src[i..];
                let len = PUNCT3
                    .iter()
                    .chain(PUNCT2.iter())
                    .find(|p| rest.starts_with(*p))
                    .map_or_else(|| rest.chars().next().map_or(1, char::len_utf8), |p| p.len());
                out.tokens.push(Token {
                    kind: TokenKind::Punct,
                    text: rest[..len].to_string(),
                    line,
                });
                i += len;
                at_line_start = false;
            }
        }
    }
    out
}

fn record_define(directive: &str, defines: &mut BTreeMap<String, u64>) {
    let body = directive.trim_start_matches('#').trim_start();
    let Some(rest) = body.strip_prefix("define") else {
        return;
    };
    let mut parts = rest.split_whitespace();
    let (Some(name), Some(value)) = (parts.next(), parts.next()) else {
        return;
    };
    if name.contains('(') || parts.next().is_some() {
        return;
    }
    let value = value.trim_start_matches('(').trim_end_matches(')');
    if let Some(v) = parse_int(value) {
        defines.insert(name.to_string(), v);
    }
}
