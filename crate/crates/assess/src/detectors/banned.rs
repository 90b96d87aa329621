//! Unbounded copy and read functions.
//!
//! Flags calls to `gets`, `strcpy`, `strcat`, `sprintf`, `vsprintf` and
//! scanf-family calls whose literal format has `%s` or `%[` without a field
//! width. Calls are flagged even when the caller has sized the buffer
//! correctly; that is the documented false-positive mode.

use csc_core::{DetectorId, Severity};

use super::Sink;
use crate::lexer::TokenKind;
use crate::source::Source;

const RULE: &str = "STR31-C";

fn scanf_format_index(name: &str) -> Option<usize> {
    match name {
        "scanf" | "vscanf" => Some(0),
        "fscanf" | "sscanf" | "vfscanf" | "vsscanf" => Some(1),
        _ => None,
    }
}

/// Concatenated contents of a run of string-literal tokens.
pub(crate) fn literal_text(src: &Source, range: std::ops::Range<usize>) -> Option<String> {
    let toks = &src.tokens[range];
    if toks.is_empty() || toks.iter().any(|t| t.kind != TokenKind::Str) {
        return None;
    }
    Some(
        toks.iter()
            .map(|t| {
                let s = t.text.trim_start_matches(['L', 'u', 'U', '8']);
                s.strip_prefix('"')
                    .and_then(|s| s.strip_suffix('"'))
                    .unwrap_or(s)
                    .to_string()
            })
            .collect(),
    )
}

/// A stored `%s` or `%[` conversion without a maximum field width.
pub(crate) fn has_unbounded_string_conversion(format: &str) -> bool {
    let chars: Vec<char> = format.chars().collect();
    let mut i = 0;
    while i < chars.len() {
        if chars[i] != '%' {
            i += 1;
            continue;
        }
        i += 1;
        if chars.get(i) == Some(&'%') {
            i += 1;
            continue;
        }
        let suppressed = chars.get(i) == Some(&'*');
        if suppressed {
            i += 1;
        }
        let mut width = false;
        while chars.get(i).is_some_and(char::is_ascii_digit) {
            width = true;
            i += 1;
        }
        let mut allocating = false;
        while let Some(&c) = chars.get(i) {
            match c {
                'h' | 'l' | 'L' | 'j' | 'z' | 't' | 'q' => i += 1,
                'm' => {
                    allocating = true;
                    i += 1;
                }
                _ => break,
            }
        }
        let conversion = chars.get(i).copied();
        if matches!(conversion, Some('s' | '[')) && !width && !allocating && !suppressed {
            return true;
        }
        i += 1;
        if conversion == Some('[') {
            // Skip the scanset; a leading `]` (after an optional `^`) is literal.
            if chars.get(i) == Some(&'^') {
                i += 1;
            }
            if chars.get(i) == Some(&']') {
                i += 1;
            }
            while chars.get(i).is_some_and(|&c| c != ']') {
                i += 1;
            }
            i += 1;
        }
    }
    false
}

pub(crate) fn check(src: &Source, sink: &mut Sink<'_>) {
    for i in 0..src.tokens.len() {
        if !src.is_call(i) {
            continue;
        }
        let tok = &src.tokens[i];
        let name = tok.text.as_str();
        let (cwe, message) = match name {
            "gets" => (
                "CWE-242",
                "gets() cannot limit how many bytes it stores; any input line longer than the buffer overflows it".to_string(),
            ),
            "strcpy" | "strcat" | "sprintf" | "vsprintf" => (
                "CWE-120",
                format!("{name}() writes into the destination without knowing its size"),
            ),
            _ => {
                let Some(idx) = scanf_format_index(name) else {
                    continue;
                };
                let Some(args) = src.call_args(i + 1) else {
                    continue;
                };
                let Some(fmt) = args.get(idx).and_then(|r| literal_text(src, r.clone())) else {
                    continue;
                };
                if !has_unbounded_string_conversion(&fmt) {
                    continue;
                }
                (
                    "CWE-120",
                    format!("{name}() reads a string with no field width, so long input overflows the buffer"),
                )
            }
        };
        sink.push(DetectorId::BannedFunctions, cwe, RULE, tok.line, Severity::High, message);
    }
}
