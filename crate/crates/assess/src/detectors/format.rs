//! printf-family calls whose format argument is not a string literal.
//!
//! Wrappers that forward their own `fmt` parameter to `vprintf` and friends
//! are reported too; their callers are not traced.

use csc_core::{DetectorId, Severity};

use super::banned::literal_text;
use super::Sink;
use crate::source::Source;

fn format_index(name: &str) -> Option<usize> {
    match name {
        "printf" | "vprintf" => Some(0),
        "fprintf" | "vfprintf" | "dprintf" | "vdprintf" | "sprintf" | "vsprintf" | "syslog" => Some(1),
        "snprintf" | "vsnprintf" => Some(2),
        _ => None,
    }
}

pub(crate) fn check(src: &Source, sink: &mut Sink<'_>) {
    for i in 0..src.tokens.len() {
        if !src.is_call(i) {
            continue;
        }
        let name = src.tokens[i].text.as_str();
        let Some(idx) = format_index(name) else {
            continue;
        };
        let Some(args) = src.call_args(i + 1) else {
            continue;
        };
        let Some(arg) = args.get(idx) else {
            continue;
        };
        if literal_text(src, arg.clone()).is_some() {
            continue;
        }
        let shown = src.text_of(arg.clone());
        sink.push(
            DetectorId::FormatString,
            "CWE-134",
            "FIO30-C",
            src.tokens[i].line,
            Severity::High,
            format!("the format argument of {name}() is `{shown}`, not a string literal"),
        );
    }
}
