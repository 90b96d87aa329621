//! Indices equal to an array's declared size.
//!
//! Reports `a[N]` where `a` is declared with `N` elements (literal or
//! `#define` constant), and `for` loops bounded by `i <= N` whose body
//! indexes such an array with `i`. Arrays declared with computed sizes are
//! unknown, and a `char a[N + 1]` buffer indexed at `N` is correctly left
//! alone. Sizes are matched by name, so shadowed names can mislead it.

use csc_core::{DetectorId, Severity};

use super::Sink;
use crate::source::Source;

fn push(sink: &mut Sink<'_>, line: u32, message: String) {
    sink.push(DetectorId::OffByOne, "CWE-193", "ARR30-C", line, Severity::Medium, message);
}

fn constant_index(src: &Source, sink: &mut Sink<'_>) {
    for i in 0..src.tokens.len().saturating_sub(3) {
        let name = &src.tokens[i];
        if !name.is_ident() || !src.tokens[i + 1].is("[") || !src.tokens[i + 3].is("]") {
            continue;
        }
        if src.is_array_declaration(i) || src.prev(i).is_some_and(|p| p.is(".") || p.is("->")) {
            continue;
        }
        let Some(index) = src.constant(&src.tokens[i + 2]) else {
            continue;
        };
        if let Some(decl) = src.declared_size(&name.text, i) {
            if decl.size == index {
                push(
                    sink,
                    name.line,
                    format!(
                        "index {index} is one past the end of '{}', declared with {index} elements on line {}",
                        name.text, src.tokens[decl.at].line
                    ),
                );
            }
        }
    }
}

fn inclusive_loops(src: &Source, sink: &mut Sink<'_>) {
    for f in 0..src.tokens.len() {
        if !src.tokens[f].is("for") || !src.tok(f + 1).is_some_and(|t| t.is("(")) {
            continue;
        }
        let open = f + 1;
        let Some(close) = src.partner[open] else {
            continue;
        };
        let header = open + 1..close;
        let Some(le) = header.clone().find(|&k| src.tokens[k].is("<=")) else {
            continue;
        };
        let var = &src.tokens[le - 1];
        let Some(bound) = src.tok(le + 1).and_then(|t| src.constant(t)) else {
            continue;
        };
        if !var.is_ident() || !src.tok(le + 2).is_some_and(|t| t.is(";")) {
            continue;
        }
        let body_start = close + 1;
        let body_end = match src.tok(body_start) {
            Some(t) if t.is("{") => src.partner[body_start].unwrap_or(body_start),
            _ => (body_start..src.tokens.len())
                .find(|&k| src.tokens[k].is(";"))
                .unwrap_or(src.tokens.len()),
        };
        for k in body_start..body_end.saturating_sub(2) {
            let arr = &src.tokens[k];
            let indexed_by_var = src.tokens[k + 1].is("[")
                && src.tokens[k + 2].text == var.text
                && src.tok(k + 3).is_some_and(|t| t.is("]"));
            if !arr.is_ident() || !indexed_by_var {
                continue;
            }
            if src.declared_size(&arr.text, k).is_some_and(|d| d.size == bound) {
                push(
                    sink,
                    src.tokens[f].line,
                    format!(
                        "the loop runs {} up to {bound} inclusive, but '{}' has only {bound} elements",
                        var.text, arr.text
                    ),
                );
                break;
            }
        }
    }
}

pub(crate) fn check(src: &Source, sink: &mut Sink<'_>) {
    constant_index(src, sink);
    inclusive_loops(src, sink);
}
