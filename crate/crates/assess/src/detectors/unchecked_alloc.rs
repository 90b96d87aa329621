//! Allocation results used before any NULL comparison.
//!
//! Tracks `p = malloc(..)` (optionally cast) and `T *p = calloc(..)` within
//! one function and follows the later occurrences of `p` in token order. A
//! comparison, negation or appearance in an `if`/`while`/`assert` condition
//! counts as a check; a dereference, subscript, member access or use as a
//! call argument before that is a finding. Assignment to another variable
//! or a `return` stops tracking. Struct-member targets are not tracked.

use csc_core::{DetectorId, Severity};

use super::Sink;
use crate::lexer::{Token, TokenKind};
use crate::source::Source;

const ALLOCATORS: [&str; 3] = ["malloc", "calloc", "realloc"];
const CONDITION_OWNERS: [&str; 3] = ["if", "while", "assert"];
const HARMLESS_CALLEES: [&str; 2] = ["free", "sizeof"];

enum Step {
    Checked,
    Used(&'static str),
    Ignore,
    Untracked,
}

pub(crate) fn is_value(tok: &Token) -> bool {
    matches!(tok.kind, TokenKind::Ident | TokenKind::Number | TokenKind::Str | TokenKind::Char)
        || tok.is(")")
        || tok.is("]")
}

/// Variable receiving the allocation whose call name is at `call`.
fn assigned_variable(src: &Source, call: usize) -> Option<&str> {
    let mut j = call.checked_sub(1)?;
    if src.tokens[j].is(")") {
        let open = src.partner[j]?;
        j = open.checked_sub(1)?;
    }
    if !src.tokens[j].is("=") {
        return None;
    }
    let var = src.tokens.get(j.checked_sub(1)?)?;
    if !var.is_ident() {
        return None;
    }
    if let Some(before) = j.checked_sub(2).and_then(|k| src.tokens.get(k)) {
        if before.is(".") || before.is("->") {
            return None;
        }
    }
    Some(var.text.as_str())
}

fn classify(src: &Source, k: usize) -> Step {
    let next = src.tok(k + 1);
    let prev = src.prev(k);
    let next_is = |s: &str| next.is_some_and(|t| t.is(s));
    let prev_is = |s: &str| prev.is_some_and(|t| t.is(s));

    if prev_is(".") || prev_is("->") {
        return Step::Ignore;
    }
    if prev_is("sizeof") || prev.is_some_and(|p| p.is("*")) && k >= 2 && src.tokens[k - 2].is("sizeof") {
        return Step::Ignore;
    }
    if next_is("->") {
        return Step::Used("dereferenced with ->");
    }
    if next_is("[") {
        return Step::Used("indexed");
    }
    if prev_is("*") {
        let unary = k < 2 || !is_value(&src.tokens[k - 2]);
        if unary {
            return Step::Used("dereferenced");
        }
    }
    if next_is("=") {
        return Step::Untracked;
    }
    if next_is("==") || next_is("!=") || prev_is("==") || prev_is("!=") || prev_is("!") {
        return Step::Checked;
    }
    if next_is("?") || next_is("&&") || next_is("||") || prev_is("&&") || prev_is("||") {
        return Step::Checked;
    }
    if let Some(open) = src.enclosing_paren[k] {
        match src.paren_owner(open) {
            Some(owner) if CONDITION_OWNERS.contains(&owner) => return Step::Checked,
            Some(owner) if HARMLESS_CALLEES.contains(&owner) => return Step::Ignore,
            Some(_) if open > 0 && src.is_call(open - 1) => return Step::Used("passed to a function"),
            _ => {}
        }
    }
    Step::Untracked
}

pub(crate) fn check(src: &Source, sink: &mut Sink<'_>) {
    for func in &src.functions {
        for i in func.clone() {
            if !src.is_call(i) || !ALLOCATORS.contains(&src.tokens[i].text.as_str()) {
                continue;
            }
            let Some(var) = assigned_variable(src, i) else {
                continue;
            };
            let Some(close) = src.partner[i + 1] else {
                continue;
            };
            // `if ((p = malloc(n)) == NULL)`
            let inline_check = src.tok(close + 1).is_some_and(|t| t.is(")"))
                && src
                    .tok(close + 2)
                    .is_some_and(|t| t.is("==") || t.is("!="));
            if inline_check {
                continue;
            }
            for k in close + 1..func.end {
                if !src.tokens[k].is_ident() || src.tokens[k].text != var {
                    continue;
                }
                match classify(src, k) {
                    Step::Ignore => continue,
                    Step::Checked | Step::Untracked => break,
                    Step::Used(how) => {
                        let alloc = &src.tokens[i];
                        sink.push(
                            DetectorId::UncheckedAlloc,
                            "CWE-476",
                            "ERR33-C",
                            src.tokens[k].line,
                            Severity::Medium,
                            format!(
                                "'{var}' from {}() on line {} is {how} before it is checked against NULL",
                                alloc.text, alloc.line
                            ),
                        );
                        break;
                    }
                }
            }
        }
    }
}
