//! Multiplications in allocation sizes with no preceding bounds check.
//!
//! Looks at the size argument of `malloc` and `realloc` (`calloc` checks
//! its own product). A binary `*` whose variable operands never appear in
//! an earlier `if`/`while`/`assert` comparison in the same function is
//! reported. Operands that are all literals, `#define` constants or
//! `sizeof` expressions are exempt. Sizes computed into a variable first
//! are not followed.

use std::collections::BTreeSet;
use std::ops::Range;

use csc_core::{DetectorId, Severity};

use super::unchecked_alloc::is_value;
use super::Sink;
use crate::source::Source;

const TYPE_NAMES: [&str; 14] = [
    "char", "short", "int", "long", "unsigned", "signed", "float", "double", "void", "const",
    "struct", "union", "enum", "volatile",
];
const COMPARISONS: [&str; 4] = ["<", ">", "<=", ">="];

fn size_argument(name: &str) -> Option<usize> {
    match name {
        "malloc" => Some(0),
        "realloc" => Some(1),
        _ => None,
    }
}

/// Variable identifiers in `range`, skipping `sizeof` operands and types.
fn variable_operands(src: &Source, range: Range<usize>) -> BTreeSet<String> {
    let mut vars = BTreeSet::new();
    let mut k = range.start;
    while k < range.end {
        let t = &src.tokens[k];
        if t.is("sizeof") {
            k += 1;
            if src.tok(k).is_some_and(|n| n.is("(")) {
                k = src.partner[k].map_or(range.end, |c| c + 1);
            } else {
                while src.tok(k).is_some_and(|n| n.is("*")) {
                    k += 1;
                }
                k += 1;
            }
            continue;
        }
        let is_type = TYPE_NAMES.contains(&t.text.as_str()) || t.text.ends_with("_t");
        let is_callee = src.tok(k + 1).is_some_and(|n| n.is("("));
        if t.is_ident() && !is_type && !is_callee && !src.is_constant_name(t) {
            vars.insert(t.text.clone());
        }
        k += 1;
    }
    vars
}

fn has_binary_product(src: &Source, range: Range<usize>) -> Option<usize> {
    range.clone().find(|&k| {
        src.tokens[k].is("*") && k > range.start && is_value(&src.tokens[k - 1])
    })
}

/// Some operand appears in an earlier comparison inside a condition.
fn guarded(src: &Source, func: &Range<usize>, before: usize, vars: &BTreeSet<String>) -> bool {
    for k in func.start..before {
        if src.tokens[k].is("__builtin_mul_overflow") {
            return true;
        }
        let t = &src.tokens[k];
        if !t.is_ident() || !vars.contains(&t.text) {
            continue;
        }
        let mut open = src.enclosing_paren[k];
        while let Some(o) = open {
            if matches!(src.paren_owner(o), Some("if" | "while" | "assert")) {
                let close = src.partner[o].unwrap_or(o);
                if (o..close).any(|j| COMPARISONS.iter().any(|c| src.tokens[j].is(c))) {
                    return true;
                }
            }
            open = src.enclosing_paren[o];
        }
    }
    false
}

pub(crate) fn check(src: &Source, sink: &mut Sink<'_>) {
    for func in &src.functions {
        for i in func.clone() {
            if !src.is_call(i) {
                continue;
            }
            let name = src.tokens[i].text.as_str();
            let Some(idx) = size_argument(name) else {
                continue;
            };
            let Some(arg) = src.call_args(i + 1).and_then(|a| a.get(idx).cloned()) else {
                continue;
            };
            let Some(star) = has_binary_product(src, arg.clone()) else {
                continue;
            };
            let vars = variable_operands(src, arg.clone());
            if vars.is_empty() || guarded(src, func, i, &vars) {
                continue;
            }
            sink.push(
                DetectorId::OverflowSizeArith,
                "CWE-190",
                "INT30-C",
                src.tokens[star].line,
                Severity::Medium,
                format!(
                    "the size passed to {name}() is `{}`; the multiplication can wrap before any bounds check",
                    src.text_of(arg)
                ),
            );
        }
    }
}
