//! Lightweight structure over a token stream: bracket matching, function
//! bodies, call arguments and the declared-size table.

use std::collections::BTreeMap;
use std::ops::Range;

use crate::lexer::{self, LexProblem, Token, TokenKind};

/// Identifiers that can precede `name(` or `name[` without declaring it.
const NON_TYPE_KEYWORDS: [&str; 10] = [
    "return", "sizeof", "case", "goto", "else", "do", "if", "while", "for", "switch",
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArrayDecl {
    pub name: String,
    pub size: u64,
    /// Token index of the name.
    pub at: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Problem {
    pub line: u32,
    pub message: String,
}

#[derive(Debug)]
pub struct Source {
    pub tokens: Vec<Token>,
    pub defines: BTreeMap<String, u64>,
    /// Partner index for every bracket token that has one.
    pub partner: Vec<Option<usize>>,
    /// Innermost enclosing `(` for every token.
    pub enclosing_paren: Vec<Option<usize>>,
    /// Number of open `{` before every token.
    pub brace_depth: Vec<u32>,
    /// Function bodies as `{`..=`}` token ranges.
    pub functions: Vec<Range<usize>>,
    pub arrays: Vec<ArrayDecl>,
    pub problems: Vec<Problem>,
}

fn closer(open: &str) -> &'static str {
    match open {
        "(" => ")",
        "[" => "]",
        _ => "}",
    }
}

impl Source {
    pub fn parse(text: &str) -> Source {
        let lexed = lexer::lex(text);
        let tokens = lexed.tokens;
        let mut problems: Vec<Problem> = lexed
            .problems
            .iter()
            .map(|p| match p {
                LexProblem::UnterminatedComment { line } => Problem {
                    line: *line,
                    message: "comment is never closed".into(),
                },
                LexProblem::UnterminatedString { line } => Problem {
                    line: *line,
                    message: "string or character literal is never closed".into(),
                },
            })
            .collect();

        let mut partner = vec![None; tokens.len()];
        let mut enclosing_paren = vec![None; tokens.len()];
        let mut brace_depth = vec![0; tokens.len()];
        let mut functions = Vec::new();
        let mut stack: Vec<usize> = Vec::new();
        for (i, tok) in tokens.iter().enumerate() {
            enclosing_paren[i] = stack.iter().rev().find(|&&o| tokens[o].is("(")).copied();
            brace_depth[i] = stack.iter().filter(|&&o| tokens[o].is("{")).count() as u32;
            if tok.kind != TokenKind::Punct {
                continue;
            }
            match tok.text.as_str() {
                "(" | "[" | "{" => stack.push(i),
                ")" | "]" | "}" => match stack.last() {
                    Some(&open) if closer(&tokens[open].text) == tok.text => {
                        stack.pop();
                        partner[open] = Some(i);
                        partner[i] = Some(open);
                        let at_top = stack.is_empty();
                        if tok.text == "}" && at_top && open > 0 && tokens[open - 1].is(")") {
                            functions.push(open..i + 1);
                        }
                    }
                    Some(&open) => {
                        problems.push(Problem {
                            line: tok.line,
                            message: format!(
                                "'{}' does not match '{}' opened on line {}",
                                tok.text, tokens[open].text, tokens[open].line
                            ),
                        });
                        // Resynchronise on the nearest matching opener, if any.
                        if let Some(pos) = stack
                            .iter()
                            .rposition(|&o| closer(&tokens[o].text) == tok.text)
                        {
                            stack.truncate(pos);
                        }
                    }
                    None => problems.push(Problem {
                        line: tok.line,
                        message: format!("unexpected '{}' with nothing to close", tok.text),
                    }),
                },
                _ => {}
            }
        }
        for &open in &stack {
            problems.push(Problem {
                line: tokens[open].line,
                message: format!("'{}' is never closed", tokens[open].text),
            });
        }
        problems.sort_by_key(|p| p.line);

        let mut source = Source {
            tokens,
            defines: lexed.defines,
            partner,
            enclosing_paren,
            brace_depth,
            functions,
            arrays: Vec::new(),
            problems,
        };
        source.arrays = source.collect_arrays();
        source
    }

    /// Structure-dependent detectors only run on files that parsed cleanly.
    pub fn is_structured(&self) -> bool {
        self.problems.is_empty()
    }

    pub fn tok(&self, i: usize) -> Option<&Token> {
        self.tokens.get(i)
    }

    pub fn prev(&self, i: usize) -> Option<&Token> {
        i.checked_sub(1).and_then(|p| self.tokens.get(p))
    }

    /// Value of an integer literal or `#define` constant token.
    pub fn constant(&self, tok: &Token) -> Option<u64> {
        match tok.kind {
            TokenKind::Number => lexer::parse_int(&tok.text),
            TokenKind::Ident => self.defines.get(&tok.text).copied(),
            _ => None,
        }
    }

    pub fn is_constant_name(&self, tok: &Token) -> bool {
        tok.is_ident() && self.defines.contains_key(&tok.text)
    }

    fn is_declaring_prefix(&self, i: usize) -> bool {
        match self.prev(i) {
            Some(p) if p.is_ident() => !NON_TYPE_KEYWORDS.contains(&p.text.as_str()),
            Some(p) if p.is("*") => i >= 2 && self.tokens[i - 2].is_ident(),
            _ => false,
        }
    }

    fn collect_arrays(&self) -> Vec<ArrayDecl> {
        let mut out = Vec::new();
        for i in 0..self.tokens.len().saturating_sub(3) {
            let t = &self.tokens[i];
            if !t.is_ident() || !self.tokens[i + 1].is("[") || !self.tokens[i + 3].is("]") {
                continue;
            }
            if !self.is_declaring_prefix(i) {
                continue;
            }
            if let Some(size) = self.constant(&self.tokens[i + 2]) {
                out.push(ArrayDecl {
                    name: t.text.clone(),
                    size,
                    at: i,
                });
            }
        }
        out
    }

    /// Declared size of array `name` visible at token `at`: the closest
    /// preceding declaration, else any declaration in the file.
    pub fn declared_size(&self, name: &str, at: usize) -> Option<&ArrayDecl> {
        let mut named = self.arrays.iter().filter(|a| a.name == name);
        let before = self
            .arrays
            .iter()
            .filter(|a| a.name == name && a.at < at)
            .max_by_key(|a| a.at);
        before.or_else(|| named.next())
    }

    pub fn is_array_declaration(&self, at: usize) -> bool {
        self.arrays.iter().any(|a| a.at == at)
    }

    /// `i` names a function call inside a block.
    pub fn is_call(&self, i: usize) -> bool {
        let Some(t) = self.tok(i) else { return false };
        if !t.is_ident() || NON_TYPE_KEYWORDS.contains(&t.text.as_str()) {
            return false;
        }
        if !self.tok(i + 1).is_some_and(|n| n.is("(")) || self.brace_depth[i] == 0 {
            return false;
        }
        match self.prev(i) {
            Some(p) if p.is(".") || p.is("->") => false,
            Some(p) if p.is_ident() => NON_TYPE_KEYWORDS.contains(&p.text.as_str()),
            _ => true,
        }
    }

    /// Top-level argument ranges of the call whose `(` is at `open`.
    pub fn call_args(&self, open: usize) -> Option<Vec<Range<usize>>> {
        let close = self.partner.get(open).copied().flatten()?;
        let mut args = Vec::new();
        let mut start = open + 1;
        let mut depth = 0usize;
        for j in open + 1..close {
            let t = &self.tokens[j];
            if t.kind != TokenKind::Punct {
                continue;
            }
            match t.text.as_str() {
                "(" | "[" | "{" => depth += 1,
                ")" | "]" | "}" => depth = depth.saturating_sub(1),
                "," if depth == 0 => {
                    args.push(start..j);
                    start = j + 1;
                }
                _ => {}
            }
        }
        if start < close || !args.is_empty() {
            args.push(start..close);
        }
        Some(args)
    }

    /// Name of the call or keyword owning the `(` at `open`.
    pub fn paren_owner(&self, open: usize) -> Option<&str> {
        self.prev(open).filter(|t| t.is_ident()).map(|t| t.text.as_str())
    }

    pub fn text_of(&self, range: Range<usize>) -> String {
        let mut out = String::new();
        for t in &self.tokens[range] {
            if !out.is_empty() && needs_space(out.chars().last().unwrap(), &t.text) {
                out.push(' ');
            }
            out.push_str(&t.text);
        }
        out
    }
}

fn needs_space(prev: char, next: &str) -> bool {
    let first = next.chars().next().unwrap_or(' ');
    (prev.is_alphanumeric() || prev == '_') && (first.is_alphanumeric() || first == '_')
}
