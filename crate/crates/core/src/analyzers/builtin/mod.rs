//! Hermetic pattern analyzer.
//!
//! A token-level heuristic over C source. It covers the unbounded-input and
//! handle/allocation-lifetime patterns that dominate completions of small C
//! programs, so the whole pipeline can run without CppCheck or Infer installed.
//! It is not a dataflow engine; false negatives are expected.

mod lexer;

use crate::diagnostics::{
    AnalysisReport, AnalyzerKind, Diagnostic, Severity, SourceLocation, VulnerabilityCategory,
};

pub use lexer::{tokenize, Token, TokenKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BuiltinRule {
    pub id: &'static str,
    pub cwe: u32,
    pub description: &'static str,
}

pub const SCANF_UNBOUNDED: BuiltinRule = BuiltinRule {
    id: "scanf-unbounded-string",
    cwe: 119,
    description: "scanf/fscanf reads a %s conversion without a field width",
};
pub const GETS_CALL: BuiltinRule = BuiltinRule {
    id: "gets-call",
    cwe: 119,
    description: "gets() cannot limit the number of bytes it stores",
};
pub const FOPEN_UNCHECKED: BuiltinRule = BuiltinRule {
    id: "fopen-unchecked",
    cwe: 476,
    description: "fopen() result is used before being compared against NULL",
};
pub const FOPEN_UNCLOSED: BuiltinRule = BuiltinRule {
    id: "fopen-unclosed",
    cwe: 775,
    description: "fopen() handle is never closed in the opening function",
};
pub const ALLOC_UNFREED: BuiltinRule = BuiltinRule {
    id: "alloc-unfreed",
    cwe: 401,
    description: "malloc/calloc result is neither freed nor returned",
};

pub const RULES: [BuiltinRule; 5] = [
    SCANF_UNBOUNDED,
    GETS_CALL,
    FOPEN_UNCHECKED,
    FOPEN_UNCLOSED,
    ALLOC_UNFREED,
];

/// File label used when the caller does not name the snippet.
pub const DEFAULT_FILE_LABEL: &str = "candidate.c";

pub fn run_builtin(source: &str) -> AnalysisReport {
    run_builtin_as(source, DEFAULT_FILE_LABEL)
}

pub fn run_builtin_as(source: &str, file: &str) -> AnalysisReport {
    let findings = find_rule_hits(source);
    let diagnostics = findings
        .into_iter()
        .map(|hit| Diagnostic {
            location: SourceLocation::new(file, hit.line, Some(hit.column)),
            category: VulnerabilityCategory::Cwe(hit.rule.cwe),
            message: hit.message,
            analyzer: AnalyzerKind::Builtin,
            severity: Severity::Error,
        })
        .collect();
    AnalysisReport::from_diagnostics(AnalyzerKind::Builtin, diagnostics)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RuleHit {
    pub rule: BuiltinRule,
    pub line: u32,
    pub column: u32,
    pub message: String,
}

pub fn find_rule_hits(source: &str) -> Vec<RuleHit> {
    let tokens = tokenize(source);
    let mut hits = Vec::new();
    check_input_calls(&tokens, &mut hits);
    for scope in function_scopes(&tokens) {
        check_fopen(scope, &mut hits);
        check_allocations(scope, &mut hits);
    }
    hits.sort_by(|a, b| (a.line, a.column, a.rule.id).cmp(&(b.line, b.column, b.rule.id)));
    hits
}

fn hit(rule: BuiltinRule, tok: &Token<'_>, message: String) -> RuleHit {
    RuleHit {
        rule,
        line: tok.line,
        column: tok.column,
        message,
    }
}

/// Index of the first token after a `(` at `open` and its matching `)`.
fn matching_paren(tokens: &[Token<'_>], open: usize) -> Option<usize> {
    let mut depth = 0usize;
    for (i, t) in tokens.iter().enumerate().skip(open) {
        match t.text {
            "(" => depth += 1,
            ")" => {
                depth -= 1;
                if depth == 0 {
                    return Some(i);
                }
            }
            _ => {}
        }
    }
    None
}

/// Splits the argument list of a call whose `(` sits at `open`.
fn call_args<'t, 'a>(tokens: &'t [Token<'a>], open: usize) -> Vec<&'t [Token<'a>]> {
    let close = matching_paren(tokens, open).unwrap_or(tokens.len());
    let inner = &tokens[open + 1..close];
    let mut args = Vec::new();
    let mut depth = 0i32;
    let mut start = 0;
    for (i, t) in inner.iter().enumerate() {
        match t.text {
            "(" | "[" | "{" => depth += 1,
            ")" | "]" | "}" => depth -= 1,
            "," if depth == 0 => {
                args.push(&inner[start..i]);
                start = i + 1;
            }
            _ => {}
        }
    }
    if !inner.is_empty() {
        args.push(&inner[start..]);
    }
    args
}

fn is_call(tokens: &[Token<'_>], i: usize) -> bool {
    tokens.get(i + 1).is_some_and(|t| t.is("("))
        && !(i > 0 && (tokens[i - 1].is(".") || tokens[i - 1].is("->")))
}

/// One parsed conversion specification of a scanf-family format string.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScanConversion {
    pub suppressed: bool,
    pub width: Option<u32>,
    pub allocating: bool,
    pub conversion: char,
}

impl ScanConversion {
    pub fn is_unbounded_string(&self) -> bool {
        self.conversion == 's' && self.width.is_none() && !self.suppressed && !self.allocating
    }
}

/// Parses the conversion specifications in a scanf format string.
pub fn scan_conversions(format: &str) -> Vec<ScanConversion> {
    let chars: Vec<char> = format.chars().collect();
    let mut out = Vec::new();
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
        let digits_start = i;
        while chars.get(i).is_some_and(|c| c.is_ascii_digit()) {
            i += 1;
        }
        let width = if i > digits_start {
            chars[digits_start..i]
                .iter()
                .collect::<String>()
                .parse()
                .ok()
                .or(Some(u32::MAX))
        } else {
            None
        };
        let allocating = chars.get(i) == Some(&'m');
        if allocating {
            i += 1;
        }
        while chars
            .get(i)
            .is_some_and(|c| matches!(c, 'h' | 'l' | 'j' | 'z' | 't' | 'L' | 'q'))
        {
            i += 1;
        }
        let Some(&conversion) = chars.get(i) else {
            break;
        };
        i += 1;
        if conversion == '[' {
            if chars.get(i) == Some(&'^') {
                i += 1;
            }
            if chars.get(i) == Some(&']') {
                i += 1;
            }
            while chars.get(i).is_some_and(|c| *c != ']') {
                i += 1;
            }
            i += 1;
        }
        out.push(ScanConversion {
            suppressed,
            width,
            allocating,
            conversion,
        });
    }
    out
}

fn literal_format(arg: &[Token<'_>]) -> Option<String> {
    if arg.is_empty() || arg.iter().any(|t| t.kind != TokenKind::Str) {
        return None;
    }
    Some(arg.iter().filter_map(Token::string_value).collect())
}

fn check_input_calls(tokens: &[Token<'_>], hits: &mut Vec<RuleHit>) {
    for (i, tok) in tokens.iter().enumerate() {
        if tok.kind != TokenKind::Ident || !is_call(tokens, i) {
            continue;
        }
        let format_index = match tok.text {
            "scanf" => 0,
            "fscanf" => 1,
            "gets" => {
                hits.push(hit(
                    GETS_CALL,
                    tok,
                    "gets() is called; it cannot limit the input length and can overflow the buffer".into(),
                ));
                continue;
            }
            _ => continue,
        };
        let args = call_args(tokens, i + 1);
        let Some(format) = args.get(format_index).and_then(|a| literal_format(a)) else {
            continue;
        };
        if scan_conversions(&format).iter().any(ScanConversion::is_unbounded_string) {
            hits.push(hit(
                SCANF_UNBOUNDED,
                tok,
                format!("{}() without field width limits can crash with huge input data", tok.text),
            ));
        }
    }
}

/// Bodies of function definitions; the whole stream when none are found.
fn function_scopes<'t, 'a>(tokens: &'t [Token<'a>]) -> Vec<&'t [Token<'a>]> {
    let mut scopes = Vec::new();
    let mut depth = 0usize;
    let mut body_start = None;
    for (i, t) in tokens.iter().enumerate() {
        match t.text {
            "{" => {
                if depth == 0 && i > 0 && tokens[i - 1].is(")") {
                    body_start = Some(i + 1);
                }
                depth += 1;
            }
            "}" if depth > 0 => {
                depth -= 1;
                if depth == 0 {
                    if let Some(start) = body_start.take() {
                        scopes.push(&tokens[start..i]);
                    }
                }
            }
            _ => {}
        }
    }
    if scopes.is_empty() {
        scopes.push(tokens);
    }
    scopes
}

/// Variable receiving the value of the call at `call`, if it is a plain
/// `name = call(...)` assignment (optionally through a cast). The flag is set
/// when the assignment is itself parenthesized, as in `if ((f = fopen(..)) == NULL)`.
fn assignment_target<'a>(tokens: &[Token<'a>], call: usize) -> Option<(&'a str, bool)> {
    let mut i = call.checked_sub(1)?;
    if tokens[i].is(")") {
        // skip a cast
        let mut depth = 0usize;
        loop {
            match tokens[i].text {
                ")" => depth += 1,
                "(" => {
                    depth -= 1;
                    if depth == 0 {
                        break;
                    }
                }
                _ => {}
            }
            i = i.checked_sub(1)?;
        }
        i = i.checked_sub(1)?;
    }
    if !tokens[i].is("=") {
        return None;
    }
    let var = tokens.get(i.checked_sub(1)?)?;
    if var.kind != TokenKind::Ident {
        return None;
    }
    let before = i.checked_sub(2).map(|j| &tokens[j]);
    if before.is_some_and(|t| t.is(".") || t.is("->")) {
        return None;
    }
    Some((var.text, before.is_some_and(|t| t.is("("))))
}

fn is_null_literal(tok: Option<&Token<'_>>) -> bool {
    tok.is_some_and(|t| t.is("NULL") || t.is("0") || t.is("nullptr"))
}

/// Whether the occurrence of a variable at `j` tests it for null.
fn is_null_check(tokens: &[Token<'_>], j: usize) -> bool {
    let prev = j.checked_sub(1).map(|k| &tokens[k]);
    let prev2 = j.checked_sub(2).map(|k| &tokens[k]);
    let next = tokens.get(j + 1);
    let next2 = tokens.get(j + 2);
    if next.is_some_and(|t| t.is("==") || t.is("!=")) && is_null_literal(next2) {
        return true;
    }
    if prev.is_some_and(|t| t.is("==") || t.is("!=")) && is_null_literal(prev2) {
        return true;
    }
    if prev.is_some_and(|t| t.is("!") || t.is("&&") || t.is("||")) {
        return true;
    }
    if next.is_some_and(|t| t.is("&&") || t.is("||") || t.is("?")) {
        return true;
    }
    prev.is_some_and(|t| t.is("("))
        && next.is_some_and(|t| t.is(")"))
        && prev2.is_some_and(|t| t.is("if") || t.is("while") || t.is("assert"))
}

fn occurrences<'t, 'a>(
    tokens: &'t [Token<'a>],
    from: usize,
    var: &'t str,
) -> impl Iterator<Item = usize> + 't {
    // Stops at the next plain reassignment of the variable.
    let end = (from..tokens.len())
        .find(|&k| {
            tokens[k].is_ident(var)
                && tokens.get(k + 1).is_some_and(|t| t.is("="))
                && !(k > 0 && (tokens[k - 1].is(".") || tokens[k - 1].is("->")))
        })
        .unwrap_or(tokens.len());
    (from..end).filter(move |&k| {
        tokens[k].is_ident(var) && !(k > 0 && (tokens[k - 1].is(".") || tokens[k - 1].is("->")))
    })
}

fn is_call_with_sole_arg(tokens: &[Token<'_>], j: usize, callee: &str) -> bool {
    j >= 2
        && tokens[j - 1].is("(")
        && tokens[j - 2].is_ident(callee)
        && tokens.get(j + 1).is_some_and(|t| t.is(")"))
}

/// `return v`, `return (v)`, or `x = v;` hand the value to someone else.
fn escapes(tokens: &[Token<'_>], j: usize) -> bool {
    let prev = j.checked_sub(1).map(|k| &tokens[k]);
    let next = tokens.get(j + 1);
    if prev.is_some_and(|t| t.is_ident("return")) {
        return true;
    }
    if prev.is_some_and(|t| t.is("("))
        && j >= 2
        && tokens[j - 2].is_ident("return")
        && next.is_some_and(|t| t.is(")"))
    {
        return true;
    }
    prev.is_some_and(|t| t.is("=")) && next.is_some_and(|t| t.is(";") || t.is(","))
}

fn check_fopen(scope: &[Token<'_>], hits: &mut Vec<RuleHit>) {
    let closes_anything = scope
        .iter()
        .enumerate()
        .any(|(i, t)| t.is_ident("fclose") && is_call(scope, i));

    for (i, tok) in scope.iter().enumerate() {
        if !tok.is_ident("fopen") || !is_call(scope, i) {
            continue;
        }
        let after_call = matching_paren(scope, i + 1).map_or(scope.len(), |c| c + 1);
        let Some((var, checked_inline)) = assignment_target(scope, i) else {
            if !closes_anything && !is_returned_directly(scope, i) {
                hits.push(hit(
                    FOPEN_UNCLOSED,
                    tok,
                    "Resource leak: file opened by fopen() is never closed".into(),
                ));
            }
            continue;
        };

        let uses: Vec<usize> = occurrences(scope, after_call, var).collect();

        if !checked_inline {
            if let Some(&first) = uses.first() {
                if !is_null_check(scope, first) {
                    hits.push(hit(
                        FOPEN_UNCHECKED,
                        &scope[first],
                        format!("Possible null pointer dereference: '{var}' from fopen() is used without a NULL check"),
                    ));
                }
            }
        }

        let released = uses
            .iter()
            .any(|&j| is_call_with_sole_arg(scope, j, "fclose") || escapes(scope, j));
        if !released {
            hits.push(hit(
                FOPEN_UNCLOSED,
                tok,
                format!("Resource leak: '{var}' opened by fopen() is never closed"),
            ));
        }
    }
}

fn is_returned_directly(tokens: &[Token<'_>], call: usize) -> bool {
    call > 0 && tokens[call - 1].is_ident("return")
}

fn check_allocations(scope: &[Token<'_>], hits: &mut Vec<RuleHit>) {
    for (i, tok) in scope.iter().enumerate() {
        if !(tok.is_ident("malloc") || tok.is_ident("calloc")) || !is_call(scope, i) {
            continue;
        }
        let Some((var, _)) = assignment_target(scope, i) else {
            continue;
        };
        let after_call = matching_paren(scope, i + 1).map_or(scope.len(), |c| c + 1);
        let released = occurrences(scope, after_call, var).any(|j| {
            is_call_with_sole_arg(scope, j, "free") || escapes(scope, j)
        });
        if !released {
            hits.push(hit(
                ALLOC_UNFREED,
                tok,
                format!("Memory leak: '{var}' allocated by {}() is never freed", tok.text),
            ));
        }
    }
}
