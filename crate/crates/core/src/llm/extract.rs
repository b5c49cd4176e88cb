//! Pulling a program out of free-form model output.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum OutputClass {
    Code,
    NonCode,
}

fn fence_marker(line: &str) -> Option<usize> {
    let trimmed = line.trim_start();
    if line.len() - trimmed.len() > 3 {
        return None;
    }
    let ticks = trimmed.bytes().take_while(|b| *b == b'`').count();
    let tildes = trimmed.bytes().take_while(|b| *b == b'~').count();
    let n = ticks.max(tildes);
    (n >= 3).then_some(n)
}

/// Contents of every fenced block, in order of appearance. An unclosed fence
/// runs to the end of the text.
pub fn fenced_blocks(text: &str) -> Vec<String> {
    let mut blocks = Vec::new();
    let mut lines = text.split('\n');
    while let Some(line) = lines.next() {
        let Some(open) = fence_marker(line) else {
            continue;
        };
        let fence_char = line.trim_start().as_bytes()[0];
        let mut body: Vec<&str> = Vec::new();
        for inner in lines.by_ref() {
            let t = inner.trim();
            if fence_marker(inner).is_some_and(|n| n >= open)
                && t.bytes().all(|b| b == fence_char)
            {
                break;
            }
            body.push(inner);
        }
        blocks.push(body.join("\n"));
    }
    blocks
}

fn code_like(line: &str) -> bool {
    let t = line.trim();
    t.starts_with('#')
        || t.starts_with("//")
        || t.starts_with("/*")
        || t.starts_with('*')
        || t.contains(';')
        || t.contains('{')
        || t.contains('}')
}

fn prose_like(line: &str) -> bool {
    let t = line.trim();
    if code_like(t) {
        return false;
    }
    let words = t.split_whitespace().count();
    words >= 5 || (words >= 2 && t.ends_with(['.', ':', '?', '!']))
}

fn looks_like_c(text: &str) -> bool {
    let lines: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
    if lines.len() < 3 || prose_like(lines[0]) {
        return false;
    }
    let coded = lines.iter().filter(|l| code_like(l)).count();
    coded * 2 > lines.len()
}

/// The program contained in a model response, if any.
///
/// Fenced blocks win; among several the longest is taken, the earliest on a
/// tie. Without fences the whole text is returned when it reads as C.
pub fn extract_code(raw: &str) -> Option<String> {
    let blocks = fenced_blocks(raw);
    if !blocks.is_empty() {
        let mut best: Option<String> = None;
        for b in blocks {
            if b.trim().is_empty() {
                continue;
            }
            if best.as_ref().is_none_or(|cur| b.len() > cur.len()) {
                best = Some(b);
            }
        }
        return best;
    }
    looks_like_c(raw).then(|| raw.to_string())
}

/// Wraps `code` in a backtick fence long enough that no line inside can
/// close it early.
pub fn fence(code: &str, lang: &str) -> String {
    let longest = code
        .split('\n')
        .map(|l| l.trim_start().bytes().take_while(|b| *b == b'`').count())
        .max()
        .unwrap_or(0);
    let marker = "`".repeat((longest + 1).max(3));
    format!("{marker}{lang}\n{code}\n{marker}")
}

pub fn classify_output(raw: &str) -> OutputClass {
    match extract_code(raw) {
        Some(_) => OutputClass::Code,
        None => OutputClass::NonCode,
    }
}
