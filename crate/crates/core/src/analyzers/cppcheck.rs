//! CppCheck driver and `--xml-version=2` report parser.

use std::path::Path;
use std::process::Command;
use std::time::Duration;

use crate::diagnostics::{
    AnalysisReport, AnalyzerKind, Diagnostic, Severity, SourceLocation, VulnerabilityCategory,
};

use super::subprocess::{excerpt, resolve_tool, run_with_timeout};
use super::{AnalyzerConfig, AnalyzerError, MalformedReport};

pub const CPPCHECK_ARGS: [&str; 4] = [
    "--enable=warning,performance,portability",
    "--inconclusive",
    "--xml",
    "--xml-version=2",
];

/// Runs CppCheck on `source` and returns the XML it writes to stderr.
pub fn run_cppcheck(source: &Path, cfg: &AnalyzerConfig) -> Result<String, AnalyzerError> {
    let tool = resolve_tool(AnalyzerKind::CppCheck, cfg)?;
    let mut cmd = Command::new(tool);
    cmd.args(CPPCHECK_ARGS).arg(source);
    if let Some(dir) = source.parent() {
        cmd.current_dir(dir);
    }
    let out = run_with_timeout(
        AnalyzerKind::CppCheck,
        cmd,
        Duration::from_secs_f64(cfg.timeout_seconds),
    )?;
    if out.stderr.contains("<results") {
        return Ok(out.stderr);
    }
    Err(AnalyzerError::NonZeroExitWithoutReport {
        tool: AnalyzerKind::CppCheck,
        status: out.status.to_string(),
        stderr: excerpt(&format!("{}{}", out.stdout, out.stderr), 400),
    })
}

fn map_severity(raw: &str) -> Option<Severity> {
    match raw {
        "error" => Some(Severity::Error),
        "style" | "information" | "debug" | "none" => None,
        // warning, portability, performance and anything unrecognized
        _ => Some(Severity::Warning),
    }
}

fn byte_offset(text: &str, pos: roxmltree::TextPos) -> usize {
    let line_start: usize = text
        .split_inclusive('\n')
        .take(pos.row.saturating_sub(1) as usize)
        .map(str::len)
        .sum();
    let col_bytes: usize = text[line_start.min(text.len())..]
        .chars()
        .take(pos.col.saturating_sub(1) as usize)
        .map(char::len_utf8)
        .sum();
    line_start + col_bytes
}

fn malformed(doc_text: &str, node: roxmltree::Node<'_, '_>, reason: impl Into<String>) -> MalformedReport {
    MalformedReport {
        offset: Some(node.range().start.min(doc_text.len())),
        reason: reason.into(),
    }
}

/// Parses a CppCheck XML (version 2) report.
///
/// Each `<error>` becomes one diagnostic located at its first `<location>`.
/// Style and information findings are dropped.
pub fn parse_cppcheck_xml(xml: &str) -> Result<AnalysisReport, MalformedReport> {
    let doc = roxmltree::Document::parse(xml).map_err(|e| MalformedReport {
        offset: Some(byte_offset(xml, e.pos())),
        reason: e.to_string(),
    })?;
    let root = doc.root_element();
    if !root.has_tag_name("results") {
        return Err(malformed(xml, root, format!("expected <results>, found <{}>", root.tag_name().name())));
    }
    if let Some(version) = root.attribute("version") {
        if version != "2" {
            return Err(malformed(xml, root, format!("unsupported report version {version}")));
        }
    }

    let mut diagnostics = Vec::new();
    let errors = root.children().filter(|n| n.has_tag_name("errors"));
    for error in errors.flat_map(|e| e.children()).filter(|n| n.has_tag_name("error")) {
        let attr = |name: &str| {
            error
                .attribute(name)
                .ok_or_else(|| malformed(xml, error, format!("<error> without `{name}` attribute")))
        };
        let id = attr("id")?;
        let Some(severity) = map_severity(attr("severity")?) else {
            continue;
        };
        let msg = attr("msg")?;

        let category = match error.attribute("cwe") {
            Some(raw) => match raw.parse::<u32>() {
                Ok(0) => VulnerabilityCategory::unknown(id),
                Ok(cwe) => VulnerabilityCategory::Cwe(cwe),
                Err(_) => return Err(malformed(xml, error, format!("invalid cwe `{raw}`"))),
            },
            None => VulnerabilityCategory::unknown(id),
        };

        let location = match error.children().find(|n| n.has_tag_name("location")) {
            Some(loc) => {
                let file = loc
                    .attribute("file")
                    .ok_or_else(|| malformed(xml, loc, "<location> without `file`"))?;
                let line = loc
                    .attribute("line")
                    .ok_or_else(|| malformed(xml, loc, "<location> without `line`"))?
                    .parse::<u32>()
                    .map_err(|e| malformed(xml, loc, format!("invalid line: {e}")))?;
                let column = match loc.attribute("column") {
                    Some(c) => Some(
                        c.parse::<u32>()
                            .map_err(|e| malformed(xml, loc, format!("invalid column: {e}")))?,
                    ),
                    None => None,
                };
                SourceLocation::new(file, line.max(1), column.filter(|c| *c >= 1))
            }
            None => SourceLocation::new(error.attribute("file0").unwrap_or("unknown"), 1, None),
        };

        diagnostics.push(Diagnostic {
            location,
            category,
            message: if msg.is_empty() { id.to_string() } else { msg.to_string() },
            analyzer: AnalyzerKind::CppCheck,
            severity,
        });
    }
    Ok(AnalysisReport::from_diagnostics(AnalyzerKind::CppCheck, diagnostics))
}
