//! Infer driver and `report.json` parser.

use std::collections::HashMap;
use std::path::Path;
use std::process::Command;
use std::sync::LazyLock;
use std::time::Duration;

use serde::Deserialize;

use crate::diagnostics::{
    AnalysisReport, AnalyzerKind, Diagnostic, NativeLabel, Severity, SourceLocation,
    VulnerabilityCategory,
};

use super::subprocess::{excerpt, resolve_tool, run_with_timeout};
use super::{AnalyzerConfig, AnalyzerError, MalformedReport};

static BUG_TYPES: LazyLock<HashMap<String, NativeLabel>> = LazyLock::new(|| {
    let raw: HashMap<String, String> =
        serde_json::from_str(include_str!("../../data/infer_bug_types.json")).expect("bug type table is valid JSON");
    raw.into_iter()
        .map(|(bug_type, label)| {
            let label = NativeLabel::from_label(&label)
                .unwrap_or_else(|| panic!("bug type table maps {bug_type} to unregistered label {label}"));
            (bug_type, label)
        })
        .collect()
});

/// Maps an Infer `bug_type` onto the label registry; unmapped types stay
/// visible as `Unknown:<bug_type>`.
pub fn category_for_bug_type(bug_type: &str) -> VulnerabilityCategory {
    match BUG_TYPES.get(bug_type) {
        Some(label) => VulnerabilityCategory::Native(label.clone()),
        None => VulnerabilityCategory::unknown(bug_type),
    }
}

/// Runs `infer run` over a single compilation of `source` and returns the
/// contents of `report.json`.
pub fn run_infer(source: &Path, cfg: &AnalyzerConfig) -> Result<String, AnalyzerError> {
    let tool = resolve_tool(AnalyzerKind::Infer, cfg)?;
    let out_dir = cfg.work_dir.join("infer-out");
    let mut compiler = cfg.compiler_command.split_whitespace();
    let Some(cc) = compiler.next() else {
        return Err(AnalyzerError::CompileFailed("empty compiler command".into()));
    };

    let mut cmd = Command::new(tool);
    cmd.args(["run", "--keep-going", "-o"])
        .arg(&out_dir)
        .arg("--")
        .arg(cc)
        .args(compiler)
        .arg(source)
        .current_dir(&cfg.work_dir);
    let out = run_with_timeout(
        AnalyzerKind::Infer,
        cmd,
        Duration::from_secs_f64(cfg.timeout_seconds),
    )?;

    let report_path = out_dir.join("report.json");
    match std::fs::read_to_string(&report_path) {
        Ok(report) if out.status.success() || !report.trim().is_empty() => Ok(report),
        _ => {
            let log = format!("{}{}", out.stdout, out.stderr);
            let lowered = log.to_ascii_lowercase();
            if lowered.contains("error:") || lowered.contains("compil") {
                Err(AnalyzerError::CompileFailed(excerpt(&log, 400)))
            } else {
                Err(AnalyzerError::NonZeroExitWithoutReport {
                    tool: AnalyzerKind::Infer,
                    status: out.status.to_string(),
                    stderr: excerpt(&log, 400),
                })
            }
        }
    }
}

#[derive(Debug, Deserialize)]
struct InferIssue {
    bug_type: String,
    #[serde(default)]
    qualifier: String,
    #[serde(default)]
    severity: Option<String>,
    line: i64,
    #[serde(default = "missing_column")]
    column: i64,
    file: String,
}

fn missing_column() -> i64 {
    -1
}

fn json_offset(text: &str, err: &serde_json::Error) -> Option<usize> {
    if err.line() == 0 {
        return None;
    }
    let line_start: usize = text
        .split_inclusive('\n')
        .take(err.line() - 1)
        .map(str::len)
        .sum();
    Some((line_start + err.column().saturating_sub(1)).min(text.len()))
}

/// Parses Infer's `report.json` (an array of issue records).
pub fn parse_infer_report(json: &str) -> Result<AnalysisReport, MalformedReport> {
    let issues: Vec<InferIssue> = serde_json::from_str(json).map_err(|e| MalformedReport {
        offset: json_offset(json, &e),
        reason: e.to_string(),
    })?;
    let diagnostics = issues
        .into_iter()
        .map(|issue| {
            let severity = match issue.severity.as_deref() {
                Some(s) if s.eq_ignore_ascii_case("error") || s.eq_ignore_ascii_case("critical") => Severity::Error,
                _ => Severity::Warning,
            };
            let line = u32::try_from(issue.line).unwrap_or(0).max(1);
            let column = u32::try_from(issue.column).ok().filter(|c| *c >= 1);
            Diagnostic {
                location: SourceLocation::new(issue.file, line, column),
                category: category_for_bug_type(&issue.bug_type),
                message: if issue.qualifier.is_empty() {
                    issue.bug_type
                } else {
                    issue.qualifier
                },
                analyzer: AnalyzerKind::Infer,
                severity,
            }
        })
        .collect();
    Ok(AnalysisReport::from_diagnostics(AnalyzerKind::Infer, diagnostics))
}
