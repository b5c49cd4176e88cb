//! Static analyzer orchestration.
//!
//! [`analyze`] writes a candidate program to its own scratch directory, runs
//! every enabled analyzer over it (external tools concurrently), merges the
//! reports and deduplicates the result. A failing analyzer is recorded in the
//! report instead of aborting the run, unless every enabled analyzer failed.

pub mod builtin;
pub mod cppcheck;
pub mod infer;
mod subprocess;

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::thread;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diagnostics::{dedupe, AnalysisReport, AnalyzerFailure, AnalyzerKind};

pub use builtin::{run_builtin, run_builtin_as, BuiltinRule, DEFAULT_FILE_LABEL, RULES};
pub use cppcheck::{parse_cppcheck_xml, run_cppcheck};
pub use infer::{parse_infer_report, run_infer};
pub use subprocess::{resolve_tool, CPPCHECK_ENV, INFER_ENV};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("malformed report{}: {reason}", offset.map(|o| format!(" at byte {o}")).unwrap_or_default())]
pub struct MalformedReport {
    pub offset: Option<usize>,
    pub reason: String,
}

#[derive(Debug, Error)]
pub enum AnalyzerError {
    #[error("{tool} not found: {detail}")]
    ToolNotFound { tool: AnalyzerKind, detail: String },
    #[error("{tool} timed out after {seconds}s")]
    Timeout { tool: AnalyzerKind, seconds: f64 },
    #[error("{tool} exited with {status} without producing a report: {stderr}")]
    NonZeroExitWithoutReport {
        tool: AnalyzerKind,
        status: String,
        stderr: String,
    },
    #[error("compilation failed: {0}")]
    CompileFailed(String),
    #[error(transparent)]
    Malformed(#[from] MalformedReport),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Error)]
pub enum AnalyzeError {
    #[error("every enabled analyzer failed: {}", describe_failures(.0))]
    AllAnalyzersFailed(Vec<AnalyzerFailure>),
    #[error("invalid analyzer configuration: {0}")]
    InvalidConfig(String),
    #[error("cannot prepare analyzer workspace: {0}")]
    Io(#[from] std::io::Error),
}

fn describe_failures(failures: &[AnalyzerFailure]) -> String {
    failures
        .iter()
        .map(|f| format!("{}: {}", f.analyzer, f.reason))
        .collect::<Vec<_>>()
        .join("; ")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", default)]
pub struct AnalyzerConfig {
    pub enabled_analyzers: BTreeSet<AnalyzerKind>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cppcheck_path: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub infer_path: Option<PathBuf>,
    pub compiler_command: String,
    pub timeout_seconds: f64,
    pub work_dir: PathBuf,
    /// Keep per-candidate scratch directories after analysis.
    pub keep_artifacts: bool,
}

impl Default for AnalyzerConfig {
    fn default() -> Self {
        Self {
            enabled_analyzers: BTreeSet::from([AnalyzerKind::Builtin]),
            cppcheck_path: None,
            infer_path: None,
            compiler_command: "cc -c".into(),
            timeout_seconds: 60.0,
            work_dir: std::env::temp_dir().join("codexity"),
            keep_artifacts: false,
        }
    }
}

impl AnalyzerConfig {
    pub fn builtin_only() -> Self {
        Self::default()
    }

    pub fn with_analyzers(analyzers: impl IntoIterator<Item = AnalyzerKind>) -> Self {
        Self {
            enabled_analyzers: analyzers.into_iter().collect(),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), AnalyzeError> {
        if self.enabled_analyzers.is_empty() {
            return Err(AnalyzeError::InvalidConfig("no analyzers enabled".into()));
        }
        if !(self.timeout_seconds > 0.0 && self.timeout_seconds.is_finite()) {
            return Err(AnalyzeError::InvalidConfig(format!(
                "timeoutSeconds must be positive, got {}",
                self.timeout_seconds
            )));
        }
        Ok(())
    }

    fn needs_files(&self) -> bool {
        self.enabled_analyzers.iter().any(|a| *a != AnalyzerKind::Builtin)
    }
}

/// A program to analyze plus the identifiers used to name its scratch files.
#[derive(Debug, Clone, Copy)]
pub struct Candidate<'a> {
    pub source: &'a str,
    pub session_id: &'a str,
    pub iteration: usize,
    /// File name diagnostics are reported against.
    pub label: &'a str,
}

impl<'a> Candidate<'a> {
    pub fn new(source: &'a str, session_id: &'a str, iteration: usize) -> Self {
        Self {
            source,
            session_id,
            iteration,
            label: DEFAULT_FILE_LABEL,
        }
    }

    pub fn file_stem(&self) -> String {
        format!("candidate_{}_{}", self.session_id, self.iteration)
    }
}

/// Analyzes an anonymous snippet.
pub fn analyze(source: &str, cfg: &AnalyzerConfig) -> Result<AnalysisReport, AnalyzeError> {
    let id = uuid::Uuid::new_v4().simple().to_string();
    analyze_candidate(&Candidate::new(source, &id, 0), cfg)
}

pub fn analyze_candidate(candidate: &Candidate<'_>, cfg: &AnalyzerConfig) -> Result<AnalysisReport, AnalyzeError> {
    cfg.validate()?;

    let scratch = if cfg.needs_files() {
        let dir = cfg.work_dir.join(candidate.file_stem());
        std::fs::create_dir_all(&dir)?;
        let path = dir.join(format!("{}.c", candidate.file_stem()));
        std::fs::write(&path, candidate.source)?;
        Some((dir, path))
    } else {
        None
    };

    let mut outcomes: Vec<(AnalyzerKind, Result<AnalysisReport, AnalyzerError>)> = Vec::new();
    thread::scope(|scope| {
        let mut handles = Vec::new();
        if let Some((dir, path)) = &scratch {
            for kind in [AnalyzerKind::CppCheck, AnalyzerKind::Infer] {
                if cfg.enabled_analyzers.contains(&kind) {
                    let tool_cfg = AnalyzerConfig {
                        work_dir: dir.join(kind.name()),
                        ..cfg.clone()
                    };
                    handles.push((kind, scope.spawn(move || run_external(kind, path, &tool_cfg))));
                }
            }
        }
        if cfg.enabled_analyzers.contains(&AnalyzerKind::Builtin) {
            outcomes.push((
                AnalyzerKind::Builtin,
                Ok(run_builtin_as(candidate.source, candidate.label)),
            ));
        }
        for (kind, handle) in handles {
            let result = handle.join().unwrap_or_else(|_| {
                Err(AnalyzerError::Malformed(MalformedReport {
                    offset: None,
                    reason: "analyzer thread panicked".into(),
                }))
            });
            outcomes.push((kind, result));
        }
    });

    let mut merged = AnalysisReport::default();
    let mut failures = Vec::new();
    for (kind, outcome) in outcomes {
        match outcome {
            Ok(mut report) => {
                if let Some((_, path)) = &scratch {
                    relabel(&mut report, path, candidate.label);
                }
                merged.merge(report);
            }
            Err(err) => {
                tracing::warn!(analyzer = %kind, error = %err, "analyzer failed");
                failures.push(AnalyzerFailure {
                    analyzer: kind,
                    reason: err.to_string(),
                });
            }
        }
    }

    if let Some((dir, _)) = &scratch {
        if !cfg.keep_artifacts {
            let _ = std::fs::remove_dir_all(dir);
        }
    }

    if merged.analyzers_run.is_empty() {
        return Err(AnalyzeError::AllAnalyzersFailed(failures));
    }
    failures.sort_by_key(|f| f.analyzer);
    merged.analyzer_failures = failures;
    Ok(dedupe(&merged))
}

fn run_external(kind: AnalyzerKind, path: &Path, cfg: &AnalyzerConfig) -> Result<AnalysisReport, AnalyzerError> {
    std::fs::create_dir_all(&cfg.work_dir)?;
    match kind {
        AnalyzerKind::CppCheck => Ok(parse_cppcheck_xml(&run_cppcheck(path, cfg)?)?),
        AnalyzerKind::Infer => Ok(parse_infer_report(&run_infer(path, cfg)?)?),
        AnalyzerKind::Builtin => unreachable!("builtin runs in-process"),
    }
}

// External tools report the scratch path; findings in that file are
// re-attributed to the candidate's label.
fn relabel(report: &mut AnalysisReport, scratch: &Path, label: &str) {
    let scratch_name = scratch.file_name().map(|n| n.to_string_lossy().into_owned());
    for d in &mut report.diagnostics {
        let reported = Path::new(&d.location.file);
        if reported.file_name().map(|n| n.to_string_lossy().into_owned()) == scratch_name {
            d.location.file = label.to_string();
        }
    }
    report.sort();
}
