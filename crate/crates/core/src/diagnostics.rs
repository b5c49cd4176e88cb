//! Analyzer-neutral vulnerability findings.
//!
//! Every analyzer (CppCheck, Infer and the built-in pattern rules) reports into
//! the same [`Diagnostic`] model so reports can be merged, deduplicated and
//! tallied without caring where a finding came from.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Where a finding points in the analyzed file. Lines and columns are 1-based.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SourceLocation {
    pub file: String,
    pub line: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub column: Option<u32>,
}

impl SourceLocation {
    pub fn new(file: impl Into<String>, line: u32, column: Option<u32>) -> Self {
        Self {
            file: file.into(),
            line,
            column,
        }
    }

    pub fn is_valid(&self) -> bool {
        self.line >= 1 && self.column.is_none_or(|c| c >= 1)
    }
}

/// Labels that analyzers use when they do not attach a CWE id.
///
/// The closed part of the registry mirrors Infer's issue families; anything
/// else lands in `Unknown` with the analyzer's own identifier preserved.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum NativeLabel {
    NullDereference,
    NullptrDereference,
    ResourceLeak,
    BufferOverrunL1,
    BufferOverrunL2,
    BufferOverrunL3,
    BufferOverrunS2,
    MemoryLeak,
    IntegerOverflowL2,
    UseAfterLifetime,
    UseAfterFree,
    InferboAllocIsZero,
    Unknown(String),
}

impl NativeLabel {
    pub const KNOWN: [NativeLabel; 12] = [
        NativeLabel::NullDereference,
        NativeLabel::NullptrDereference,
        NativeLabel::ResourceLeak,
        NativeLabel::BufferOverrunL1,
        NativeLabel::BufferOverrunL2,
        NativeLabel::BufferOverrunL3,
        NativeLabel::BufferOverrunS2,
        NativeLabel::MemoryLeak,
        NativeLabel::IntegerOverflowL2,
        NativeLabel::UseAfterLifetime,
        NativeLabel::UseAfterFree,
        NativeLabel::InferboAllocIsZero,
    ];

    pub fn as_str(&self) -> &str {
        match self {
            NativeLabel::NullDereference => "Null Dereference",
            NativeLabel::NullptrDereference => "Nullptr Dereference",
            NativeLabel::ResourceLeak => "Resource Leak",
            NativeLabel::BufferOverrunL1 => "Buffer Overrun L1",
            NativeLabel::BufferOverrunL2 => "Buffer Overrun L2",
            NativeLabel::BufferOverrunL3 => "Buffer Overrun L3",
            NativeLabel::BufferOverrunS2 => "Buffer Overrun S2",
            NativeLabel::MemoryLeak => "Memory Leak",
            NativeLabel::IntegerOverflowL2 => "Integer Overflow L2",
            NativeLabel::UseAfterLifetime => "Use After Lifetime",
            NativeLabel::UseAfterFree => "Use After Free",
            NativeLabel::InferboAllocIsZero => "Inferbo Alloc Is Zero",
            NativeLabel::Unknown(raw) => raw,
        }
    }

    /// Resolves a registry label by its display text.
    pub fn from_label(text: &str) -> Option<NativeLabel> {
        Self::KNOWN.iter().find(|l| l.as_str() == text).cloned()
    }

    /// CWE ids that describe the same weakness family as this label.
    pub fn overlapping_cwes(&self) -> &'static [u32] {
        match self {
            NativeLabel::BufferOverrunL1
            | NativeLabel::BufferOverrunL2
            | NativeLabel::BufferOverrunL3
            | NativeLabel::BufferOverrunS2 => &[119, 787, 788],
            NativeLabel::NullDereference | NativeLabel::NullptrDereference => &[476],
            NativeLabel::MemoryLeak => &[401],
            NativeLabel::ResourceLeak => &[775],
            _ => &[],
        }
    }
}

const UNKNOWN_PREFIX: &str = "Unknown:";

/// A finding's weakness class: either a CWE id or an analyzer-native label.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum VulnerabilityCategory {
    Cwe(u32),
    Native(NativeLabel),
}

impl VulnerabilityCategory {
    pub fn unknown(raw: impl fmt::Display) -> Self {
        VulnerabilityCategory::Native(NativeLabel::Unknown(format!("{UNKNOWN_PREFIX}{raw}")))
    }

    pub fn is_cwe(&self) -> bool {
        matches!(self, VulnerabilityCategory::Cwe(_))
    }

    /// True when one side is a CWE and the other a native label from the same family.
    pub fn overlaps(&self, other: &VulnerabilityCategory) -> bool {
        match (self, other) {
            (VulnerabilityCategory::Cwe(id), VulnerabilityCategory::Native(label))
            | (VulnerabilityCategory::Native(label), VulnerabilityCategory::Cwe(id)) => {
                label.overlapping_cwes().contains(id)
            }
            _ => false,
        }
    }
}

impl fmt::Display for VulnerabilityCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            VulnerabilityCategory::Cwe(id) => write!(f, "CWE-{id}"),
            VulnerabilityCategory::Native(label) => f.write_str(label.as_str()),
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("unrecognized vulnerability category `{0}`")]
pub struct CategoryParseError(pub String);

impl FromStr for VulnerabilityCategory {
    type Err = CategoryParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if let Some(id) = s.strip_prefix("CWE-") {
            return match id.parse::<u32>() {
                Ok(n) if n > 0 => Ok(VulnerabilityCategory::Cwe(n)),
                _ => Err(CategoryParseError(s.to_string())),
            };
        }
        if s.starts_with(UNKNOWN_PREFIX) {
            return Ok(VulnerabilityCategory::Native(NativeLabel::Unknown(s.to_string())));
        }
        NativeLabel::from_label(s)
            .map(VulnerabilityCategory::Native)
            .ok_or_else(|| CategoryParseError(s.to_string()))
    }
}

impl Serialize for VulnerabilityCategory {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for VulnerabilityCategory {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let raw = String::deserialize(deserializer)?;
        raw.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AnalyzerKind {
    CppCheck,
    Infer,
    Builtin,
}

impl AnalyzerKind {
    pub const ALL: [AnalyzerKind; 3] = [AnalyzerKind::CppCheck, AnalyzerKind::Infer, AnalyzerKind::Builtin];

    pub fn name(self) -> &'static str {
        match self {
            AnalyzerKind::CppCheck => "cppcheck",
            AnalyzerKind::Infer => "infer",
            AnalyzerKind::Builtin => "builtin",
        }
    }
}

impl fmt::Display for AnalyzerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AnalyzerKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "cppcheck" => Ok(AnalyzerKind::CppCheck),
            "infer" => Ok(AnalyzerKind::Infer),
            "builtin" => Ok(AnalyzerKind::Builtin),
            other => Err(format!("unknown analyzer `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Error,
    Warning,
}

/// One analyzer finding.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Diagnostic {
    #[serde(flatten)]
    pub location: SourceLocation,
    pub category: VulnerabilityCategory,
    pub message: String,
    pub analyzer: AnalyzerKind,
    pub severity: Severity,
}

impl Diagnostic {
    pub fn line(&self) -> u32 {
        self.location.line
    }

    // Total order: the normalized (file, line, column, category) key first,
    // the remaining fields only break ties.
    fn sort_key(&self) -> impl Ord + '_ {
        (
            &self.location.file,
            self.location.line,
            self.location.column,
            &self.category,
            self.severity,
            self.analyzer,
            &self.message,
        )
    }

    pub fn check(&self) -> Result<(), String> {
        if !self.location.is_valid() {
            return Err(format!("invalid location {:?}", self.location));
        }
        if self.message.is_empty() {
            return Err("empty diagnostic message".into());
        }
        if self.analyzer == AnalyzerKind::Builtin && !self.category.is_cwe() {
            return Err(format!("builtin diagnostic with non-CWE category {}", self.category));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AnalyzerFailure {
    pub analyzer: AnalyzerKind,
    pub reason: String,
}

/// The merged output of one or more analyzer runs over a single snippet.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct AnalysisReport {
    pub diagnostics: Vec<Diagnostic>,
    pub analyzers_run: BTreeSet<AnalyzerKind>,
    #[serde(default)]
    pub analyzer_failures: Vec<AnalyzerFailure>,
}

impl AnalysisReport {
    pub fn empty(analyzer: AnalyzerKind) -> Self {
        Self {
            analyzers_run: BTreeSet::from([analyzer]),
            ..Default::default()
        }
    }

    pub fn from_diagnostics(analyzer: AnalyzerKind, diagnostics: Vec<Diagnostic>) -> Self {
        let mut report = Self::empty(analyzer);
        report.diagnostics = diagnostics;
        report.sort();
        report
    }

    pub fn sort(&mut self) {
        self.diagnostics.sort_by(|a, b| a.sort_key().cmp(&b.sort_key()));
    }

    /// Folds another report into this one without deduplicating.
    pub fn merge(&mut self, other: AnalysisReport) {
        self.diagnostics.extend(other.diagnostics);
        self.analyzers_run.extend(other.analyzers_run);
        self.analyzer_failures.extend(other.analyzer_failures);
        self.sort();
    }

    pub fn is_vulnerable(&self) -> bool {
        is_vulnerable(self)
    }

    /// Validates the structural invariants of a report.
    pub fn check(&self) -> Result<(), String> {
        for d in &self.diagnostics {
            d.check()?;
            if !self.analyzers_run.contains(&d.analyzer) {
                return Err(format!("diagnostic from {} which did not run", d.analyzer));
            }
        }
        if self
            .diagnostics
            .windows(2)
            .any(|w| w[0].sort_key() > w[1].sort_key())
        {
            return Err("diagnostics are not sorted".into());
        }
        Ok(())
    }
}

/// Collapses findings that describe the same problem.
///
/// Within one `(file, line)`:
/// * findings with an identical category keep a single survivor;
/// * a native finding is dropped when a CWE finding of the same family exists,
///   so the CWE classification wins on overlap.
///
/// Survivors are chosen by the total sort order, which makes the result
/// independent of input order. The output is sorted.
pub fn dedupe(report: &AnalysisReport) -> AnalysisReport {
    let mut sorted = report.diagnostics.clone();
    sorted.sort_by(|a, b| a.sort_key().cmp(&b.sort_key()));

    let mut by_line: BTreeMap<(&str, u32), Vec<&Diagnostic>> = BTreeMap::new();
    for d in &sorted {
        by_line
            .entry((d.location.file.as_str(), d.location.line))
            .or_default()
            .push(d);
    }

    let mut kept = Vec::new();
    for group in by_line.values() {
        let mut seen = BTreeSet::new();
        let unique: Vec<&Diagnostic> = group
            .iter()
            .copied()
            .filter(|d| seen.insert(&d.category))
            .collect();
        for d in &unique {
            let absorbed = !d.category.is_cwe()
                && unique
                    .iter()
                    .any(|other| other.category.is_cwe() && other.category.overlaps(&d.category));
            if !absorbed {
                kept.push((*d).clone());
            }
        }
    }

    let mut out = AnalysisReport {
        diagnostics: kept,
        analyzers_run: report.analyzers_run.clone(),
        analyzer_failures: report.analyzer_failures.clone(),
    };
    out.sort();
    out
}

/// Per-category totals over a set of (already deduplicated) reports.
pub fn summarize<'a, I>(reports: I) -> BTreeMap<VulnerabilityCategory, usize>
where
    I: IntoIterator<Item = &'a AnalysisReport>,
{
    let mut counts = BTreeMap::new();
    for report in reports {
        for d in &report.diagnostics {
            *counts.entry(d.category.clone()).or_insert(0) += 1;
        }
    }
    counts
}

/// A snippet is vulnerable when any finding survives deduplication.
/// Analyzer failures alone never make a report vulnerable.
pub fn is_vulnerable(report: &AnalysisReport) -> bool {
    !dedupe(report).diagnostics.is_empty()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn diag(line: u32, category: VulnerabilityCategory, analyzer: AnalyzerKind) -> Diagnostic {
        Diagnostic {
            location: SourceLocation::new("a.c", line, None),
            category,
            message: format!("finding at {line}"),
            analyzer,
            severity: Severity::Error,
        }
    }

    fn report(diags: Vec<Diagnostic>) -> AnalysisReport {
        AnalysisReport {
            analyzers_run: diags.iter().map(|d| d.analyzer).collect(),
            diagnostics: diags,
            analyzer_failures: vec![],
        }
    }

    #[test]
    fn category_text_round_trips() {
        for text in ["CWE-119", "Buffer Overrun L2", "Inferbo Alloc Is Zero", "Unknown:DEAD_STORE"] {
            let cat: VulnerabilityCategory = text.parse().unwrap();
            assert_eq!(cat.to_string(), text);
        }
        assert!("CWE-0".parse::<VulnerabilityCategory>().is_err());
        assert!("CWE-x".parse::<VulnerabilityCategory>().is_err());
        assert!("Stack Smash".parse::<VulnerabilityCategory>().is_err());
    }

    #[test]
    fn cwe_wins_over_overlapping_native_label() {
        let r = report(vec![
            diag(7, VulnerabilityCategory::Native(NativeLabel::BufferOverrunL2), AnalyzerKind::Infer),
            diag(7, VulnerabilityCategory::Cwe(119), AnalyzerKind::CppCheck),
        ]);
        let out = dedupe(&r);
        assert_eq!(out.diagnostics.len(), 1);
        assert_eq!(out.diagnostics[0].category, VulnerabilityCategory::Cwe(119));
        assert_eq!(out.diagnostics[0].analyzer, AnalyzerKind::CppCheck);
    }

    #[test]
    fn non_overlapping_families_are_kept() {
        let r = report(vec![
            diag(7, VulnerabilityCategory::Native(NativeLabel::MemoryLeak), AnalyzerKind::Infer),
            diag(7, VulnerabilityCategory::Cwe(119), AnalyzerKind::CppCheck),
        ]);
        assert_eq!(dedupe(&r).diagnostics.len(), 2);
        // same family, different lines
        let r = report(vec![
            diag(3, VulnerabilityCategory::Native(NativeLabel::BufferOverrunL2), AnalyzerKind::Infer),
            diag(7, VulnerabilityCategory::Cwe(119), AnalyzerKind::CppCheck),
        ]);
        assert_eq!(dedupe(&r).diagnostics.len(), 2);
    }

    #[test]
    fn empty_report_stays_empty() {
        let out = dedupe(&AnalysisReport::default());
        assert!(out.diagnostics.is_empty());
        assert!(!is_vulnerable(&AnalysisReport::default()));
    }

    // Pairwise-merge oracle: repeatedly merge any mergeable pair until none remain.
    fn pairwise_oracle(diags: &[Diagnostic]) -> Vec<Diagnostic> {
        let mut items: Vec<Diagnostic> = diags.to_vec();
        loop {
            let mut changed = false;
            'outer: for i in 0..items.len() {
                for j in 0..items.len() {
                    if i == j {
                        continue;
                    }
                    let (a, b) = (&items[i], &items[j]);
                    if a.location.file != b.location.file || a.location.line != b.location.line {
                        continue;
                    }
                    let drop_j = if a.category == b.category {
                        a.sort_key() <= b.sort_key()
                    } else {
                        a.category.is_cwe() && a.category.overlaps(&b.category)
                    };
                    if drop_j {
                        items.remove(j);
                        changed = true;
                        break 'outer;
                    }
                }
            }
            if !changed {
                break;
            }
        }
        items.sort_by(|a, b| a.sort_key().cmp(&b.sort_key()));
        items
    }

    #[test]
    fn distinct_cwes_on_distinct_lines_are_kept_sorted() {
        let input = vec![
            diag(9, VulnerabilityCategory::Cwe(401), AnalyzerKind::CppCheck),
            diag(3, VulnerabilityCategory::Cwe(457), AnalyzerKind::CppCheck),
        ];
        let out = dedupe(&report(input.clone()));
        assert_eq!(out.diagnostics, pairwise_oracle(&input));
        assert_eq!(
            out.diagnostics.iter().map(|d| d.line()).collect::<Vec<_>>(),
            vec![3, 9]
        );
    }

    #[test]
    fn column_absence_sorts_first() {
        let mut a = diag(4, VulnerabilityCategory::Cwe(119), AnalyzerKind::CppCheck);
        a.location.column = Some(2);
        let b = diag(4, VulnerabilityCategory::Cwe(119), AnalyzerKind::Builtin);
        let r = AnalysisReport::from_diagnostics(AnalyzerKind::CppCheck, vec![a, b.clone()]);
        assert_eq!(r.diagnostics[0], b);
    }

    #[test]
    fn vulnerability_decision_table() {
        let failure_only = AnalysisReport {
            diagnostics: vec![],
            analyzers_run: BTreeSet::from([AnalyzerKind::Builtin]),
            analyzer_failures: vec![AnalyzerFailure {
                analyzer: AnalyzerKind::Infer,
                reason: "tool not found".into(),
            }],
        };
        let cases = [
            (AnalysisReport::default(), false),
            (failure_only, false),
            (
                report(vec![diag(7, VulnerabilityCategory::Cwe(119), AnalyzerKind::Builtin)]),
                true,
            ),
            (
                report(vec![diag(
                    1,
                    VulnerabilityCategory::unknown("DEAD_STORE"),
                    AnalyzerKind::Infer,
                )]),
                true,
            ),
        ];
        for (r, expected) in cases {
            assert_eq!(is_vulnerable(&r), expected, "{r:?}");
        }
    }

    #[test]
    fn summarize_matches_hand_tally() {
        let reports = vec![
            report(vec![
                diag(1, VulnerabilityCategory::Cwe(119), AnalyzerKind::Builtin),
                diag(2, VulnerabilityCategory::Cwe(119), AnalyzerKind::Builtin),
            ]),
            report(vec![diag(1, VulnerabilityCategory::Native(NativeLabel::MemoryLeak), AnalyzerKind::Infer)]),
            report(vec![
                diag(5, VulnerabilityCategory::Cwe(476), AnalyzerKind::Builtin),
                diag(6, VulnerabilityCategory::Cwe(119), AnalyzerKind::Builtin),
            ]),
        ];
        let counts = summarize(&reports);
        let expected = BTreeMap::from([
            (VulnerabilityCategory::Cwe(119), 3),
            (VulnerabilityCategory::Cwe(476), 1),
            (VulnerabilityCategory::Native(NativeLabel::MemoryLeak), 1),
        ]);
        assert_eq!(counts, expected);
        assert!(summarize(&[]).is_empty());
    }

    #[test]
    fn report_serializes_with_canonical_field_names() {
        let r = report(vec![Diagnostic {
            location: SourceLocation::new("x.c", 7, Some(3)),
            category: VulnerabilityCategory::Cwe(119),
            message: "m".into(),
            analyzer: AnalyzerKind::CppCheck,
            severity: Severity::Warning,
        }]);
        let json = serde_json::to_value(&r).unwrap();
        assert_eq!(
            json,
            serde_json::json!({
                "diagnostics": [{
                    "file": "x.c", "line": 7, "column": 3, "category": "CWE-119",
                    "message": "m", "analyzer": "cppcheck", "severity": "warning"
                }],
                "analyzersRun": ["cppcheck"],
                "analyzerFailures": []
            })
        );
        let back: AnalysisReport = serde_json::from_value(json).unwrap();
        assert_eq!(back, r);
    }

    fn arb_category() -> impl Strategy<Value = VulnerabilityCategory> {
        prop_oneof![
            prop::sample::select(vec![119u32, 787, 788, 476, 401, 775, 457, 686]).prop_map(VulnerabilityCategory::Cwe),
            prop::sample::select(NativeLabel::KNOWN.to_vec()).prop_map(VulnerabilityCategory::Native),
        ]
    }

    fn arb_diag() -> impl Strategy<Value = Diagnostic> {
        (
            prop::sample::select(vec!["a.c", "b.c"]),
            1u32..6,
            prop::option::of(1u32..3),
            arb_category(),
            prop::sample::select(vec!["m1", "m2"]),
            prop::sample::select(AnalyzerKind::ALL.to_vec()),
        )
            .prop_map(|(file, line, column, category, message, analyzer)| Diagnostic {
                location: SourceLocation::new(file, line, column),
                analyzer: if category.is_cwe() || analyzer != AnalyzerKind::Builtin {
                    analyzer
                } else {
                    AnalyzerKind::Infer
                },
                category,
                message: message.into(),
                severity: Severity::Error,
            })
    }

    proptest! {
        #[test]
        fn dedupe_is_idempotent_and_order_insensitive(
            diags in prop::collection::vec(arb_diag(), 0..24),
            seed in any::<u64>(),
        ) {
            let r = report(diags.clone());
            let once = dedupe(&r);
            prop_assert_eq!(&once.diagnostics, &pairwise_oracle(&diags));
            prop_assert_eq!(&dedupe(&once), &once);

            let mut shuffled = diags;
            let n = shuffled.len();
            if n > 1 {
                let mut s = seed;
                for i in (1..n).rev() {
                    s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                    shuffled.swap(i, (s >> 33) as usize % (i + 1));
                }
            }
            prop_assert_eq!(&dedupe(&report(shuffled)).diagnostics, &once.diagnostics);
            prop_assert!(once.check().is_ok());
            prop_assert_eq!(is_vulnerable(&r), !once.diagnostics.is_empty());
        }

        #[test]
        fn summarize_total_equals_deduped_count(
            sets in prop::collection::vec(prop::collection::vec(arb_diag(), 0..8), 0..5),
        ) {
            let reports: Vec<_> = sets.into_iter().map(|d| dedupe(&report(d))).collect();
            let total: usize = summarize(&reports).values().sum();
            prop_assert_eq!(total, reports.iter().map(|r| r.diagnostics.len()).sum::<usize>());
        }
    }
}
