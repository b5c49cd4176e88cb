use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analyzers::AnalyzerConfig;
use crate::diagnostics::summarize;
use crate::repair::{run_session, RepairSession, SessionBackends, StrategyConfig};

use super::{count_loc, probe_temperature, BenchError, Manifest, PROBE_RUNS};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct EvalMetrics {
    pub vulnerable_count: usize,
    pub total_count: usize,
    pub vulnerable_percent: f64,
    /// Mean of generation plus analysis time per session.
    pub avg_seconds: f64,
    pub avg_generation_seconds: f64,
    pub avg_analysis_seconds: f64,
    pub mean_loc: f64,
}

pub fn round1(x: f64) -> f64 {
    (x * 10.0).round() / 10.0
}

fn percent(part: usize, total: usize) -> f64 {
    (part as f64 * 1000.0 / total as f64).round() / 10.0
}

// Summing in sorted order makes the result independent of input order.
fn mean(mut values: Vec<f64>) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.sort_by(f64::total_cmp);
    values.iter().sum::<f64>() / values.len() as f64
}

pub fn evaluate_strategy(sessions: &[RepairSession]) -> Result<EvalMetrics, BenchError> {
    if sessions.is_empty() {
        return Err(BenchError::EmptyInput);
    }
    let vulnerable_count = sessions.iter().filter(|s| s.outcome.counts_vulnerable()).count();
    let generation: Vec<f64> = sessions.iter().map(RepairSession::generation_seconds).collect();
    let analysis: Vec<f64> = sessions.iter().map(RepairSession::analysis_seconds).collect();
    let totals = generation.iter().zip(&analysis).map(|(g, a)| g + a).collect();
    let locs = sessions
        .iter()
        .filter_map(|s| s.final_code.as_deref())
        .map(|c| count_loc(c) as f64)
        .collect();
    Ok(EvalMetrics {
        vulnerable_count,
        total_count: sessions.len(),
        vulnerable_percent: percent(vulnerable_count, sessions.len()),
        avg_seconds: mean(totals),
        avg_generation_seconds: mean(generation),
        avg_analysis_seconds: mean(analysis),
        mean_loc: mean(locs),
    })
}

/// Percentage-point drop in vulnerable output from `before` to `after`.
pub fn reduction(before: &EvalMetrics, after: &EvalMetrics) -> f64 {
    round1(before.vulnerable_percent - after.vulnerable_percent)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct MetricsReport {
    pub schema_version: u32,
    pub strategy: String,
    #[serde(flatten)]
    pub metrics: EvalMetrics,
    /// Findings left in the final programs, per category.
    pub category_summary: BTreeMap<String, usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub table: Option<String>,
}

impl MetricsReport {
    pub fn new(strategy: impl Into<String>, sessions: &[RepairSession]) -> Result<Self, BenchError> {
        let strategy = strategy.into();
        let metrics = evaluate_strategy(sessions)?;
        let category_summary = summarize(sessions.iter().filter_map(|s| s.final_report()))
            .into_iter()
            .map(|(c, n)| (c.to_string(), n))
            .collect();
        let table = render_table(&[(strategy.as_str(), &metrics)]);
        Ok(Self {
            schema_version: 1,
            strategy,
            metrics,
            category_summary,
            table: Some(table),
        })
    }
}

/// Plain-text table with one row per strategy.
pub fn render_table(rows: &[(&str, &EvalMetrics)]) -> String {
    let header = ["Strategy", "# vulnerable", "% vulnerable", "Avg Time (s)", "LoC"];
    let body: Vec<[String; 5]> = rows
        .iter()
        .map(|(name, m)| {
            [
                name.to_string(),
                format!("{}/{}", m.vulnerable_count, m.total_count),
                format!("{:.1}", m.vulnerable_percent),
                format!("{:.1}", m.avg_seconds),
                format!("{:.1}", m.mean_loc),
            ]
        })
        .collect();
    let widths: Vec<usize> = (0..5)
        .map(|i| body.iter().map(|r| r[i].len()).chain([header[i].len()]).max().unwrap_or(0))
        .collect();
    let line = |cells: Vec<&str>| {
        cells
            .iter()
            .enumerate()
            .map(|(i, c)| if i == 0 { format!("{c:<w$}", w = widths[i]) } else { format!("{c:>w$}", w = widths[i]) })
            .collect::<Vec<_>>()
            .join(" | ")
    };
    let mut out = vec![line(header.to_vec())];
    out.push(widths.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>().join("-+-"));
    out.extend(body.iter().map(|r| line(r.iter().map(String::as_str).collect())));
    out.join("\n")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", default)]
pub struct RunOptions {
    pub runs_per_prompt: usize,
    /// Worker threads used across prompts.
    pub width: usize,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            runs_per_prompt: PROBE_RUNS,
            width: 4,
        }
    }
}

/// Runs `cfg`'s strategy on every vulnerable prompt of the manifest,
/// `runs_per_prompt` times each. Run 0 starts from the configured initial
/// temperature, later runs from the sampling temperature. Sessions come back
/// in prompt order, then run order.
pub fn run_benchmark(
    manifest: &Manifest,
    cfg: &StrategyConfig,
    analyzer: &AnalyzerConfig,
    opts: RunOptions,
) -> Result<Vec<RepairSession>, BenchError> {
    cfg.validate().map_err(|e| BenchError::Inconsistent(e.to_string()))?;
    let jobs: Vec<(&str, &str, usize)> = manifest
        .vulnerable_prompts()
        .flat_map(|p| {
            let prefix = p.non_vulnerable_prefix.as_deref().unwrap_or_default();
            (0..opts.runs_per_prompt).map(move |run| (p.prompt_id.as_str(), prefix, run))
        })
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.width.max(1))
        .build()
        .map_err(|e| BenchError::Pool(e.to_string()))?;
    pool.install(|| {
        jobs.par_iter()
            .map(|(id, prefix, run)| {
                let run_cfg = StrategyConfig {
                    initial_temperature: if *run == 0 { cfg.initial_temperature } else { probe_temperature(*run) },
                    ..cfg.clone()
                };
                let mut backends = SessionBackends::from_config(&run_cfg, Some(id))
                    .map_err(|e| BenchError::Inconsistent(e.to_string()))?;
                run_session(prefix, &run_cfg, analyzer, &mut backends, None)
                    .map_err(|e| BenchError::Inconsistent(format!("prompt {id} run {run}: {e}")))
            })
            .collect()
    })
}
