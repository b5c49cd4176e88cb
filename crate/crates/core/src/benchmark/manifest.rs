use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analyzers::AnalyzerConfig;
use crate::diagnostics::summarize;
use crate::llm::{ChatBackend, LlmError};
use crate::prompting::PromptBuilder;

use super::{
    classify_vulnerable_prompt, ingest_posts, probe_temperature, round_one_filter, round_two_probe, BenchError,
    CompletionRecord, DumpPost, PromptRecord, DEFAULT_KEYWORDS, PROBE_RUNS,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ManifestStats {
    pub posts_ingested: usize,
    pub round_one_survivors: usize,
    pub probed_prompts: usize,
    pub completions: usize,
    pub vulnerable_prompts: usize,
    /// Completions belonging to vulnerable prompts: the evaluation set.
    pub benchmark_completions: usize,
}

/// The constructed dataset: probed prompts, their completions, and which
/// prompts turned out vulnerable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Manifest {
    pub schema_version: u32,
    pub keywords: Vec<String>,
    pub prompts: Vec<PromptRecord>,
    pub completions: Vec<CompletionRecord>,
    pub vulnerable_prompt_ids: Vec<String>,
    pub category_summary: BTreeMap<String, usize>,
    pub stats: ManifestStats,
}

#[derive(Debug, Clone)]
pub struct BuildOptions {
    pub keywords: Vec<String>,
    pub width: usize,
    pub prompts: PromptBuilder,
}

impl Default for BuildOptions {
    fn default() -> Self {
        Self {
            keywords: DEFAULT_KEYWORDS.iter().map(|k| k.to_string()).collect(),
            width: 4,
            prompts: PromptBuilder::default(),
        }
    }
}

pub type BackendFactory<'a> = dyn Fn(&PromptRecord) -> Result<Box<dyn ChatBackend>, LlmError> + Sync + 'a;

fn category_summary<'a>(
    completions: impl IntoIterator<Item = &'a CompletionRecord>,
) -> BTreeMap<String, usize> {
    summarize(completions.into_iter().filter_map(|c| c.report.as_ref()))
        .into_iter()
        .map(|(c, n)| (c.to_string(), n))
        .collect()
}

/// Runs both filtering rounds over `posts`. Prompts are probed concurrently
/// on `opts.width` workers, each with its own backend from `backend`.
pub fn build_manifest(
    posts: &[DumpPost],
    analyzer: &AnalyzerConfig,
    backend: &BackendFactory<'_>,
    opts: &BuildOptions,
) -> Result<Manifest, BenchError> {
    let keywords: Vec<&str> = opts.keywords.iter().map(String::as_str).collect();
    let ingested = ingest_posts(posts, &keywords);
    let survivors = round_one_filter(&ingested, analyzer);
    let prompts: Vec<PromptRecord> = survivors
        .iter()
        .filter(|r| r.non_vulnerable_prefix.is_some())
        .cloned()
        .collect();

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.width.max(1))
        .build()
        .map_err(|e| BenchError::Pool(e.to_string()))?;
    let probed: Vec<Vec<CompletionRecord>> = pool.install(|| {
        prompts
            .par_iter()
            .map(|record| {
                let mut b = backend(record)?;
                round_two_probe(record, b.as_mut(), analyzer, &opts.prompts)
            })
            .collect::<Result<_, BenchError>>()
    })?;

    let mut vulnerable_prompt_ids = Vec::new();
    for (record, completions) in prompts.iter().zip(&probed) {
        if classify_vulnerable_prompt(completions)? {
            vulnerable_prompt_ids.push(record.prompt_id.clone());
        }
    }
    let completions: Vec<CompletionRecord> = probed.into_iter().flatten().collect();
    let mut manifest = Manifest {
        schema_version: 1,
        keywords: opts.keywords.clone(),
        stats: ManifestStats {
            posts_ingested: ingested.len(),
            round_one_survivors: survivors.len(),
            probed_prompts: prompts.len(),
            completions: completions.len(),
            vulnerable_prompts: vulnerable_prompt_ids.len(),
            benchmark_completions: vulnerable_prompt_ids.len() * PROBE_RUNS,
        },
        prompts,
        completions,
        vulnerable_prompt_ids,
        category_summary: BTreeMap::new(),
    };
    manifest.category_summary = category_summary(manifest.benchmark_completions());
    manifest.check()?;
    Ok(manifest)
}

impl Manifest {
    pub fn vulnerable_prompts(&self) -> impl Iterator<Item = &PromptRecord> {
        self.prompts
            .iter()
            .filter(|p| self.vulnerable_prompt_ids.contains(&p.prompt_id))
    }

    /// Completions of vulnerable prompts.
    pub fn benchmark_completions(&self) -> impl Iterator<Item = &CompletionRecord> {
        self.completions
            .iter()
            .filter(|c| self.vulnerable_prompt_ids.contains(&c.prompt_id))
    }

    /// Verifies the manifest's internal arithmetic and classifications.
    pub fn check(&self) -> Result<(), BenchError> {
        let bad = |msg: String| Err(BenchError::Inconsistent(msg));
        if self.schema_version != 1 {
            return bad(format!("unsupported schemaVersion {}", self.schema_version));
        }
        let s = &self.stats;
        if s.probed_prompts != self.prompts.len() || s.completions != self.completions.len() {
            return bad("stats disagree with record counts".into());
        }
        if self.completions.len() != PROBE_RUNS * self.prompts.len() {
            return bad(format!(
                "{} completions for {} prompts, expected {} x {PROBE_RUNS} = {}",
                self.completions.len(),
                self.prompts.len(),
                self.prompts.len(),
                PROBE_RUNS * self.prompts.len()
            ));
        }
        if s.posts_ingested < s.round_one_survivors || s.round_one_survivors < s.probed_prompts {
            return bad("funnel counts must not grow".into());
        }
        let mut by_prompt: HashMap<&str, Vec<CompletionRecord>> = HashMap::new();
        for c in &self.completions {
            if c.temperature != probe_temperature(c.run_index) {
                return bad(format!("{} run {} has temperature {}", c.prompt_id, c.run_index, c.temperature));
            }
            by_prompt.entry(c.prompt_id.as_str()).or_default().push(c.clone());
        }
        let mut expected_ids = Vec::new();
        for p in &self.prompts {
            if p.non_vulnerable_prefix.is_none() {
                return bad(format!("prompt {} has no prefix", p.prompt_id));
            }
            let set = by_prompt.remove(p.prompt_id.as_str()).unwrap_or_default();
            if classify_vulnerable_prompt(&set)? {
                expected_ids.push(p.prompt_id.clone());
            }
        }
        if let Some(orphan) = by_prompt.keys().next() {
            return bad(format!("completions for unknown prompt {orphan}"));
        }
        if expected_ids != self.vulnerable_prompt_ids {
            return bad("vulnerablePromptIds disagree with the completions".into());
        }
        if s.vulnerable_prompts != expected_ids.len() || s.benchmark_completions != PROBE_RUNS * expected_ids.len() {
            return bad(format!(
                "{} vulnerable prompts must give {} x {PROBE_RUNS} = {} benchmark completions",
                expected_ids.len(),
                expected_ids.len(),
                PROBE_RUNS * expected_ids.len()
            ));
        }
        if category_summary(self.benchmark_completions()) != self.category_summary {
            return bad("categorySummary disagrees with the completion reports".into());
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<(), BenchError> {
        let text = serde_json::to_string_pretty(self).map_err(|e| BenchError::Inconsistent(e.to_string()))?;
        std::fs::write(path, text + "\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, BenchError> {
        let text = std::fs::read_to_string(path)?;
        let manifest: Self =
            serde_json::from_str(&text).map_err(|e| BenchError::Inconsistent(format!("{}: {e}", path.display())))?;
        manifest.check()?;
        Ok(manifest)
    }
}
