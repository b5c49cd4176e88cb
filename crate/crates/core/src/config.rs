//! The single JSON configuration file shared by the CLI and the service.
//!
//! Precedence, highest first: command-line flags, environment variables, the
//! config file, built-in defaults. Flags are applied by the caller; this
//! module handles the other three layers.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analyzers::{AnalyzerConfig, CPPCHECK_ENV, INFER_ENV};
use crate::llm::BackendConfig;
use crate::prompting::PromptTemplate;
use crate::repair::StrategyConfig;

pub const CONFIG_ENV: &str = "CODEXITY_CONFIG";
pub const DEFAULT_BIND: &str = "127.0.0.1:8791";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("invalid config {path}: {reason}")]
    Invalid { path: PathBuf, reason: String },
    #[error("unknown backend `{0}`")]
    UnknownBackend(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", default)]
pub struct CodexityConfig {
    pub bind_address: String,
    pub run_log_path: PathBuf,
    #[serde(alias = "strategyDefaults")]
    pub strategy: StrategyConfig,
    #[serde(alias = "analyzerDefaults")]
    pub analyzer: AnalyzerConfig,
    /// Named backends selectable with `--backend`.
    pub backends: BTreeMap<String, BackendConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub template_path: Option<PathBuf>,
}

impl Default for CodexityConfig {
    fn default() -> Self {
        Self {
            bind_address: DEFAULT_BIND.into(),
            run_log_path: PathBuf::from("codexity-runs.jsonl"),
            strategy: StrategyConfig::default(),
            analyzer: AnalyzerConfig::default(),
            backends: BTreeMap::new(),
            template_path: None,
        }
    }
}

impl CodexityConfig {
    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg: Self = serde_json::from_str(&text).map_err(|e| ConfigError::Invalid {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_relative(base);
        if let Some(template) = &cfg.template_path {
            cfg.strategy.prompt.template = PromptTemplate::load(template).map_err(|e| ConfigError::Invalid {
                path: path.to_path_buf(),
                reason: e.to_string(),
            })?;
        }
        Ok(cfg)
    }

    /// Defaults, overlaid by the file at `explicit` or `$CODEXITY_CONFIG`,
    /// overlaid by the tool-path environment variables.
    pub fn load(explicit: Option<&Path>) -> Result<Self, ConfigError> {
        let from_env = std::env::var_os(CONFIG_ENV).filter(|v| !v.is_empty()).map(PathBuf::from);
        let mut cfg = match explicit.map(Path::to_path_buf).or(from_env) {
            Some(path) => Self::from_file(&path)?,
            None => Self::default(),
        };
        cfg.apply_env();
        Ok(cfg)
    }

    pub fn apply_env(&mut self) {
        if let Some(p) = std::env::var_os(CPPCHECK_ENV).filter(|v| !v.is_empty()) {
            self.analyzer.cppcheck_path = Some(PathBuf::from(p));
        }
        if let Some(p) = std::env::var_os(INFER_ENV).filter(|v| !v.is_empty()) {
            self.analyzer.infer_path = Some(PathBuf::from(p));
        }
    }

    pub fn backend(&self, name: &str) -> Result<BackendConfig, ConfigError> {
        self.backends
            .get(name)
            .cloned()
            .ok_or_else(|| ConfigError::UnknownBackend(name.to_string()))
    }

    // Paths in the file are relative to the file itself.
    fn resolve_relative(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.run_log_path);
        if let Some(p) = self.template_path.as_mut() {
            fix(p);
        }
        for backend in self
            .backends
            .values_mut()
            .chain([&mut self.strategy.target_backend])
            .chain(self.strategy.local_backend.as_mut())
        {
            if let Some(p) = backend.script_path.as_mut() {
                fix(p);
            }
        }
    }
}
