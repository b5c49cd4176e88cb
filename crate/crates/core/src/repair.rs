//! Repair strategies.
//!
//! Iteration repair feeds analyzer findings back to the target model until
//! its output is clean or the repair budget runs out. Preshot repair asks a
//! local model for a draft first, analyzes it, and warns the target model
//! about the draft's findings in a single query. Baseline is one plain
//! generation with no repair.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analyzers::{analyze_candidate, AnalyzeError, AnalyzerConfig, Candidate, DEFAULT_FILE_LABEL};
use crate::diagnostics::AnalysisReport;
use crate::llm::{
    generate, BackendConfig, ChatBackend, ChatMessage, GenerationRequest, GenerationResult, LlmError, OutputClass,
    DEFAULT_MAX_TOKENS,
};
use crate::prompting::{PromptBuilder, PromptError};
use crate::runlog::RunLog;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Iteration,
    Preshot,
    Baseline,
}

impl Strategy {
    pub fn name(self) -> &'static str {
        match self {
            Strategy::Iteration => "iteration",
            Strategy::Preshot => "preshot",
            Strategy::Baseline => "baseline",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "iteration" => Ok(Strategy::Iteration),
            "preshot" => Ok(Strategy::Preshot),
            "baseline" => Ok(Strategy::Baseline),
            other => Err(format!("unknown strategy `{other}` (expected iteration, preshot or baseline)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", default)]
pub struct StrategyConfig {
    pub strategy: Strategy,
    pub max_iterations: u32,
    pub initial_temperature: f64,
    pub repair_temperature: f64,
    pub local_temperature: f64,
    pub max_tokens: u32,
    pub target_backend: BackendConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub local_backend: Option<BackendConfig>,
    /// Repair rounds extend the whole conversation instead of restating only
    /// the latest code and findings.
    pub carry_history: bool,
    pub prompt: PromptBuilder,
}

impl Default for StrategyConfig {
    fn default() -> Self {
        Self {
            strategy: Strategy::Iteration,
            max_iterations: 3,
            initial_temperature: 0.0,
            repair_temperature: 0.0,
            local_temperature: 0.2,
            max_tokens: DEFAULT_MAX_TOKENS,
            target_backend: BackendConfig::default(),
            local_backend: None,
            carry_history: false,
            prompt: PromptBuilder::default(),
        }
    }
}

impl StrategyConfig {
    pub fn iteration(target: BackendConfig) -> Self {
        Self {
            target_backend: target,
            ..Self::default()
        }
    }

    pub fn preshot(local: BackendConfig, target: BackendConfig) -> Self {
        Self {
            strategy: Strategy::Preshot,
            target_backend: target,
            local_backend: Some(local),
            ..Self::default()
        }
    }

    pub fn baseline(target: BackendConfig) -> Self {
        Self {
            strategy: Strategy::Baseline,
            target_backend: target,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), RepairError> {
        let bad = |msg: String| Err(RepairError::Config(msg));
        if self.max_iterations < 1 {
            return bad("maxIterations must be at least 1".into());
        }
        if self.max_tokens == 0 {
            return bad("maxTokens must be positive".into());
        }
        for (name, t) in [
            ("initialTemperature", self.initial_temperature),
            ("repairTemperature", self.repair_temperature),
            ("localTemperature", self.local_temperature),
        ] {
            if !(0.0..=2.0).contains(&t) {
                return bad(format!("{name} {t} outside [0, 2]"));
            }
        }
        if self.strategy == Strategy::Preshot && self.local_backend.is_none() {
            return bad("preshot strategy requires localBackend".into());
        }
        self.target_backend
            .descriptor
            .validate()
            .map_err(|e| RepairError::Config(format!("targetBackend: {e}")))?;
        if let Some(local) = &self.local_backend {
            local
                .descriptor
                .validate()
                .map_err(|e| RepairError::Config(format!("localBackend: {e}")))?;
        }
        self.prompt
            .template
            .validate()
            .map_err(|e| RepairError::Config(e.to_string()))
    }

    /// Upper bound on generations for this strategy.
    pub fn generation_budget(&self) -> usize {
        match self.strategy {
            Strategy::Iteration => 1 + self.max_iterations as usize,
            Strategy::Preshot => 2,
            Strategy::Baseline => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum IterationRole {
    /// First generation by the target model.
    Initial,
    /// Regeneration after findings were reported.
    Repair,
    /// Local model draft (preshot).
    Draft,
    /// Target model generation after the preshot warning.
    Target,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct IterationRecord {
    pub index: usize,
    pub role: IterationRole,
    pub request: GenerationRequest,
    pub result: GenerationResult,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub report: Option<AnalysisReport>,
    pub output_class: OutputClass,
    #[serde(default)]
    pub analysis_seconds: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum Outcome {
    Safe,
    VulnerableResidual,
    NonCodeOutput,
}

impl Outcome {
    /// Vulnerable for benchmark accounting: residual findings, or no code to
    /// vouch for.
    pub fn counts_vulnerable(self) -> bool {
        !matches!(self, Outcome::Safe)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timestamps {
    pub started: DateTime<Utc>,
    pub finished: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct RepairSession {
    pub session_id: String,
    pub strategy: Strategy,
    pub prompt_code: String,
    pub config: StrategyConfig,
    pub iterations: Vec<IterationRecord>,
    pub outcome: Outcome,
    pub final_code: Option<String>,
    pub total_seconds: f64,
    pub repair_iteration_count: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
    pub timestamps: Timestamps,
}

impl RepairSession {
    pub fn generation_seconds(&self) -> f64 {
        self.iterations.iter().map(|i| i.result.latency_seconds).sum()
    }

    pub fn analysis_seconds(&self) -> f64 {
        self.iterations.iter().map(|i| i.analysis_seconds).sum()
    }

    /// The report of the last analyzed generation.
    pub fn final_report(&self) -> Option<&AnalysisReport> {
        self.iterations.last().and_then(|i| i.report.as_ref())
    }

    /// Checks the structural invariants of a finished session.
    pub fn check(&self) -> Result<(), String> {
        for (pos, it) in self.iterations.iter().enumerate() {
            if it.index != pos {
                return Err(format!("iteration {pos} has index {}", it.index));
            }
            if it.report.is_some() != (it.output_class == OutputClass::Code) {
                return Err(format!("iteration {pos}: report present iff output is code"));
            }
            if it.output_class != it.result.output_class() {
                return Err(format!("iteration {pos}: output class disagrees with extraction"));
            }
        }
        if self.iterations.is_empty() {
            return Err("session without generations".into());
        }
        if self.iterations.len() > self.config.generation_budget() {
            return Err(format!(
                "{} generations exceed the {} budget of {}",
                self.iterations.len(),
                self.strategy,
                self.config.generation_budget()
            ));
        }
        let repairs = self.iterations.iter().filter(|i| i.role == IterationRole::Repair).count();
        if repairs != self.repair_iteration_count {
            return Err(format!("repairIterationCount {} but {repairs} repair generations", self.repair_iteration_count));
        }
        let last = self.iterations.last().expect("non-empty");
        match self.outcome {
            Outcome::Safe | Outcome::VulnerableResidual => {
                let code = self.final_code.as_ref().ok_or("outcome with code but no finalCode")?;
                if last.result.extracted_code.as_ref() != Some(code) {
                    return Err("finalCode is not the last generated program".into());
                }
                let vulnerable = last.report.as_ref().ok_or("final generation was not analyzed")?.is_vulnerable();
                if vulnerable != (self.outcome == Outcome::VulnerableResidual) {
                    return Err("outcome disagrees with the final analysis".into());
                }
            }
            Outcome::NonCodeOutput => {
                if self.final_code.is_some() || last.output_class != OutputClass::NonCode {
                    return Err("nonCodeOutput must end on a non-code generation without finalCode".into());
                }
            }
        }
        if self.total_seconds + 1e-9 < self.generation_seconds() {
            return Err("totalSeconds below summed generation latency".into());
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum RepairError {
    #[error("invalid strategy configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("backend failure in session {session_id} after {} generations: {source}", trail.len())]
    Backend {
        session_id: String,
        trail: Vec<IterationRecord>,
        #[source]
        source: LlmError,
    },
    #[error("analysis failure in session {session_id} after {} generations: {source}", trail.len())]
    Analysis {
        session_id: String,
        trail: Vec<IterationRecord>,
        #[source]
        source: AnalyzeError,
    },
    #[error("cannot append to run log: {0}")]
    RunLog(#[from] std::io::Error),
}

/// Backends owned by one session.
pub struct SessionBackends {
    pub target: Box<dyn ChatBackend>,
    pub local: Option<Box<dyn ChatBackend>>,
}

impl SessionBackends {
    pub fn new(target: impl ChatBackend + 'static) -> Self {
        Self {
            target: Box::new(target),
            local: None,
        }
    }

    pub fn with_local(mut self, local: impl ChatBackend + 'static) -> Self {
        self.local = Some(Box::new(local));
        self
    }

    /// Fresh backends for `cfg`; `key` picks a keyed mock script.
    pub fn from_config(cfg: &StrategyConfig, key: Option<&str>) -> Result<Self, RepairError> {
        let build = |b: &BackendConfig| b.instantiate_for(key).map_err(|e| RepairError::Config(e.to_string()));
        Ok(Self {
            target: build(&cfg.target_backend)?,
            local: cfg.local_backend.as_ref().map(build).transpose()?,
        })
    }
}

struct Run<'a> {
    session_id: String,
    prompt_code: &'a str,
    cfg: &'a StrategyConfig,
    analyzer: &'a AnalyzerConfig,
    trail: Vec<IterationRecord>,
    warnings: Vec<String>,
    started: DateTime<Utc>,
    clock: Instant,
}

enum Step {
    NonCode,
    Analyzed { code: String, vulnerable: bool },
}

impl<'a> Run<'a> {
    fn new(prompt_code: &'a str, cfg: &'a StrategyConfig, analyzer: &'a AnalyzerConfig) -> Self {
        Self {
            session_id: uuid::Uuid::new_v4().simple().to_string(),
            prompt_code,
            cfg,
            analyzer,
            trail: Vec::new(),
            warnings: Vec::new(),
            started: Utc::now(),
            clock: Instant::now(),
        }
    }

    fn request(&self, messages: Vec<ChatMessage>, temperature: f64, backend: &dyn ChatBackend) -> GenerationRequest {
        GenerationRequest {
            messages,
            temperature,
            max_tokens: self.cfg.max_tokens,
            model: backend.descriptor().model.clone(),
        }
    }

    fn generate(&mut self, req: &GenerationRequest, backend: &mut dyn ChatBackend) -> Result<GenerationResult, RepairError> {
        generate(req, backend).map_err(|source| RepairError::Backend {
            session_id: self.session_id.clone(),
            trail: self.trail.clone(),
            source,
        })
    }

    fn analyze(&mut self, code: &str) -> Result<(AnalysisReport, f64), RepairError> {
        let started = Instant::now();
        let candidate = Candidate {
            source: code,
            session_id: &self.session_id,
            iteration: self.trail.len(),
            label: DEFAULT_FILE_LABEL,
        };
        match analyze_candidate(&candidate, self.analyzer) {
            Ok(report) => Ok((report, started.elapsed().as_secs_f64())),
            Err(source) => Err(RepairError::Analysis {
                session_id: self.session_id.clone(),
                trail: self.trail.clone(),
                source,
            }),
        }
    }

    /// Generates, analyzes and records one iteration.
    fn step(&mut self, role: IterationRole, req: GenerationRequest, backend: &mut dyn ChatBackend) -> Result<Step, RepairError> {
        let result = self.generate(&req, backend)?;
        let (report, analysis_seconds, step) = match result.extracted_code.clone() {
            None => (None, 0.0, Step::NonCode),
            Some(code) => {
                let (report, secs) = self.analyze(&code)?;
                let vulnerable = report.is_vulnerable();
                (Some(report), secs, Step::Analyzed { code, vulnerable })
            }
        };
        tracing::info!(
            session = %self.session_id,
            index = self.trail.len(),
            ?role,
            findings = report.as_ref().map_or(0, |r| r.diagnostics.len()),
            "iteration finished"
        );
        self.trail.push(IterationRecord {
            index: self.trail.len(),
            role,
            output_class: result.output_class(),
            request: req,
            result,
            report,
            analysis_seconds,
        });
        Ok(step)
    }

    fn finish(self, outcome: Outcome, final_code: Option<String>) -> RepairSession {
        let repair_iteration_count = self.trail.iter().filter(|i| i.role == IterationRole::Repair).count();
        RepairSession {
            session_id: self.session_id,
            strategy: self.cfg.strategy,
            prompt_code: self.prompt_code.to_string(),
            config: self.cfg.clone(),
            iterations: self.trail,
            outcome,
            final_code,
            total_seconds: self.clock.elapsed().as_secs_f64(),
            repair_iteration_count,
            warnings: self.warnings,
            timestamps: Timestamps {
                started: self.started,
                finished: Utc::now(),
            },
        }
    }
}

fn verdict(step: Step) -> (Outcome, Option<String>) {
    match step {
        Step::NonCode => (Outcome::NonCodeOutput, None),
        Step::Analyzed { code, vulnerable: false } => (Outcome::Safe, Some(code)),
        Step::Analyzed { code, vulnerable: true } => (Outcome::VulnerableResidual, Some(code)),
    }
}

fn require(cfg: &StrategyConfig, strategy: Strategy) -> Result<(), RepairError> {
    cfg.validate()?;
    if cfg.strategy != strategy {
        return Err(RepairError::Config(format!("expected {strategy} strategy, got {}", cfg.strategy)));
    }
    Ok(())
}

pub fn iteration_repair(
    prompt_code: &str,
    cfg: &StrategyConfig,
    analyzer: &AnalyzerConfig,
    target: &mut dyn ChatBackend,
) -> Result<RepairSession, RepairError> {
    require(cfg, Strategy::Iteration)?;
    let builder = &cfg.prompt;
    let mut run = Run::new(prompt_code, cfg, analyzer);
    let mut req = run.request(builder.build_completion_prompt(prompt_code)?, cfg.initial_temperature, target);
    let mut role = IterationRole::Initial;
    let mut repairs = 0;
    loop {
        let step = run.step(role, req.clone(), target)?;
        let Step::Analyzed { code, vulnerable: true } = step else {
            let (outcome, code) = verdict(step);
            return Ok(run.finish(outcome, code));
        };
        if repairs == cfg.max_iterations {
            return Ok(run.finish(Outcome::VulnerableResidual, Some(code)));
        }
        let report = run.trail.last().and_then(|i| i.report.as_ref()).expect("analyzed step has a report");
        let messages = if cfg.carry_history {
            builder.continue_repair_prompt(&req.messages, &code, report, prompt_code)?
        } else {
            builder.build_repair_prompt(&code, report, Some(prompt_code))?
        };
        req = run.request(messages, cfg.repair_temperature, target);
        role = IterationRole::Repair;
        repairs += 1;
    }
}

pub fn preshot_repair(
    prompt_code: &str,
    cfg: &StrategyConfig,
    analyzer: &AnalyzerConfig,
    local: &mut dyn ChatBackend,
    target: &mut dyn ChatBackend,
) -> Result<RepairSession, RepairError> {
    require(cfg, Strategy::Preshot)?;
    let builder = &cfg.prompt;
    let mut run = Run::new(prompt_code, cfg, analyzer);
    let plain = builder.build_completion_prompt(prompt_code)?;

    let draft_req = run.request(plain.clone(), cfg.local_temperature, local);
    let draft_report = match run.step(IterationRole::Draft, draft_req, local) {
        Ok(Step::Analyzed { .. }) => run.trail.last().and_then(|i| i.report.clone()).unwrap_or_default(),
        Ok(Step::NonCode) => AnalysisReport::default(),
        Err(RepairError::Backend { source, .. }) => {
            run.warnings
                .push(format!("local model failed, falling back to the plain completion prompt: {source}"));
            AnalysisReport::default()
        }
        Err(other) => return Err(other),
    };

    let messages = builder.build_preshot_prompt(prompt_code, &draft_report)?;
    let req = run.request(messages, cfg.initial_temperature, target);
    let step = run.step(IterationRole::Target, req, target)?;
    let (outcome, code) = verdict(step);
    Ok(run.finish(outcome, code))
}

pub fn baseline_completion(
    prompt_code: &str,
    cfg: &StrategyConfig,
    analyzer: &AnalyzerConfig,
    target: &mut dyn ChatBackend,
) -> Result<RepairSession, RepairError> {
    require(cfg, Strategy::Baseline)?;
    let mut run = Run::new(prompt_code, cfg, analyzer);
    let req = run.request(cfg.prompt.build_completion_prompt(prompt_code)?, cfg.initial_temperature, target);
    let step = run.step(IterationRole::Initial, req, target)?;
    let (outcome, code) = verdict(step);
    Ok(run.finish(outcome, code))
}

/// Runs the configured strategy, then appends the session to `log`.
pub fn run_session(
    prompt_code: &str,
    cfg: &StrategyConfig,
    analyzer: &AnalyzerConfig,
    backends: &mut SessionBackends,
    log: Option<&RunLog>,
) -> Result<RepairSession, RepairError> {
    cfg.validate()?;
    let clock = Instant::now();
    let mut session = match cfg.strategy {
        Strategy::Iteration => iteration_repair(prompt_code, cfg, analyzer, backends.target.as_mut())?,
        Strategy::Baseline => baseline_completion(prompt_code, cfg, analyzer, backends.target.as_mut())?,
        Strategy::Preshot => {
            let local = backends
                .local
                .as_mut()
                .ok_or_else(|| RepairError::Config("preshot strategy requires a local backend".into()))?;
            preshot_repair(prompt_code, cfg, analyzer, local.as_mut(), backends.target.as_mut())?
        }
    };
    session.total_seconds = session.total_seconds.max(clock.elapsed().as_secs_f64());
    if let Some(log) = log {
        log.append(&session)?;
    }
    Ok(session)
}

/// [`run_session`] with backends built from the configuration.
pub fn run_configured_session(
    prompt_code: &str,
    cfg: &StrategyConfig,
    analyzer: &AnalyzerConfig,
    log: Option<&RunLog>,
) -> Result<RepairSession, RepairError> {
    cfg.validate()?;
    let mut backends = SessionBackends::from_config(cfg, None)?;
    run_session(prompt_code, cfg, analyzer, &mut backends, log)
}
