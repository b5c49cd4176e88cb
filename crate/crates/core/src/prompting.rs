//! Prompt construction for completions, repairs and preshot warnings.

use std::collections::BTreeSet;
use std::path::Path;
use std::sync::LazyLock;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diagnostics::{dedupe, AnalysisReport, VulnerabilityCategory};
use crate::llm::{fence, ChatMessage};

pub const DEFAULT_TEMPLATE_JSON: &str = include_str!("../data/prompt_template.json");
pub const DEFAULT_CHAR_BUDGET: usize = 24_000;

static DEFAULT_TEMPLATE: LazyLock<PromptTemplate> =
    LazyLock::new(|| serde_json::from_str(DEFAULT_TEMPLATE_JSON).expect("default prompt template is valid"));

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PromptError {
    #[error("prompt input is empty")]
    EmptyInput,
    #[error("repair prompt requested for a report without findings")]
    NotVulnerable,
    #[error("invalid prompt template: {0}")]
    Template(String),
}

/// Prompt wording. `{CODE}`, `{DIAGNOSTICS}` and `{PROMPT}` are substituted
/// when a prompt is built.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct PromptTemplate {
    pub system: String,
    pub completion_user: String,
    pub repair_user: String,
    pub preshot_warning: String,
}

impl Default for PromptTemplate {
    fn default() -> Self {
        DEFAULT_TEMPLATE.clone()
    }
}

impl PromptTemplate {
    pub fn load(path: &Path) -> Result<Self, PromptError> {
        let text = std::fs::read_to_string(path).map_err(|e| PromptError::Template(format!("{}: {e}", path.display())))?;
        let template: Self =
            serde_json::from_str(&text).map_err(|e| PromptError::Template(format!("{}: {e}", path.display())))?;
        template.validate()?;
        Ok(template)
    }

    pub fn validate(&self) -> Result<(), PromptError> {
        for (name, text, placeholder) in [
            ("completionUser", &self.completion_user, "{CODE}"),
            ("repairUser", &self.repair_user, "{DIAGNOSTICS}"),
            ("preshotWarning", &self.preshot_warning, "{DIAGNOSTICS}"),
        ] {
            if !text.contains(placeholder) {
                return Err(PromptError::Template(format!("{name} lacks {placeholder}")));
            }
        }
        Ok(())
    }
}

/// Substitutes `{NAME}` placeholders in one pass, so substituted text is never
/// itself expanded.
fn render(template: &str, vars: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    'outer: while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let tail = &rest[open..];
        for (name, value) in vars {
            let token_len = name.len() + 2;
            if tail.len() >= token_len
                && tail.as_bytes()[token_len - 1] == b'}'
                && &tail[1..token_len - 1] == *name
            {
                out.push_str(value);
                rest = &tail[token_len..];
                continue 'outer;
            }
        }
        out.push('{');
        rest = &tail[1..];
    }
    out.push_str(rest);
    out
}

fn line_phrase(lines: &BTreeSet<u32>) -> String {
    let nums: Vec<String> = lines.iter().map(u32::to_string).collect();
    match nums.as_slice() {
        [one] => format!("line {one}"),
        [init @ .., last] => format!("lines {} and {last}", init.join(", ")),
        [] => String::new(),
    }
}

/// One line per (category, message) group, in order of first appearance.
pub fn render_diagnostics(report: &AnalysisReport) -> Vec<String> {
    let mut groups: Vec<(&VulnerabilityCategory, &str, BTreeSet<u32>)> = Vec::new();
    for d in &report.diagnostics {
        match groups
            .iter_mut()
            .find(|(c, m, _)| **c == d.category && *m == d.message)
        {
            Some((_, _, lines)) => {
                lines.insert(d.line());
            }
            None => groups.push((&d.category, &d.message, BTreeSet::from([d.line()]))),
        }
    }
    groups
        .into_iter()
        .map(|(category, message, lines)| format!("{category} identified at {}: {message}", line_phrase(&lines)))
        .collect()
}

fn more_findings(n: usize) -> String {
    format!("…and {n} more finding{}", if n == 1 { "" } else { "s" })
}

fn total_chars(messages: &[ChatMessage]) -> usize {
    messages.iter().map(|m| m.content.chars().count()).sum()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", default)]
pub struct PromptBuilder {
    pub template: PromptTemplate,
    /// Upper bound on the characters across all messages. Findings are
    /// dropped to fit; code never is.
    pub char_budget: usize,
    /// Restate the original task before the vulnerable code in repair prompts.
    pub include_task: bool,
}

impl Default for PromptBuilder {
    fn default() -> Self {
        Self {
            template: PromptTemplate::default(),
            char_budget: DEFAULT_CHAR_BUDGET,
            include_task: true,
        }
    }
}

impl PromptBuilder {
    pub fn new(template: PromptTemplate) -> Self {
        Self {
            template,
            ..Self::default()
        }
    }

    fn completion_user(&self, user_code: &str) -> String {
        render(&self.template.completion_user, &[("CODE", &fence(user_code, "c"))])
    }

    pub fn build_completion_prompt(&self, user_code: &str) -> Result<Vec<ChatMessage>, PromptError> {
        if user_code.trim().is_empty() {
            return Err(PromptError::EmptyInput);
        }
        Ok(vec![
            ChatMessage::system(&self.template.system),
            ChatMessage::user(self.completion_user(user_code)),
        ])
    }

    /// Vulnerable code as an assistant turn followed by a user turn listing
    /// the findings.
    pub fn build_repair_prompt(
        &self,
        vulnerable_code: &str,
        report: &AnalysisReport,
        original_prompt: Option<&str>,
    ) -> Result<Vec<ChatMessage>, PromptError> {
        let mut prefix = vec![ChatMessage::system(&self.template.system)];
        if let Some(task) = original_prompt.filter(|t| self.include_task && !t.trim().is_empty()) {
            prefix.push(ChatMessage::user(self.completion_user(task)));
        }
        self.extend_repair(prefix, vulnerable_code, report, original_prompt.unwrap_or(""))
    }

    /// Appends a repair round to an existing conversation.
    pub fn continue_repair_prompt(
        &self,
        history: &[ChatMessage],
        vulnerable_code: &str,
        report: &AnalysisReport,
        original_prompt: &str,
    ) -> Result<Vec<ChatMessage>, PromptError> {
        self.extend_repair(history.to_vec(), vulnerable_code, report, original_prompt)
    }

    fn extend_repair(
        &self,
        mut messages: Vec<ChatMessage>,
        vulnerable_code: &str,
        report: &AnalysisReport,
        original_prompt: &str,
    ) -> Result<Vec<ChatMessage>, PromptError> {
        if vulnerable_code.trim().is_empty() {
            return Err(PromptError::EmptyInput);
        }
        if !report.is_vulnerable() {
            return Err(PromptError::NotVulnerable);
        }
        messages.push(ChatMessage::assistant(fence(vulnerable_code, "c")));
        let lines = render_diagnostics(report);
        let base = total_chars(&messages);
        let user = self.fit(&lines, |listing| {
            render(
                &self.template.repair_user,
                &[("DIAGNOSTICS", listing), ("PROMPT", original_prompt)],
            )
        }, base);
        messages.push(ChatMessage::user(user));
        Ok(messages)
    }

    /// Completion prompt carrying a warning about the draft's findings; with
    /// no findings it equals the plain completion prompt.
    pub fn build_preshot_prompt(
        &self,
        original_prompt: &str,
        draft_report: &AnalysisReport,
    ) -> Result<Vec<ChatMessage>, PromptError> {
        let mut messages = self.build_completion_prompt(original_prompt)?;
        let findings = dedupe(draft_report);
        if findings.diagnostics.is_empty() {
            return Ok(messages);
        }
        let lines = render_diagnostics(&findings);
        let user = messages.pop().expect("completion prompt has a user turn").content;
        let base = total_chars(&messages);
        let content = self.fit(&lines, |listing| {
            format!("{user}\n\n{}", render(&self.template.preshot_warning, &[("DIAGNOSTICS", listing)]))
        }, base);
        messages.push(ChatMessage::user(content));
        Ok(messages)
    }

    // Largest prefix of `lines` whose rendering keeps the prompt within the
    // budget; the rest are summarized in a count line.
    fn fit(&self, lines: &[String], build: impl Fn(&str) -> String, base: usize) -> String {
        let listing = |keep: usize| {
            let mut shown: Vec<String> = lines[..keep].to_vec();
            if keep < lines.len() {
                shown.push(more_findings(lines.len() - keep));
            }
            build(&shown.join("\n"))
        };
        let full = listing(lines.len());
        if base + full.chars().count() <= self.char_budget {
            return full;
        }
        let (mut lo, mut hi) = (0, lines.len());
        while lo < hi {
            let mid = (lo + hi).div_ceil(2);
            if base + listing(mid).chars().count() <= self.char_budget {
                lo = mid;
            } else {
                hi = mid - 1;
            }
        }
        listing(lo)
    }
}

pub fn build_completion_prompt(user_code: &str) -> Result<Vec<ChatMessage>, PromptError> {
    PromptBuilder::default().build_completion_prompt(user_code)
}

pub fn build_repair_prompt(vulnerable_code: &str, report: &AnalysisReport) -> Result<Vec<ChatMessage>, PromptError> {
    PromptBuilder::default().build_repair_prompt(vulnerable_code, report, None)
}

pub fn build_preshot_prompt(original_prompt: &str, draft_report: &AnalysisReport) -> Result<Vec<ChatMessage>, PromptError> {
    PromptBuilder::default().build_preshot_prompt(original_prompt, draft_report)
}
