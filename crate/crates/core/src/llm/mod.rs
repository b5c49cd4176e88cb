//! Chat-generation backends.
//!
//! [`generate`] drives any [`ChatBackend`]: an OpenAI-compatible chat
//! endpoint, a local prompt-in/text-out model server, or a scripted mock that
//! replays canned responses in order.

mod extract;
mod http;
mod mock;

use std::path::PathBuf;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use extract::{classify_output, extract_code, fence, fenced_blocks, OutputClass};
pub use http::{probe_reachable, LocalCompletionBackend, RemoteChatBackend, API_KEY_ENV};
pub use mock::{turns as mock_turns, MockScript, ScriptedMock, ScriptedTurn};

pub const DEFAULT_MAX_TOKENS: u32 = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        Self { role: Role::System, content: content.into() }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self { role: Role::User, content: content.into() }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self { role: Role::Assistant, content: content.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct GenerationRequest {
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub max_tokens: u32,
    pub model: String,
}

impl GenerationRequest {
    pub fn new(messages: Vec<ChatMessage>, temperature: f64, model: impl Into<String>) -> Self {
        Self {
            messages,
            temperature,
            max_tokens: DEFAULT_MAX_TOKENS,
            model: model.into(),
        }
    }

    pub fn validate(&self) -> Result<(), LlmError> {
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(LlmError::InvalidRequest(format!("temperature {} outside [0, 2]", self.temperature)));
        }
        if self.max_tokens == 0 {
            return Err(LlmError::InvalidRequest("maxTokens must be positive".into()));
        }
        if let Some(m) = self
            .messages
            .iter()
            .find(|m| m.role != Role::System && m.content.is_empty())
        {
            return Err(LlmError::InvalidRequest(format!("empty {:?} message", m.role)));
        }
        Ok(())
    }

    /// The messages flattened into a single prompt for completion-style
    /// backends.
    pub fn flattened_prompt(&self) -> String {
        self.messages
            .iter()
            .map(|m| m.content.as_str())
            .collect::<Vec<_>>()
            .join("\n\n")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum BackendKind {
    RemoteChat,
    LocalCompletion,
    ScriptedMock,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct BackendDescriptor {
    pub kind: BackendKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
    pub model: String,
}

impl BackendDescriptor {
    pub fn mock() -> Self {
        Self {
            kind: BackendKind::ScriptedMock,
            endpoint: None,
            model: "scripted-mock".into(),
        }
    }

    pub fn validate(&self) -> Result<(), LlmError> {
        match (self.kind, &self.endpoint) {
            (BackendKind::RemoteChat | BackendKind::LocalCompletion, None) => Err(LlmError::InvalidBackend(
                format!("{:?} backend requires an endpoint", self.kind),
            )),
            _ => Ok(()),
        }
    }
}

/// How to build a backend: its descriptor plus mock script and transport
/// settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct BackendConfig {
    #[serde(flatten)]
    pub descriptor: BackendDescriptor,
    /// Inline script for `scriptedMock`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub script: Option<MockScript>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub script_path: Option<PathBuf>,
    #[serde(default = "default_request_timeout")]
    pub timeout_seconds: f64,
}

fn default_request_timeout() -> f64 {
    120.0
}

impl Default for BackendConfig {
    fn default() -> Self {
        Self::mock(MockScript::default())
    }
}

impl BackendConfig {
    pub fn mock(script: MockScript) -> Self {
        Self {
            descriptor: BackendDescriptor::mock(),
            script: Some(script),
            script_path: None,
            timeout_seconds: default_request_timeout(),
        }
    }

    pub fn remote(endpoint: impl Into<String>, model: impl Into<String>) -> Self {
        Self::http(BackendKind::RemoteChat, endpoint, model)
    }

    pub fn local(endpoint: impl Into<String>, model: impl Into<String>) -> Self {
        Self::http(BackendKind::LocalCompletion, endpoint, model)
    }

    fn http(kind: BackendKind, endpoint: impl Into<String>, model: impl Into<String>) -> Self {
        Self {
            descriptor: BackendDescriptor {
                kind,
                endpoint: Some(endpoint.into()),
                model: model.into(),
            },
            script: None,
            script_path: None,
            timeout_seconds: default_request_timeout(),
        }
    }

    /// Loads the mock script from disk, if configured.
    pub fn load_script(&self) -> Result<MockScript, LlmError> {
        match (&self.script, &self.script_path) {
            (Some(script), _) => Ok(script.clone()),
            (None, Some(path)) => MockScript::load(path),
            (None, None) => Ok(MockScript::default()),
        }
    }

    /// A fresh backend. Mock backends start at the beginning of their script
    /// every time, so sessions never share a cursor.
    pub fn instantiate(&self) -> Result<Box<dyn ChatBackend>, LlmError> {
        self.instantiate_for(None)
    }

    /// Like [`instantiate`](Self::instantiate), selecting the keyed mock
    /// script for `key` when the script has one.
    pub fn instantiate_for(&self, key: Option<&str>) -> Result<Box<dyn ChatBackend>, LlmError> {
        self.descriptor.validate()?;
        Ok(match self.descriptor.kind {
            BackendKind::ScriptedMock => {
                let script = self.load_script()?;
                Box::new(ScriptedMock::with_descriptor(
                    script.responses_for(key).to_vec(),
                    self.descriptor.clone(),
                ))
            }
            BackendKind::RemoteChat => Box::new(RemoteChatBackend::new(self.descriptor.clone(), self.timeout_seconds)?),
            BackendKind::LocalCompletion => {
                Box::new(LocalCompletionBackend::new(self.descriptor.clone(), self.timeout_seconds)?)
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct GenerationResult {
    pub raw_text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub extracted_code: Option<String>,
    pub latency_seconds: f64,
    pub backend: BackendDescriptor,
}

impl GenerationResult {
    pub fn output_class(&self) -> OutputClass {
        if self.extracted_code.is_some() {
            OutputClass::Code
        } else {
            OutputClass::NonCode
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LlmError {
    #[error("backend unreachable: {0}")]
    BackendUnreachable(String),
    #[error("backend returned HTTP {status}: {body}")]
    BackendHttpError { status: u16, body: String },
    #[error("mock script exhausted after {consumed} responses")]
    ScriptExhausted { consumed: usize },
    #[error("unexpected backend response: {0}")]
    MalformedResponse(String),
    #[error("invalid backend configuration: {0}")]
    InvalidBackend(String),
    #[error("invalid generation request: {0}")]
    InvalidRequest(String),
}

/// One text-generation service.
pub trait ChatBackend: Send {
    fn descriptor(&self) -> &BackendDescriptor;

    /// Returns the raw model text for `req`.
    fn complete(&mut self, req: &GenerationRequest) -> Result<String, LlmError>;
}

impl<B: ChatBackend + ?Sized> ChatBackend for Box<B> {
    fn descriptor(&self) -> &BackendDescriptor {
        (**self).descriptor()
    }

    fn complete(&mut self, req: &GenerationRequest) -> Result<String, LlmError> {
        (**self).complete(req)
    }
}

/// Runs one generation, timing it and extracting any code from the output.
pub fn generate(req: &GenerationRequest, backend: &mut dyn ChatBackend) -> Result<GenerationResult, LlmError> {
    req.validate()?;
    let started = Instant::now();
    let raw_text = backend.complete(req)?;
    let latency_seconds = started.elapsed().as_secs_f64();
    tracing::debug!(backend = ?backend.descriptor().kind, latency_seconds, "generation finished");
    Ok(GenerationResult {
        extracted_code: extract_code(&raw_text),
        raw_text,
        latency_seconds,
        backend: backend.descriptor().clone(),
    })
}
